"""Pure-numpy versions of the compiled kernels.

Used when the extension module is unavailable (or forced via the
``GRAPHODE_KERNELS`` environment variable). Same accumulate-into-``out``
contract as the compiled counterparts; floating-point sums may differ from
the compiled backend at the last few ulps because numpy reduces pairwise.
"""

import numpy as np


def csr_matmul(indptr, indices, data, x, out):
    counts = np.diff(indptr)
    rows = np.flatnonzero(counts)
    if rows.size == 0:
        return
    contrib = data[:, None] * x[indices]
    # reduceat over the starts of the non-empty rows: each segment runs to the
    # next start, which is exactly that row's end because the rows in between
    # are empty.
    out[rows] += np.add.reduceat(contrib, indptr[rows], axis=0)


def scatter_add_rows(src, idx, out):
    np.add.at(out, idx, src)
