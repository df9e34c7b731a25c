"""Compiled and fallback kernels must agree on random inputs."""

import numpy as np
import pytest

from graphode import kernels
from graphode.kernels import _fallback

from helpers import random_bipartite_adjacency


def test_backend_reports_something():
    assert kernels.BACKEND in ("compiled", "fallback")


def test_get_backend_names():
    matmul, scatter = kernels.get_backend("fallback")
    assert matmul is _fallback.csr_matmul
    assert scatter is _fallback.scatter_add_rows
    with pytest.raises(ValueError):
        kernels.get_backend("gpu")


@pytest.mark.parametrize("seed", range(5))
def test_csr_matmul_matches_dense_and_fallback(seed):
    rng = np.random.default_rng(seed)
    adj = random_bipartite_adjacency(rng, 7, 9, 20)
    x = rng.normal(size=(adj.n, 5))
    dense = adj.to_dense() @ x

    out_active = np.zeros_like(dense)
    kernels.csr_matmul(adj.indptr, adj.indices, adj.data,
                       np.ascontiguousarray(x), out_active)
    assert np.max(np.abs(out_active - dense)) < 1e-12

    out_fb = np.zeros_like(dense)
    _fallback.csr_matmul(adj.indptr, adj.indices, adj.data,
                         np.ascontiguousarray(x), out_fb)
    assert np.max(np.abs(out_fb - dense)) < 1e-12


def test_csr_matmul_accumulates_into_out():
    rng = np.random.default_rng(0)
    adj = random_bipartite_adjacency(rng, 3, 3, 5)
    x = rng.normal(size=(adj.n, 2))
    base = rng.normal(size=(adj.n, 2))
    out = base.copy()
    kernels.csr_matmul(adj.indptr, adj.indices, adj.data,
                       np.ascontiguousarray(x), out)
    assert np.allclose(out, base + adj.to_dense() @ x)


@pytest.mark.parametrize("seed", range(5))
def test_scatter_add_rows_matches_loop_and_fallback(seed):
    rng = np.random.default_rng(seed)
    n, e, d = 11, 40, 3
    src = rng.normal(size=(e, d))
    idx = rng.integers(0, n, e).astype(np.int32)

    expect = np.zeros((n, d))
    for row, i in enumerate(idx):
        expect[i] += src[row]

    out = np.zeros((n, d))
    kernels.scatter_add_rows(src, idx, out)
    assert np.max(np.abs(out - expect)) < 1e-14

    out_fb = np.zeros((n, d))
    _fallback.scatter_add_rows(src, idx, out_fb)
    assert np.max(np.abs(out_fb - expect)) < 1e-14


def test_duplicate_indices_accumulate():
    src = np.array([[1.0], [2.0], [4.0]])
    idx = np.array([0, 0, 0], dtype=np.int32)
    out = np.zeros((2, 1))
    kernels.scatter_add_rows(src, idx, out)
    assert out[0, 0] == 7.0 and out[1, 0] == 0.0
