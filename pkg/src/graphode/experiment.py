"""Experiment driver: config files, training runs, ablation grids, exports.

Config files are line-oriented ``key = value`` text. Unknown keys are hard
errors so a typo cannot silently fall back to a default. Grid files use the
same syntax but allow comma-separated value lists, expanded as a cross
product in file order.
"""

from __future__ import annotations

import csv
import itertools
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

from . import metrics, model
from .attention import edge_attention
from .data import InteractionLog, chronological_split, parse_interactions
from .model import (FitConfig, ModelParams, SignalPolicy, fit, load_checkpoint,
                    save_checkpoint)
from .system import HybridSystem, build_hybrid_system

METRICS_HEADER = ["run_id", "dataset", "variant", "policy", "K", "eps", "seed",
                  "epoch", "split", "recall@5", "recall@10", "mrr", "loss", "nfe",
                  "wall_seconds"]

MASK_MODES = ("train", "train+valid", "none")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dataset: str = ""
    format: str = "movielens"
    k: int = 3
    eps: float = 0.2
    d: int = 64
    d_t: int = 16
    lr: float = 0.001
    weight_decay: float = 0.001
    epochs: int = 200
    patience: int = 20
    batch_size: int = 2048
    seed: int = 0
    variant: str = "full"
    ode_view: str = "current"
    attn_view: str = "previous"
    mask_seen: str = "train+valid"
    per_user: bool = False
    out_dir: str = "runs/default"
    run_id: str = ""

    def __post_init__(self):
        if self.format not in ("movielens", "amazon"):
            raise ConfigError(f"unknown format '{self.format}'")
        if self.variant not in model.VARIANTS:
            raise ConfigError(f"unknown variant '{self.variant}'")
        if self.mask_seen not in MASK_MODES:
            raise ConfigError(f"mask_seen must be one of {MASK_MODES}")
        if not self.run_id:
            self.run_id = (f"{self.variant}-{self.ode_view}-{self.attn_view}"
                           f"-k{self.k}-eps{self.eps:g}-seed{self.seed}")

    def policy(self) -> SignalPolicy:
        return SignalPolicy(self.ode_view, self.attn_view)

    def fit_config(self) -> FitConfig:
        return FitConfig(k=self.k, d=self.d, d_t=self.d_t, lr=self.lr,
                         weight_decay=self.weight_decay, step=self.eps,
                         epochs=self.epochs, patience=self.patience,
                         batch_size=self.batch_size, seed=self.seed,
                         variant=self.variant, policy=self.policy())

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, raw: str):
    ftype = _FIELD_TYPES[key]
    if ftype == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot read '{raw}' as a boolean for '{key}'")
    if ftype == "int":
        return int(raw)
    if ftype == "float":
        return float(raw)
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Strict ``key = value`` lines; '#' starts a comment."""
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'")
        out[key] = raw
    return out


def load_config(path) -> ExperimentConfig:
    raw = parse_config_text(Path(path).read_text(), source=str(path))
    try:
        return ExperimentConfig(**{k: _coerce(k, v) for k, v in raw.items()})
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None


def expand_grid(path) -> list[ExperimentConfig]:
    """Grid file: values may be comma lists; rows are the cross product."""
    raw = parse_config_text(Path(path).read_text(), source=str(path))
    keys = list(raw)
    options = [[v.strip() for v in raw[k].split(",")] for k in keys]
    configs = []
    for combo in itertools.product(*options):
        kwargs = {k: _coerce(k, v) for k, v in zip(keys, combo)}
        configs.append(ExperimentConfig(**kwargs))
    return configs


def evaluate(params: ModelParams, system: HybridSystem, eval_log: InteractionLog,
             train: InteractionLog, valid: InteractionLog | None = None,
             mask_seen: str = "train+valid", policy: SignalPolicy = model.ORIGIN,
             variant: str = "full", eps: float = 0.2, per_user: bool = False,
             views: model.GraphViews | None = None):
    """Score one split: returns (results, skips, summary dict).

    All graphs come from train edges only; valid interactions only ever act
    as extra mask entries in the train+valid mode.
    """
    if mask_seen not in MASK_MODES:
        raise ConfigError(f"mask_seen must be one of {MASK_MODES}")
    h, _, nfe = model.embed(system, params, policy, variant, eps, views)
    index = model.build_train_index(train)
    mask_extra = None
    if mask_seen == "train+valid" and valid is not None:
        mask_extra = {}
        for u, i in zip(valid.users.tolist(), valid.items.tolist()):
            mask_extra.setdefault(u, set()).add(i)
    results, skips = metrics.rank_interactions(
        h, eval_log.users, eval_log.items, items_lo=index.items_lo,
        items_hi=index.items_hi, seen_by_user=index.by_user,
        mask_extra=mask_extra, mask_seen=(mask_seen != "none"))
    if results:
        summary = metrics.summarize(results, per_user=per_user)
    else:
        summary = {"recall@5": 0.0, "recall@10": 0.0, "mrr": 0.0}
    summary["nfe"] = nfe
    summary["n_ranked"] = len(results)
    summary["n_skipped"] = skips.total
    return results, skips, summary


def write_metrics_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _metric_row(cfg: ExperimentConfig, epoch, split, r5, r10, mrr_val, loss, nfe,
                wall) -> dict:
    return {"run_id": cfg.run_id, "dataset": Path(cfg.dataset).name,
            "variant": cfg.variant, "policy": cfg.policy().label(), "K": cfg.k,
            "eps": cfg.eps, "seed": cfg.seed, "epoch": epoch, "split": split,
            "recall@5": f"{r5:.6f}", "recall@10": f"{r10:.6f}",
            "mrr": f"{mrr_val:.6f}", "loss": f"{loss:.6f}", "nfe": nfe,
            "wall_seconds": f"{wall:.3f}"}


def load_splits(cfg: ExperimentConfig):
    log = parse_interactions(cfg.dataset, cfg.format)
    return chronological_split(log)


def run_experiment(cfg: ExperimentConfig, quiet: bool = False) -> dict:
    """Train per config, evaluate the test split with the best parameters,
    write checkpoint + metrics CSV into out_dir, and return a summary."""
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_log, valid_log, test_log = load_splits(cfg)

    t0 = time.perf_counter()

    def log_fn(row):
        if not quiet:
            print(f"epoch {row['epoch']:3d}  loss {row['loss']:.4f}  "
                  f"valid mrr {row['mrr']:.4f}", flush=True)

    result = fit(train_log, valid_log, cfg.fit_config(), log_fn=log_fn)
    rows = [_metric_row(cfg, r["epoch"], "valid", r["recall@5"], r["recall@10"],
                        r["mrr"], r["loss"], r["nfe"], r["wall_seconds"])
            for r in result.log]

    _, skips, summary = evaluate(result.params, result.system, test_log, train_log,
                                 valid_log, mask_seen=cfg.mask_seen,
                                 policy=cfg.policy(), variant=cfg.variant,
                                 eps=cfg.eps, per_user=cfg.per_user)
    wall = time.perf_counter() - t0
    rows.append(_metric_row(cfg, result.best_epoch, "test", summary["recall@5"],
                            summary["recall@10"], summary["mrr"], float("nan"),
                            summary["nfe"], wall))
    write_metrics_csv(out_dir / "metrics.csv", rows)
    save_checkpoint(out_dir / "checkpoint.npz", result.params, cfg.seed,
                    cfg.as_dict())
    summary.update(best_epoch=result.best_epoch, best_valid_mrr=result.best_mrr,
                   wall_seconds=wall, checkpoint=str(out_dir / "checkpoint.npz"),
                   skipped_cold_users=skips.cold_users,
                   skipped_cold_items=skips.cold_items,
                   skipped_masked_targets=skips.masked_targets)
    return summary


def run_ablation(configs: list[ExperimentConfig], out_path,
                 quiet: bool = True) -> tuple[list[dict], list[tuple[str, str]]]:
    """Train/evaluate every config; one CSV row per successful cell. A cell
    failure is recorded and the grid moves on."""
    rows: list[dict] = []
    failures: list[tuple[str, str]] = []
    for cfg in configs:
        try:
            t0 = time.perf_counter()
            train_log, valid_log, test_log = load_splits(cfg)
            result = fit(train_log, valid_log, cfg.fit_config())
            _, _, summary = evaluate(result.params, result.system, test_log,
                                     train_log, valid_log, mask_seen=cfg.mask_seen,
                                     policy=cfg.policy(), variant=cfg.variant,
                                     eps=cfg.eps, per_user=cfg.per_user)
            rows.append(_metric_row(cfg, result.best_epoch, "test",
                                    summary["recall@5"], summary["recall@10"],
                                    summary["mrr"], float("nan"), summary["nfe"],
                                    time.perf_counter() - t0))
        except Exception as exc:  # keep the sweep alive; report at the end
            failures.append((cfg.run_id, f"{type(exc).__name__}: {exc}"))
            if not quiet:
                print(f"[ablate] {cfg.run_id} failed: {exc}", file=sys.stderr)
    write_metrics_csv(out_path, rows)
    if failures:
        fail_path = Path(out_path).with_suffix(".failures.log")
        fail_path.write_text("".join(f"{rid}\t{msg}\n" for rid, msg in failures))
    return rows, failures


def export_embeddings(checkpoint_path, out_path) -> int:
    """CSV of every snapshot: node_id,kind,layer,dim_0..dim_{d-1}."""
    params, meta = load_checkpoint(checkpoint_path)
    cfg = ExperimentConfig(**meta["config"])
    train_log, _, _ = load_splits(cfg)
    system = build_hybrid_system(train_log, cfg.k)
    _, snaps, _ = model.embed(system, params, cfg.policy(), cfg.variant, cfg.eps)
    n_users = system.n_users
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "kind", "layer"]
                        + [f"dim_{j}" for j in range(params.d)])
        for layer, snap in enumerate(snaps):
            for node in range(system.n_nodes):
                kind = "user" if node < n_users else "item"
                writer.writerow([node, kind, layer]
                                + [repr(float(v)) for v in snap[node]])
    return len(snaps) * system.n_nodes


def export_attention(checkpoint_path, out_path) -> int:
    """CSV of per-edge attention weights: layer,user,item,edge_time,weight.

    The weight is for the user-as-destination direction of each edge in the
    layer's aggregation view, evaluated at the layer's post-ODE state.
    """
    params, meta = load_checkpoint(checkpoint_path)
    cfg = ExperimentConfig(**meta["config"])
    train_log, _, _ = load_splits(cfg)
    system = build_hybrid_system(train_log, cfg.k)
    views = model.GraphViews(system)
    fr = model.forward(system, params, cfg.policy(), cfg.variant, cfg.eps, views)
    count = 0
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "user", "item", "edge_time", "weight"])
        for k in range(params.k):
            msg = views.messages(cfg.policy().attn_view, k)
            if msg is None:
                continue
            h_plus = fr.pre_aggregate[k].data
            weights = edge_attention(h_plus, msg, params.layers[k], params.encoder)
            n_und = msg.dst.shape[0] // 2  # first half is the user-destination copy
            for e in range(n_und):
                writer.writerow([k, int(msg.dst[e]), int(msg.src[e]),
                                 repr(float(msg.times[e])),
                                 repr(float(weights[e]))])
                count += 1
    return count
