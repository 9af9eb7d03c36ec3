"""Datasets, training, evaluation, checkpoints and the gradient-check runner."""

from __future__ import annotations

import csv
import logging
import shutil
import time
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .autodiff import AdamState, Tensor, adam_step, gradcheck, no_grad
from .config import ABLATIONS, RunConfig, ValidationError
from .depth import patch_targets
from .losses import MetricError, acc, auc
from .model import forward, init_params, losses
from .params import Params
from .synthetic import ManifestItem, SpecError, generate_item, load_sequence, make_dataset, read_manifest, save_sequence, write_manifest

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "split", "acc", "auc", "l_c", "l_ssim", "l_pmse", "total")
SCORES_HEADER = ("item_id", "label", "score")
LOSS_KEYS = ("l_c", "l_ssim", "l_pmse", "total")
GRADCHECK_TOLERANCE = 1e-4


class RuntimeFailure(RuntimeError):
    """Training or evaluation failed after validation passed."""


# -- data ---------------------------------------------------------------------------


@dataclass
class SequenceSet:
    """A split held in memory: 8-bit frames, patch targets, labels."""

    ids: list[str]
    frames: np.ndarray  # [N, n, 3, H, W] uint8
    targets: np.ndarray  # [N, n, P]
    labels: np.ndarray  # [N]

    def __len__(self) -> int:
        return len(self.ids)

    def batch(self, idx) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.frames[idx], self.targets[idx], self.labels[idx]


def _pack(items: list[ManifestItem], seqs, cfg: RunConfig) -> SequenceSet:
    grid = (cfg.grid, cfg.grid)
    frames = np.stack([np.moveaxis(s.frames, 0, 1) for s in seqs]).astype(np.uint8)
    targets = np.stack([patch_targets(s.depth, s.masks, grid, cfg.depth_offset) for s in seqs])
    labels = np.array([s.label for s in seqs], dtype=np.int64)
    return SequenceSet([it.item_id for it in items], frames, targets, labels)


def dataset_items(cfg: RunConfig) -> list[ManifestItem]:
    if cfg.data_dir:
        items, _ = read_manifest(Path(cfg.data_dir) / "manifest.txt")
        return items
    sizes = {"train": cfg.train_size, "val": cfg.val_size, "test": cfg.test_size}
    return make_dataset(sum(sizes.values()), cfg.real_fraction, cfg.data_seed, sizes)


def load_split(cfg: RunConfig, split: str) -> SequenceSet:
    """Load ``split`` from ``cfg.data_dir`` if set, else generate it from ``cfg.data_seed``."""
    items = [it for it in dataset_items(cfg) if it.split == split]
    if not items:
        raise ValidationError(f"split {split!r} is empty")
    size = (cfg.image_size, cfg.image_size)
    if cfg.data_dir:
        seqs = [load_sequence(Path(cfg.data_dir) / "items" / it.item_id, it.label) for it in items]
    else:
        seqs = [generate_item(it, size, cfg.frames) for it in items]
    for it, s in zip(items, seqs):
        if s.frames.shape[1:] != (cfg.frames,) + size:
            raise ValidationError(f"{it.item_id}: frames {s.frames.shape} do not match config ({cfg.frames} x {size})")
    return _pack(items, seqs, cfg)


def write_dataset(cfg: RunConfig, out: str | Path) -> list[ManifestItem]:
    """Generate every split into ``out/items/<id>`` plus ``out/manifest.txt``."""
    out = Path(out)
    sizes = {"train": cfg.train_size, "val": cfg.val_size, "test": cfg.test_size}
    items = make_dataset(sum(sizes.values()), cfg.real_fraction, cfg.data_seed, sizes)
    for it in items:
        save_sequence(generate_item(it, (cfg.image_size, cfg.image_size), cfg.frames), out / "items" / it.item_id)
    write_manifest(items, out / "manifest.txt", data_seed=cfg.data_seed, image_size=cfg.image_size, frames=cfg.frames)
    return items


# -- checkpoints --------------------------------------------------------------------


@dataclass
class Checkpoint:
    params: Params
    optimizer: AdamState
    epoch: int
    config_hash: str
    config: RunConfig


def _state_params(arrays: dict[str, np.ndarray], dtype) -> Params:
    p = Params(dtype)
    for k, v in arrays.items():
        p[k] = v
    return p


def save_checkpoint(directory: str | Path, params: Params, opt: AdamState, epoch: int, cfg: RunConfig) -> Path:
    directory = Path(directory)
    tmp = directory.with_name(directory.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    params.save(tmp / "params")
    _state_params(opt.m, params.dtype).save(tmp / "adam_m")
    _state_params(opt.v, params.dtype).save(tmp / "adam_v")
    cfg.save(tmp / "config.txt")
    (tmp / "state.txt").write_text(f"epoch = {epoch}\nstep = {opt.step}\nconfig_hash = {cfg.hash()}\n")
    if directory.exists():
        shutil.rmtree(directory)
    tmp.rename(directory)
    return directory


def _read_state(path: Path) -> dict[str, str]:
    out = {}
    for line in path.read_text().splitlines():
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def resolve_checkpoint(path: str | Path) -> Path:
    """Accept a checkpoint directory or a run directory (latest checkpoint)."""
    path = Path(path)
    if (path / "state.txt").exists():
        return path
    ckpts = sorted((path / "checkpoints").glob("epoch-*")) if (path / "checkpoints").is_dir() else []
    ckpts = [c for c in ckpts if (c / "state.txt").exists()]
    if not ckpts:
        raise ValidationError(f"no checkpoint found at {path}")
    return ckpts[-1]


def load_checkpoint(path: str | Path, cfg: RunConfig | None = None) -> Checkpoint:
    """Load a checkpoint; with ``cfg`` given, its hash must match the stored one."""
    path = resolve_checkpoint(path)
    state = _read_state(path / "state.txt")
    stored = RunConfig.load(path / "config.txt")
    if state["config_hash"] != stored.hash():
        raise ValidationError(f"checkpoint {path} is corrupt: stored config does not match its hash")
    if cfg is not None and cfg.hash() != state["config_hash"]:
        diff = {k: v for k, v in cfg.diff(stored).items()}
        raise ValidationError(f"config hash {cfg.hash()} does not match checkpoint {state['config_hash']} (differs in {sorted(diff)})")
    params = Params.load(path / "params")
    opt = AdamState(step=int(state["step"]), m=Params.load(path / "adam_m").arrays(), v=Params.load(path / "adam_v").arrays())
    return Checkpoint(params, opt, int(state["epoch"]), state["config_hash"], stored)


# -- evaluation ---------------------------------------------------------------------


@dataclass
class EvalResult:
    ids: list[str]
    labels: np.ndarray
    scores: np.ndarray
    losses: dict[str, float]
    acc: float
    auc: float


def _safe_auc(scores, labels) -> float:
    try:
        return auc(scores, labels)
    except MetricError:
        return float("nan")


def evaluate(params: Params, cfg: RunConfig, data: SequenceSet, batch_size: int | None = None) -> EvalResult:
    """Score every item in ``data`` in order; parameters are not touched."""
    if len(data) == 0:
        raise ValidationError("cannot evaluate an empty split")
    bs = batch_size or cfg.batch_size
    scores, sums = [], dict.fromkeys(LOSS_KEYS, 0.0)
    with no_grad():
        for start in range(0, len(data), bs):
            idx = np.arange(start, min(start + bs, len(data)))
            frames, targets, labels = data.batch(idx)
            out = forward(params, cfg, frames)
            terms = losses(out, cfg, labels, targets).values()
            for k in LOSS_KEYS:
                sums[k] += terms[k] * idx.size
            scores.append(out.scores.astype(np.float64))
    s = np.concatenate(scores)
    mean_losses = {k: v / len(data) for k, v in sums.items()}
    return EvalResult(list(data.ids), data.labels.copy(), s, mean_losses, acc(s, data.labels), _safe_auc(s, data.labels))


def write_scores(path: str | Path, result: EvalResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORES_HEADER)
        for i, y, s in zip(result.ids, result.labels, result.scores):
            w.writerow((i, int(y), repr(float(s))))


def read_scores(path: str | Path) -> list[tuple[str, int, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(r["item_id"], int(r["label"]), float(r["score"])) for r in rows]


# -- training -----------------------------------------------------------------------


@dataclass
class TrainResult:
    out: Path
    params: Params
    history: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None
    seconds: float = 0.0


def _metrics_row(epoch: int, split: str, a: float, u: float, terms: dict[str, float]) -> dict:
    return {"epoch": epoch, "split": split, "acc": a, "auc": u, **{k: terms[k] for k in LOSS_KEYS}}


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["epoch"] = int(r["epoch"])
        for k in METRICS_HEADER[2:]:
            r[k] = float(r[k])
    return rows


def write_run_manifest(out: Path, cfg: RunConfig) -> None:
    lines = [
        f"version = {__version__}",
        f"mode = {cfg.mode}",
        f"seed = {cfg.seed}",
        f"config_hash = {cfg.hash()}",
    ]
    if cfg.mode in ABLATIONS:
        full = cfg.replace(mode="video")
        lines.append(f"full_config_hash = {full.hash()}")
        for key, (mine, theirs) in sorted(full.diff(cfg).items()):
            lines.append(f"diff.{key} = {mine} -> {theirs}")
    (out / "run_manifest.txt").write_text("\n".join(lines) + "\n")


def _limits(cfg: RunConfig):
    return threadpool_limits(limits=1) if cfg.deterministic else nullcontext()


def train(
    cfg: RunConfig,
    out: str | Path,
    train_data: SequenceSet | None = None,
    eval_data: SequenceSet | None = None,
    progress: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Optimise the full objective end to end; one metrics row per split per epoch."""
    cfg.validate()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    eval_split = "val" if cfg.val_size > 0 else "test"
    try:
        train_data = train_data if train_data is not None else load_split(cfg, "train")
        if eval_data is None and cfg.eval_every > 0:
            eval_data = load_split(cfg, eval_split)
    except (SpecError, FileNotFoundError) as exc:
        raise ValidationError(str(exc)) from exc
    if len(train_data) == 0:
        raise ValidationError("training split is empty")
    expected = (cfg.frames, 3, cfg.image_size, cfg.image_size)
    if train_data.frames.shape[1:] != expected:
        raise ValidationError(f"training frames {train_data.frames.shape[1:]} do not match config {expected}")
    if train_data.targets.shape[2] != cfg.grid * cfg.grid:
        raise ValidationError(f"targets have {train_data.targets.shape[2]} patches, config grid gives {cfg.grid**2}")

    cfg.save(out / "config.txt")
    write_run_manifest(out, cfg)
    metrics_path = out / "metrics.csv"
    with open(metrics_path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerow(METRICS_HEADER)

    t0 = time.perf_counter()
    params = init_params(cfg)
    opt = AdamState()
    order_rng = np.random.default_rng([cfg.seed, 0x5EED])
    result = TrainResult(out, params)
    with _limits(cfg):
        for epoch in range(1, cfg.epochs + 1):
            perm = order_rng.permutation(len(train_data))
            sums, seen, ep_scores = dict.fromkeys(LOSS_KEYS, 0.0), 0, np.empty(len(train_data))
            for start in range(0, len(perm), cfg.batch_size):
                idx = perm[start : start + cfg.batch_size]
                frames, targets, labels = train_data.batch(idx)
                params.zero_grad()
                fwd = forward(params, cfg, frames)
                terms = losses(fwd, cfg, labels, targets)
                values = terms.values()
                if not np.isfinite(values["total"]):
                    raise RuntimeFailure(f"non-finite loss at epoch {epoch}, step {opt.step + 1}")
                terms.total.backward()
                adam_step(params.arrays(), params.grads(), opt, lr=cfg.lr, weight_decay=cfg.weight_decay)
                for k in LOSS_KEYS:
                    sums[k] += values[k] * idx.size
                seen += idx.size
                ep_scores[idx] = fwd.scores
            rows = [
                _metrics_row(
                    epoch,
                    "train",
                    acc(ep_scores, train_data.labels),
                    _safe_auc(ep_scores, train_data.labels),
                    {k: v / seen for k, v in sums.items()},
                )
            ]
            if eval_data is not None and cfg.eval_every > 0 and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
                ev = evaluate(params, cfg, eval_data)
                rows.append(_metrics_row(epoch, eval_split, ev.acc, ev.auc, ev.losses))
            with open(metrics_path, "a", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                for r in rows:
                    w.writerow([_fmt(r[k]) for k in METRICS_HEADER])
            result.history.extend(rows)
            result.checkpoint = save_checkpoint(out / "checkpoints" / f"epoch-{epoch:03d}", params, opt, epoch, cfg)
            for r in rows:
                log.info("epoch %d %s acc=%.4f auc=%.4f total=%.4f", r["epoch"], r["split"], r["acc"], r["auc"], r["total"])
                if progress is not None:
                    progress(r)
    result.seconds = time.perf_counter() - t0
    return result


def evaluate_checkpoint(
    checkpoint: str | Path, split: str = "test", out: str | Path | None = None, cfg: RunConfig | None = None
) -> EvalResult:
    """Load a checkpoint, score one split, optionally write ``scores.csv``."""
    ckpt = load_checkpoint(checkpoint, cfg)
    run_cfg = cfg if cfg is not None else ckpt.config
    with _limits(run_cfg):
        result = evaluate(ckpt.params, run_cfg, load_split(run_cfg, split))
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_scores(out / "scores.csv", result)
    return result


# -- gradient checks ----------------------------------------------------------------


def _inject_fault(t: Tensor) -> Tensor:
    """Identity whose backward is deliberately wrong (offset of 10% of max(1, |g|))."""

    def backward(g):
        return (g + 0.1 * np.maximum(1.0, np.abs(g)),)

    return Tensor._make(t.data.copy(), (t,), backward, "fault")


@dataclass
class GradcheckRow:
    component: str
    max_rel_error: float
    checked_inputs: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < GRADCHECK_TOLERANCE


def _gradcheck_cases(seed: int) -> dict[str, Callable[..., tuple[Callable, list[Tensor]]]]:
    """Each case takes ``tap`` (applied to its first input) and returns ``(fn, inputs)``."""
    from .autodiff import mean, sum_
    from .backbone import BackboneConfig, backbone_forward, init_backbone
    from .fdmt import FDMTConfig, fdmt_forward, init_fdmt
    from .losses import cross_entropy, patch_mse, ssim_loss
    from .mda import MDAConfig, init_mda, mda_forward
    from .params import component_rng
    from .rdia import RDIAConfig, init_rdia, rdia_forward

    f64 = np.float64

    def pset(arrays: dict[str, np.ndarray]) -> Params:
        return _state_params(arrays, f64)

    def leaf(rng, shape, scale=1.0):
        return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)

    def fdmt_case(tap):
        rng = component_rng(seed, "gc.fdmt")
        cfg = FDMTConfig(grid=(2, 2), embed_dim=8, depth=2, heads=2, mlp_ratio=2, image_size=(8, 8))
        p = pset(init_fdmt(cfg, rng))
        x = leaf(rng, (2, 3, 8, 8), 0.5)
        w1, w2 = rng.standard_normal((2, 4)), rng.standard_normal((2, 4, 8))

        def fn(*_):
            o = fdmt_forward(tap(x), p, cfg)
            return sum_(o.depth_pred * Tensor(w1)) + mean(o.depth_feature * Tensor(w2))

        return fn, [x] + list(p.values())

    def backbone_case(tap):
        rng = component_rng(seed, "gc.backbone")
        cfg = BackboneConfig(widths=(3, 4, 4), strides=(1, 2, 1), hook=1, image_size=(8, 8))
        p = pset(init_backbone(cfg, rng))
        x = leaf(rng, (2, 3, 8, 8), 0.5)
        wl = rng.standard_normal((2, 2))

        def fn(*_):
            o = backbone_forward(tap(x), p, cfg)
            return sum_(o.logits * Tensor(wl)) + mean(o.rgb_feature * o.rgb_feature)

        return fn, [x] + list(p.values())

    def mda_case(tap):
        rng = component_rng(seed, "gc.mda")
        cfg = MDAConfig(heads=2, head_dim=3, mlp_ratio=2)
        p = pset(init_mda(cfg, 4, 5, rng))
        rgb, depth = leaf(rng, (2, 4, 3, 3)), leaf(rng, (2, 5, 3, 3))
        w = rng.standard_normal((2, 4, 3, 3))

        def fn(*_):
            return sum_(mda_forward(depth, tap(rgb), p, cfg).enhanced * Tensor(w))

        return fn, [rgb, depth] + list(p.values())

    def rdia_case(tap):
        rng = component_rng(seed, "gc.rdia")
        cfg = RDIAConfig(chi_widths=(3, 3), attn_hidden=3, corr_dim=3, classifier_widths=(3, 3))
        c = 4
        p = pset(init_rdia(cfg, c, rng))
        rgb, depth = leaf(rng, (1, 3, 3, 8, 8), 0.5), leaf(rng, (1, 1, 3, 4, 4), 0.5)
        feats = leaf(rng, (1, c, 3, 4, 4))
        w = rng.standard_normal((1, c, 3, 4, 4))

        def fn(*_):
            o = rdia_forward(tap(rgb), depth, feats, p, (2, 1, 1))
            return sum_(o.enhanced * Tensor(w))

        return fn, [rgb, depth, feats] + list(p.values())

    def ssim_case(tap):
        rng = component_rng(seed, "gc.ssim")
        a, b = Tensor(rng.uniform(0, 1, (3, 16)), requires_grad=True), Tensor(rng.uniform(0, 1, (3, 16)), requires_grad=True)
        return (lambda *_: ssim_loss(tap(a), b)), [a, b]

    def pmse_case(tap):
        rng = component_rng(seed, "gc.pmse")
        a, b = leaf(rng, (3, 16)), leaf(rng, (3, 16))
        return (lambda *_: patch_mse(tap(a), b)), [a, b]

    def ce_case(tap):
        rng = component_rng(seed, "gc.ce")
        logits, labels = leaf(rng, (5, 2)), rng.integers(0, 2, 5)
        return (lambda *_: cross_entropy(tap(logits), labels)), [logits]

    return {
        "fdmt": fdmt_case,
        "backbone": backbone_case,
        "mda": mda_case,
        "rdia": rdia_case,
        "ssim_loss": ssim_case,
        "patch_mse": pmse_case,
        "cross_entropy": ce_case,
    }


GRADCHECK_COMPONENTS = ("fdmt", "backbone", "mda", "rdia", "ssim_loss", "patch_mse", "cross_entropy")


def gradcheck_all(seed: int = 0, max_checks: int | None = 24, fault: str | None = None) -> list[GradcheckRow]:
    """Finite-difference check of every registered composite at 64-bit toy sizes.

    ``fault`` names a component whose first input gets a deliberately wrong
    backward, to confirm the checker notices.
    """
    cases = _gradcheck_cases(seed)
    if fault is not None and fault not in cases:
        raise ValidationError(f"unknown gradcheck component {fault!r}; choose from {sorted(cases)}")
    rows = []
    for name in GRADCHECK_COMPONENTS:
        t0 = time.perf_counter()
        fn, inputs = cases[name](_inject_fault if name == fault else (lambda t: t))
        err = gradcheck(fn, inputs, max_checks=max_checks, seed=seed)
        rows.append(GradcheckRow(name, err, sum(t.requires_grad for t in inputs), time.perf_counter() - t0))
    return rows


def write_gradcheck_report(path: str | Path, rows: list[GradcheckRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("component", "max_rel_error", "checked_inputs", "seconds", "status"))
        for r in rows:
            w.writerow((r.component, f"{r.max_rel_error:.3e}", r.checked_inputs, f"{r.seconds:.2f}", "ok" if r.passed else "FAIL"))
