"""Run configuration: a flat ``key = value`` text format.

Blank lines and ``#`` comments are ignored. Unknown keys are rejected.
See :data:`KEYS` (and the README) for the full key list.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .backbone import BackboneConfig
from .fdmt import FDMTConfig
from .losses import LossWeights
from .mda import MDAConfig
from .rdia import RDIAConfig

MODES = ("video", "image", "concat-fusion", "msa-only", "3dcnn-only")
ABLATIONS = ("concat-fusion", "msa-only", "3dcnn-only")

# keys that change how a run executes or what it is evaluated on, not the model it produces
RUNTIME_KEYS = frozenset(
    {"epochs", "data_dir", "deterministic", "eval_every", "data_seed", "train_size", "val_size", "test_size", "real_fraction"}
)


class ValidationError(ValueError):
    """Configuration or dataset inconsistency detected before training."""


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


@dataclass
class RunConfig:
    mode: str = "video"
    image_size: int = 56
    grid: int = 14
    frames: int = 8
    # face depth transformer
    fdmt_embed: int = 32
    fdmt_blocks: int = 2
    fdmt_heads: int = 4
    fdmt_mlp_ratio: int = 4
    # backbone
    backbone_widths: tuple[int, ...] = (8, 16, 16, 32, 32, 32)
    backbone_strides: tuple[int, ...] = (1, 2, 2, 1, 2, 1)
    backbone_hook: int = 3
    # depth attention
    mda_heads: int = 4
    mda_head_dim: int = 8
    mda_mlp_ratio: int = 4
    mda_scale: str = "channels"
    # inconsistency attention
    rdia_chi_widths: tuple[int, ...] = (8, 16)
    rdia_attn_hidden: int = 16
    rdia_corr_dim: int = 16
    rdia_classifier_widths: tuple[int, ...] = (16, 16)
    # objective and optimiser
    alpha: float = 0.7
    beta: float = 0.7
    pmse_reduction: str = "batch_mean"
    depth_offset: int = 50
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 4
    epochs: int = 10
    seed: int = 0
    # data
    data_dir: str = ""
    data_seed: int = 1
    train_size: int = 400
    val_size: int = 0
    test_size: int = 100
    real_fraction: float = 0.5
    deterministic: bool = False
    eval_every: int = 1

    # -- derived component configs ---------------------------------------------

    @property
    def fdmt(self) -> FDMTConfig:
        return FDMTConfig(
            grid=(self.grid, self.grid),
            embed_dim=self.fdmt_embed,
            depth=self.fdmt_blocks,
            heads=self.fdmt_heads,
            mlp_ratio=self.fdmt_mlp_ratio,
            image_size=(self.image_size, self.image_size),
        )

    @property
    def backbone(self) -> BackboneConfig:
        return BackboneConfig(
            widths=tuple(self.backbone_widths),
            strides=tuple(self.backbone_strides),
            hook=self.backbone_hook,
            image_size=(self.image_size, self.image_size),
        )

    @property
    def mda(self) -> MDAConfig:
        return MDAConfig(heads=self.mda_heads, head_dim=self.mda_head_dim, mlp_ratio=self.mda_mlp_ratio, scale=self.mda_scale)

    @property
    def rdia(self) -> RDIAConfig:
        return RDIAConfig(
            chi_widths=tuple(self.rdia_chi_widths),
            attn_hidden=self.rdia_attn_hidden,
            corr_dim=self.rdia_corr_dim,
            classifier_widths=tuple(self.rdia_classifier_widths),
        )

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta)

    @property
    def video(self) -> bool:
        return self.mode != "image"

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.alpha < 0 or self.beta < 0:
            raise ValidationError("alpha and beta must be non-negative")
        if self.frames < 2 and self.video:
            raise ValidationError("video modes need at least two frames")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValidationError("batch_size must be >= 1 and epochs >= 0")
        if self.pmse_reduction not in ("sum", "batch_mean", "mean"):
            raise ValidationError(f"unknown pmse_reduction {self.pmse_reduction!r}")
        if self.data_dir and not Path(self.data_dir).exists():
            raise ValidationError(f"data_dir {self.data_dir} does not exist")
        try:
            self.fdmt, self.backbone, self.mda, self.rdia  # noqa: B018 - constructing validates
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc

    # -- text form ----------------------------------------------------------------

    def to_lines(self, include_runtime: bool = True) -> list[str]:
        lines = []
        for f in fields(self):
            if not include_runtime and f.name in RUNTIME_KEYS:
                continue
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return lines

    def to_text(self) -> str:
        return "\n".join(self.to_lines()) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    def hash(self) -> str:
        """Digest of every model-defining key (runtime keys excluded)."""
        return hashlib.sha256("\n".join(self.to_lines(include_runtime=False)).encode()).hexdigest()[:16]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def diff(self, other: "RunConfig") -> dict[str, tuple]:
        out = {}
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if a != b:
                out[f.name] = (a, b)
        return out

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep:
                raise ValidationError(f"line {lineno}: expected key = value, got {raw!r}")
            if key not in known:
                raise ValidationError(f"line {lineno}: unknown key {key!r}")
            values[key] = _coerce(known[key], value, lineno)
        return cls(**values)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.parse(Path(path).read_text())


def _coerce(f: dataclasses.Field, value: str, lineno: int):
    default = f.default
    try:
        if isinstance(default, bool):
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
        if isinstance(default, tuple):
            return _ints(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise ValidationError(f"line {lineno}: bad value {value!r} for {f.name}") from None
    return value


def full_size_config(**overrides) -> RunConfig:
    """Full-size settings (224x224 input, 12 blocks, 8 heads); far beyond desk-scale CPU budgets."""
    base = RunConfig(
        image_size=224,
        fdmt_embed=128,
        fdmt_blocks=12,
        fdmt_heads=8,
        mda_heads=8,
        lr=3e-4,
    )
    return base.replace(**overrides)


KEYS = tuple(f.name for f in fields(RunConfig))
