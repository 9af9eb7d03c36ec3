"""Seeded synthetic real/fake face sequences with exact depth and masks.

A "face" is a textured, Lambert-shaded ellipsoid drifting smoothly over a
static background. A fake replaces an inner elliptical region with texture
and colour from a second seeded scene. That region is flat-shaded, carries
no depth, and is re-aligned independently on every frame, so its depth
residuals jump at the region boundary while RGB residuals stay comparable
to real footage.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from .autodiff import fdtn
from .depth import compute_fake_mask, ground_truth_depth, quantize_depth
from .params import component_rng

TEXTURE_SIZE = 128


class SpecError(ValueError):
    """A scene specification violates its invariants."""


@dataclass(frozen=True)
class Manipulation:
    source_seed: int
    offset: tuple[float, float] = (0.0, 0.1)  # region centre relative to the face, in face radii (x, y)
    radii: tuple[float, float] = (0.55, 0.5)  # region radii relative to the face radii
    softness: float = 1.0  # blend width in pixels
    jitter: float = 0.5  # per-frame misalignment std in pixels
    mode: str = "zero"  # "zero": no depth in the region; "boundary": depth of a different surface

    def __post_init__(self):
        if self.mode not in ("zero", "boundary"):
            raise SpecError(f"unknown manipulation mode {self.mode!r}")


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    size: tuple[int, int] = (56, 56)
    frames: int = 8
    center: tuple[float, float] = (28.0, 28.0)  # (x, y) at frame 0
    radii: tuple[float, float] = (16.0, 19.0)  # (x, y)
    peak_depth: float = 190.0
    skin: tuple[float, float, float] = (190.0, 140.0, 115.0)
    background: tuple[float, float, float] = (60.0, 70.0, 80.0)
    texture_sigma: float = 1.5
    texture_amplitude: float = 0.12
    light: tuple[float, float, float] = (0.3, -0.4, 1.0)
    velocity: tuple[float, float] = (0.3, 0.2)  # pixels per frame
    noise_std: float = 0.0
    manipulation: Manipulation | None = None

    @property
    def fake(self) -> bool:
        return self.manipulation is not None

    def validate(self, offset: int = 50) -> None:
        h, w = self.size
        if self.frames < 1:
            raise SpecError("need at least one frame")
        if not offset < self.peak_depth <= 255:
            raise SpecError(f"peak depth {self.peak_depth} outside ({offset}, 255]")
        for t in (0, self.frames - 1):
            cx = self.center[0] + self.velocity[0] * t
            cy = self.center[1] + self.velocity[1] * t
            if cx - self.radii[0] < 0 or cx + self.radii[0] > w - 1 or cy - self.radii[1] < 0 or cy + self.radii[1] > h - 1:
                raise SpecError(f"face leaves the frame at t={t}")


@dataclass
class LabeledSequence:
    frames: np.ndarray  # [3, n, H, W], integer-valued in [0, 255]
    depth: np.ndarray  # [n, H, W] raw 8-bit depth
    masks: np.ndarray  # [n, H, W] binary
    label: int  # 1 = fake
    originals: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.frames.shape[1]


def _texture(rng: np.random.Generator, sigma: float) -> np.ndarray:
    tex = gaussian_filter(rng.normal(size=(TEXTURE_SIZE, TEXTURE_SIZE)), sigma, mode="wrap")
    return tex / tex.std()


def _sample(tex: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    c = TEXTURE_SIZE / 2.0
    return map_coordinates(tex, [ys + c, xs + c], order=1, mode="wrap")


def sample_scene(seed: int, fake: bool, size: tuple[int, int] = (56, 56), frames: int = 8) -> SceneSpec:
    """Draw a random valid scene for ``seed`` (a fake uses a derived source seed)."""
    rng = component_rng(seed, "scene")
    h, w = size
    scale = min(h, w) / 56.0
    radii = (rng.uniform(14.0, 18.0) * scale, rng.uniform(17.0, 21.0) * scale)
    speed = rng.uniform(0.25, 0.6) * scale
    angle = rng.uniform(0.0, 2 * np.pi)
    velocity = (speed * np.cos(angle), speed * np.sin(angle))
    drift = (velocity[0] * (frames - 1), velocity[1] * (frames - 1))
    center = (
        w / 2.0 - drift[0] / 2.0 + rng.uniform(-1.5, 1.5) * scale,
        h / 2.0 - drift[1] / 2.0 + rng.uniform(-1.5, 1.5) * scale,
    )
    skin = tuple(float(v) for v in rng.uniform([160, 110, 85], [215, 165, 135]))
    background = tuple(float(v) for v in rng.uniform(30, 100, size=3))
    light = (float(rng.uniform(-0.5, 0.5)), float(rng.uniform(-0.5, 0.5)), 1.0)
    manipulation = None
    if fake:
        manipulation = Manipulation(
            source_seed=int(rng.integers(0, 2**32)),
            offset=(float(rng.uniform(-0.15, 0.15)), float(rng.uniform(-0.05, 0.2))),
            radii=(float(rng.uniform(0.45, 0.6)), float(rng.uniform(0.4, 0.55))),
        )
    return SceneSpec(
        seed=int(seed),
        size=size,
        frames=frames,
        center=center,
        radii=radii,
        peak_depth=float(rng.uniform(170.0, 205.0)),
        skin=skin,
        background=background,
        texture_sigma=float(rng.uniform(1.2, 2.0)),
        texture_amplitude=float(rng.uniform(0.1, 0.15)),
        light=light,
        velocity=velocity,
        manipulation=manipulation,
    )


def _shading(u: np.ndarray, v: np.ndarray, z: np.ndarray, light) -> np.ndarray:
    lvec = np.asarray(light, dtype=np.float64)
    lvec = lvec / np.linalg.norm(lvec)
    lambert = np.clip(u * lvec[0] + v * lvec[1] + z * lvec[2], 0.0, None)
    return 0.35 + 0.65 * lambert


def generate_sequence(spec: SceneSpec) -> LabeledSequence:
    spec.validate()
    rng = component_rng(spec.seed, "render")
    h, w = spec.size
    n = spec.frames
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    face_tex = _texture(rng, spec.texture_sigma)
    bg_tex = _texture(rng, 3.0)
    bg = np.asarray(spec.background)[:, None, None] * (1.0 + 0.15 * _sample(bg_tex, ys - h / 2.0, xs - w / 2.0))
    noise_rng = component_rng(spec.seed, "noise")

    man = spec.manipulation
    if man is not None:
        src = sample_scene(man.source_seed, fake=False, size=spec.size, frames=n)
        src_rng = component_rng(man.source_seed, "render")
        src_tex = _texture(src_rng, src.texture_sigma)
        jit_rng = component_rng(spec.seed, "jitter")
        jitter = np.clip(jit_rng.normal(0.0, man.jitter, size=(n, 2)), -3 * man.jitter, 3 * man.jitter)

    frames = np.zeros((3, n, h, w))
    originals = np.zeros((3, n, h, w))
    depth = np.zeros((n, h, w))
    masks = np.zeros((n, h, w), dtype=np.uint8)
    rx, ry = spec.radii
    for t in range(n):
        cx = spec.center[0] + spec.velocity[0] * t
        cy = spec.center[1] + spec.velocity[1] * t
        u, v = (xs - cx) / rx, (ys - cy) / ry
        r2 = u * u + v * v
        inside = r2 < 1.0
        z = np.sqrt(np.clip(1.0 - r2, 0.0, None))
        shade = _shading(u, v, z, spec.light)
        tex = _sample(face_tex, ys - cy, xs - cx)
        face = np.asarray(spec.skin)[:, None, None] * shade * (1.0 + spec.texture_amplitude * tex)
        alpha = np.clip((1.0 - np.sqrt(r2)) * min(rx, ry), 0.0, 1.0)
        real = alpha * face + (1.0 - alpha) * bg
        raw = quantize_depth(np.where(inside, spec.peak_depth * z, 0.0))
        if noise_std := spec.noise_std:
            real = real + noise_rng.normal(0.0, noise_std, size=real.shape)
        real = np.clip(np.rint(real), 0, 255)
        originals[:, t] = real
        if man is None:
            frames[:, t] = real
            depth[t] = raw
            continue

        mx = cx + man.offset[0] * rx + jitter[t, 0]
        my = cy + man.offset[1] * ry + jitter[t, 1]
        mrx, mry = man.radii[0] * rx, man.radii[1] * ry
        mr = np.sqrt(((xs - mx) / mrx) ** 2 + ((ys - my) / mry) ** 2)
        blend = np.clip((1.0 - mr) * min(mrx, mry) / man.softness, 0.0, 1.0)
        # flat shading: the swapped content carries no geometry of this face
        flat = shade[inside].mean()
        src_face = np.asarray(src.skin)[:, None, None] * flat * (1.0 + src.texture_amplitude * _sample(src_tex, ys - my, xs - mx))
        fake = blend * src_face + (1.0 - blend) * real
        frames[:, t] = np.clip(np.rint(fake), 0, 255)
        region = blend > 0.5
        if man.mode == "zero":
            raw = np.where(region, 0.0, raw)
        else:
            sz = np.sqrt(np.clip(1.0 - ((xs - mx) / (1.6 * mrx)) ** 2 - ((ys - my) / (1.6 * mry)) ** 2, 0.0, None))
            raw = np.where(region, quantize_depth(src.peak_depth * sz), raw)
        depth[t] = raw
        masks[t] = compute_fake_mask(frames[:, t], real)
    return LabeledSequence(frames=frames, depth=depth, masks=masks, label=int(man is not None), originals=originals)


def depth_residual_contrast(seq: LabeledSequence, offset: int = 50) -> float:
    """Mean |ground-truth depth residual| where either frame is masked, over the mean elsewhere."""
    g = np.stack([ground_truth_depth(seq.depth[t], seq.masks[t], offset) for t in range(seq.n)])
    res = np.abs(np.diff(g, axis=0))
    touched = (seq.masks[1:] != 0) | (seq.masks[:-1] != 0)
    inside = res[touched].mean()
    outside = res[~touched].mean()
    return float(inside / max(outside, 1e-12))


def rgb_residual_energy(seq: LabeledSequence) -> float:
    return float(np.abs(np.diff(seq.frames, axis=1)).mean())


# -- datasets -------------------------------------------------------------------------

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestItem:
    item_id: str
    seed: int
    label: int
    split: str


def _split_counts(count: int, sizes: dict[str, int] | None, fractions=(0.7, 0.15, 0.15)) -> dict[str, int]:
    if sizes is not None:
        if sum(sizes.values()) != count:
            raise SpecError(f"split sizes {sizes} do not add up to {count}")
        return {s: int(sizes.get(s, 0)) for s in SPLITS}
    train = int(round(count * fractions[0]))
    val = int(round(count * fractions[1]))
    return {"train": train, "val": val, "test": count - train - val}


def make_dataset(
    count: int,
    real_fraction: float = 0.5,
    seed: int = 0,
    split_sizes: dict[str, int] | None = None,
) -> list[ManifestItem]:
    """Seeded, label-stratified train/val/test manifest with unique item seeds."""
    if count < 10:
        raise SpecError(f"dataset needs at least 10 items, got {count}")
    if not 0.0 <= real_fraction <= 1.0:
        raise SpecError(f"real_fraction {real_fraction} outside [0, 1]")
    rng = component_rng(seed, "dataset")
    seeds = rng.choice(2**32, size=count, replace=False)
    n_real = int(round(count * real_fraction))
    labels = np.array([0] * n_real + [1] * (count - n_real))
    counts = _split_counts(count, split_sizes)
    by_label = {lab: list(np.nonzero(labels == lab)[0]) for lab in (0, 1)}
    items: list[ManifestItem] = []
    # stratify: each split takes its share of each label
    assigned = {lab: 0 for lab in (0, 1)}
    for si, split in enumerate(SPLITS):
        want = counts[split]
        if si == len(SPLITS) - 1:
            take = {lab: len(by_label[lab]) - assigned[lab] for lab in (0, 1)}
        else:
            n_r = int(round(want * real_fraction))
            n_r = min(n_r, len(by_label[0]) - assigned[0])
            take = {0: n_r, 1: want - n_r}
        for lab in (0, 1):
            for idx in by_label[lab][assigned[lab] : assigned[lab] + take[lab]]:
                items.append(ManifestItem(f"{split}-{len(items):05d}", int(seeds[idx]), lab, split))
            assigned[lab] += take[lab]
    return items


def generate_item(item: ManifestItem, size=(56, 56), frames: int = 8) -> LabeledSequence:
    return generate_sequence(sample_scene(item.seed, bool(item.label), size=size, frames=frames))


def write_manifest(items: list[ManifestItem], path: str | Path, **meta) -> None:
    lines = [f"# {k}={v}" for k, v in meta.items()]
    lines.append("item_id seed label split")
    lines += [f"{it.item_id} {it.seed} {it.label} {it.split}" for it in items]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path: str | Path) -> tuple[list[ManifestItem], dict[str, str]]:
    items, meta = [], {}
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
            continue
        if not line.strip() or line.startswith("item_id"):
            continue
        item_id, seed, label, split = line.split()
        items.append(ManifestItem(item_id, int(seed), int(label), split))
    return items, meta


def save_sequence(seq: LabeledSequence, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    fdtn.save(directory / "frames.fdtn", seq.frames.astype(np.float32))
    fdtn.save(directory / "depth.fdtn", seq.depth.astype(np.float32))
    fdtn.save(directory / "masks.fdtn", seq.masks.astype(np.float32))
    if seq.originals is not None:
        fdtn.save(directory / "originals.fdtn", seq.originals.astype(np.float32))


def load_sequence(directory: str | Path, label: int) -> LabeledSequence:
    directory = Path(directory)
    originals = directory / "originals.fdtn"
    return LabeledSequence(
        frames=fdtn.load(directory / "frames.fdtn").astype(np.float64),
        depth=fdtn.load(directory / "depth.fdtn").astype(np.float64),
        masks=fdtn.load(directory / "masks.fdtn").astype(np.uint8),
        label=label,
        originals=fdtn.load(originals).astype(np.float64) if originals.exists() else None,
    )


def replace(spec: SceneSpec, **changes) -> SceneSpec:
    return dataclasses.replace(spec, **changes)
