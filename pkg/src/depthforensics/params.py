"""Named parameter sets, seeded initialisation, and on-disk parameter directories."""

from __future__ import annotations

import zlib
from collections.abc import Iterator, MutableMapping
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .autodiff import fdtn

MANIFEST = "manifest.txt"


class ConfigurationError(ValueError):
    """A parameter set or module configuration is inconsistent."""


def component_rng(seed: int, label: str) -> np.random.Generator:
    """Generator for one named component, derived from the master seed.

    Two runs sharing a seed get identical streams for a label regardless of
    which other components they build.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & (2**64 - 1), zlib.crc32(label.encode())])))


def glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Params(MutableMapping):
    """Ordered ``name -> Tensor`` mapping.

    Names are dotted paths (``fdmt.blocks.0.qkv.weight``). ``scope`` gives a
    prefixed view used by the module forward functions.
    """

    def __init__(self, dtype=np.float32):
        self._items: dict[str, Tensor] = {}
        self.dtype = np.dtype(dtype)

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._items[name]
        except KeyError:
            raise ConfigurationError(f"missing parameter {name!r}") from None

    def __setitem__(self, name: str, value) -> None:
        if isinstance(value, Tensor):
            self._items[name] = value
        else:
            self._items[name] = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True)

    def __delitem__(self, name: str) -> None:
        del self._items[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def scope(self, prefix: str) -> "Scope":
        return Scope(self, prefix)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self._items.items()}

    def grads(self) -> dict[str, np.ndarray | None]:
        return {k: t.grad for k, t in self._items.items()}

    def zero_grad(self) -> None:
        for t in self._items.values():
            t.grad = None

    def astype(self, dtype) -> "Params":
        out = Params(dtype)
        for k, t in self._items.items():
            out[k] = t.data.astype(dtype)
        return out

    def copy(self) -> "Params":
        return self.astype(self.dtype)

    def names(self, prefix: str = "") -> list[str]:
        return [k for k in self._items if k.startswith(prefix)]

    def num_elements(self) -> int:
        return sum(t.size for t in self._items.values())

    # -- persistence -----------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        """Write one FDTN file per parameter plus a ``name shape`` manifest."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        lines = []
        for name, t in self._items.items():
            fdtn.save(directory / f"{name}.fdtn", t.data)
            lines.append(f"{name} {','.join(str(d) for d in t.shape)}")
        (directory / MANIFEST).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> "Params":
        directory = Path(directory)
        manifest = directory / MANIFEST
        if not manifest.exists():
            raise ConfigurationError(f"no parameter manifest in {directory}")
        params: Params | None = None
        for line in manifest.read_text().splitlines():
            if not line.strip():
                continue
            name, shape_txt = line.split()
            shape = tuple(int(d) for d in shape_txt.split(",")) if shape_txt else ()
            arr = fdtn.load(directory / f"{name}.fdtn")
            if arr.shape != shape:
                raise ConfigurationError(f"{name}: manifest shape {shape} != stored {arr.shape}")
            if params is None:
                params = cls(arr.dtype)
            params[name] = arr
        return params if params is not None else cls()


class Scope:
    """Prefixed, read-mostly view into a :class:`Params`."""

    def __init__(self, params: Params, prefix: str):
        self.params = params
        self.prefix = prefix

    def _full(self, name: str) -> str:
        return f"{self.prefix}.{name}" if self.prefix else name

    def __getitem__(self, name: str) -> Tensor:
        return self.params[self._full(name)]

    def __setitem__(self, name: str, value) -> None:
        self.params[self._full(name)] = value

    def __contains__(self, name: str) -> bool:
        return self._full(name) in self.params

    def scope(self, name: str) -> "Scope":
        return Scope(self.params, self._full(name))

    def get(self, name: str, default=None):
        return self.params._items.get(self._full(name), default)
