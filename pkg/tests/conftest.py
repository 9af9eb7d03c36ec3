import numpy as np
import pytest

from depthforensics.params import Params


def make_params(store: dict, dtype=np.float64) -> Params:
    p = Params(dtype)
    for k, v in store.items():
        p[k] = v
    return p


@pytest.fixture
def rng():
    return np.random.default_rng(20240)


@pytest.fixture(scope="session")
def toy_runs(tmp_path_factory):
    """Default toy config trained once in video and image mode (seed 0)."""
    import time

    from depthforensics.config import RunConfig
    from depthforensics.pipeline import train

    cfg = RunConfig(seed=0)
    root = tmp_path_factory.mktemp("toy")
    t0 = time.perf_counter()
    runs = {mode: train(cfg.replace(mode=mode), root / mode) for mode in ("video", "image")}
    return cfg, runs, time.perf_counter() - t0
