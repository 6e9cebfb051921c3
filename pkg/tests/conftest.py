import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from gsplat_distill.scene import Camera, GaussianCloud


def make_cloud(rng, n=6, spread=0.25, opacity=(0.1, 0.6)):
    pos = rng.uniform(-spread, spread, (n, 3))
    scales = rng.uniform(0.04, 0.12, (n, 3))
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    op = rng.uniform(*opacity, n)
    col = rng.uniform(0.0, 1.0, (n, 3))
    return GaussianCloud.from_activated(pos, scales, q, op, col)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cloud(rng):
    return make_cloud(rng)


@pytest.fixture
def camera16():
    return Camera(30.0, 20.0, 1.0, 50.0, 16, 16)


ROOT = Path(__file__).resolve().parents[1]
ACCEPTANCE: list[str] = []


@dataclass
class ReconRun:
    metrics: list
    final_heldout: float
    seconds: float


@pytest.fixture(scope="session")
def recon_run():
    """The 2000-step reconstruction run of configs/reconstruct.txt, shared by the tests that need it."""
    from gsplat_distill.cli import config as cfgmod
    from gsplat_distill.cli.commands import build_provider
    from gsplat_distill.trainer import Trainer

    cfg = cfgmod.load(ROOT / "configs" / "reconstruct.txt")
    provider, heldout = build_provider(cfg)
    t0 = time.perf_counter()
    trainer = Trainer.create(cfgmod.build_train_config(cfg), provider, heldout)
    state = trainer.run()
    seconds = time.perf_counter() - t0
    return ReconRun(state.metrics, trainer.heldout_error(state.cloud), seconds)


def heldout_curve(metrics) -> tuple[np.ndarray, np.ndarray]:
    rows = [m for m in metrics if not math.isnan(m["heldout_mse"])]
    return np.array([m["step"] for m in rows]), np.array([m["heldout_mse"] for m in rows])


def moving_average(steps: np.ndarray, values: np.ndarray, window: int = 100) -> np.ndarray:
    """Trailing mean over evaluations inside the last ``window`` steps."""
    return np.array([values[(steps > s - window) & (steps <= s)].mean() for s in steps if s >= window])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
