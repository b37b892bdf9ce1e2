"""Shared fixtures: synthetic scenario runs reused across test modules."""

from __future__ import annotations

import numpy as np
import pytest

from propriobench import synthgen as sg


def make_dataset(kind: str, duration: float, noise: sg.NoiseSpec,
                 rate: float = 400.0, speed: float = 0.5,
                 gait: sg.GaitSpec | None = None) -> sg.SyntheticDataset:
    profile = sg.MotionProfile(kind=kind, speed=speed, duration=duration,
                               rate=rate)
    return sg.generate_dataset(profile, gait or sg.GaitSpec(), noise)


def initial_velocity(kind: str, speed: float = 0.5):
    return (speed, 0.0, 0.0) if kind in ("line", "circle") else (0.0, 0.0, 0.0)


@pytest.fixture(scope="session")
def noiseless_line():
    return make_dataset("line", 5.0, sg.NoiseSpec.zero())


@pytest.fixture(scope="session")
def noiseless_circle():
    return make_dataset("circle", 5.0, sg.NoiseSpec.zero())


@pytest.fixture(scope="session")
def noisy_rest():
    return make_dataset("rest", 5.0, sg.NoiseSpec())


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
