"""Shared grids and fields."""

from __future__ import annotations

import math

import numpy as np
import pytest

from bohmlab.core.subsystem import stationary_universe_state
from bohmlab.core.wavefield import GridSpec, WaveField, gaussian_packet, init_field, make_grid

TWO_PI = 2.0 * math.pi


@pytest.fixture
def line_grid() -> GridSpec:
    return make_grid([(-10.0, 10.0, 256)])


@pytest.fixture
def ring_grid() -> GridSpec:
    return make_grid([(0.0, TWO_PI, 64)])


@pytest.fixture
def torus_grid() -> GridSpec:
    return make_grid([(0.0, TWO_PI, 64), (0.0, TWO_PI, 64)])


@pytest.fixture
def universe(torus_grid: GridSpec) -> WaveField:
    """e^{i(x-y)} cos(x+y): H eigenfunction with E = 2."""
    return init_field(torus_grid, stationary_universe_state)


@pytest.fixture
def gaussian(line_grid: GridSpec) -> WaveField:
    return init_field(line_grid, lambda x: gaussian_packet(x, -1.0, 1.0, momentum=1.5))


@pytest.fixture
def slit_grid() -> GridSpec:
    return make_grid([(-12.0, 24.0, 128), (-20.0, 20.0, 256)])


@pytest.fixture
def two_slit(slit_grid: GridSpec) -> WaveField:
    def builder(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return gaussian_packet(x, 0.0, 1.0, 2.0) * (gaussian_packet(y, -2.0, 0.7) + gaussian_packet(y, 2.0, 0.7))

    return init_field(slit_grid, builder)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
