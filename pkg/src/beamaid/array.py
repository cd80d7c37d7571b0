"""ULA steering vectors, analog beamformers and beam pattern measures."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .geometry import Scenario

DISCRETE = "discrete4phase"
CONTINUOUS = "continuous"
CODEBOOK_KINDS = (DISCRETE, CONTINUOUS)

_QPHASES = np.array([0.0, np.pi / 2, np.pi, -np.pi / 2])


def steering_vector(theta, n: int, d: float, lam: float) -> np.ndarray:
    """Normalized ULA response, ``exp(j 2 pi l d sin(theta) / lam) / sqrt(n)``.

    A scalar ``theta`` gives shape ``(n,)``; an array of angles gives ``(n, m)``.
    """
    theta = np.asarray(theta, dtype=float)
    l = np.arange(n).reshape((n,) + (1,) * theta.ndim)
    return np.exp(1j * 2 * np.pi * l * d / lam * np.sin(theta)) / np.sqrt(n)


def steering_derivative(theta, n: int, d: float, lam: float) -> np.ndarray:
    """Element-wise derivative of :func:`steering_vector` with respect to theta."""
    theta = np.asarray(theta, dtype=float)
    l = np.arange(n).reshape((n,) + (1,) * theta.ndim)
    return 1j * 2 * np.pi * l * d / lam * np.cos(theta) * steering_vector(theta, n, d, lam)


@dataclass(frozen=True, eq=False)
class Beamformer:
    weights: np.ndarray
    active_count: int
    pointing: Optional[float]
    kind: str

    @property
    def n_tx(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class BeamSet:
    beams: tuple
    iteration: int

    def __post_init__(self):
        if not self.beams:
            raise ValueError("BeamSet must be nonempty")
        if len({b.n_tx for b in self.beams}) != 1:
            raise ValueError("all beams in a BeamSet must share n_tx")

    def __len__(self):
        return len(self.beams)

    def __iter__(self):
        return iter(self.beams)

    def weight_matrix(self) -> np.ndarray:
        return np.stack([b.weights for b in self.beams], axis=1)


def beam_weights(theta_m: float, n_active: int, n_tx: int, spacing_wl: float, kind: str) -> np.ndarray:
    if n_active > n_tx or n_active < 1:
        raise ValueError(f"n_active={n_active} must lie in [1, {n_tx}]")
    if (n_tx - n_active) % 2:
        raise ValueError(f"cannot center {n_active} active antennas in an array of {n_tx}")
    if kind not in CODEBOOK_KINDS:
        raise ValueError(f"unknown codebook kind {kind!r}")
    phase = 2 * np.pi * spacing_wl * np.arange(n_active) * math.sin(theta_m)
    if kind == DISCRETE:
        wrapped = np.angle(np.exp(1j * phase))
        dist = np.abs(np.angle(np.exp(1j * (wrapped[:, None] - _QPHASES[None, :]))))
        phase = _QPHASES[np.argmin(dist, axis=1)]
    pad = (n_tx - n_active) // 2
    w = np.zeros(n_tx, dtype=complex)
    w[pad : pad + n_active] = np.exp(1j * phase) / math.sqrt(n_active)
    return w


def make_beam(theta_m: float, n_active: int, scene: Scenario, kind: str = CONTINUOUS) -> Beamformer:
    w = beam_weights(theta_m, n_active, scene.n_tx, scene.spacing_wl, kind)
    return Beamformer(weights=w, active_count=n_active, pointing=float(theta_m), kind=kind)


def codebook_directions(n_beams: int) -> np.ndarray:
    """Pointing angles tiling sin-space uniformly with ``n_beams`` beams."""
    m = np.arange(n_beams)
    return np.arcsin(-1 + (2 * m + 1) / n_beams)


def beam_gain(f, theta, scene: Scenario):
    """``|a_tx(theta)^H f|``, vectorized over ``theta``."""
    w = f.weights if isinstance(f, Beamformer) else np.asarray(f)
    a = steering_vector(theta, scene.n_tx, scene.element_spacing, scene.wavelength)
    g = np.abs(np.tensordot(w, a.conj(), axes=(0, 0)))
    return float(g) if np.ndim(g) == 0 else g


def hpbw(n_active: int, theta_max: float, scene: Scenario, kind: str = CONTINUOUS) -> float:
    """Half-power beamwidth of the beam steered to ``theta_max``.

    Edges missing inside the visible region are clamped to +-pi/2, so a beam
    without any -3 dB crossing reports pi.
    """
    return _hpbw(int(n_active), float(theta_max), kind, scene.n_tx, float(scene.spacing_wl))


@lru_cache(maxsize=65536)
def _hpbw(n_active: int, theta_max: float, kind: str, n_tx: int, dw: float) -> float:
    if n_active < 2:
        raise ValueError("hpbw needs at least 2 active antennas")
    w = beam_weights(theta_max, n_active, n_tx, dw, kind)
    l = np.arange(n_tx)

    def power(u):
        return abs(np.vdot(np.exp(1j * 2 * np.pi * dw * l * u), w)) ** 2 / n_tx

    u0 = math.sin(theta_max)
    null = 1.0 / (n_active * dw)
    if kind == CONTINUOUS:
        u_pk = u0
    else:
        lo, hi = max(-1.0, u0 - null / 2), min(1.0, u0 + null / 2)
        grid = np.linspace(lo, hi, 33)
        u_pk = grid[np.argmax([power(u) for u in grid])]
        res = minimize_scalar(
            lambda u: -power(u),
            bounds=(max(lo, u_pk - (hi - lo) / 32), min(hi, u_pk + (hi - lo) / 32)),
            method="bounded",
            options={"xatol": 1e-12},
        )
        u_pk = float(res.x)
    half = power(u_pk) / 2
    step = 0.886 * null / 8

    def edge(direction):
        u_in = u_pk
        while True:
            u_out = u_in + direction * step
            if direction * u_out >= 1.0:
                u_out = float(direction)
                if power(u_out) >= half:
                    return u_out
            if power(u_out) < half:
                a, b = sorted((u_in, u_out))
                return brentq(lambda u: power(u) - half, a, b, xtol=1e-14)
            u_in = u_out

    u_lo, u_hi = edge(-1), edge(+1)
    return math.asin(min(1.0, u_hi)) - math.asin(max(-1.0, u_lo))
