"""Narrowband multipath channel, pulse correlations, SNR and received power."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .array import Beamformer, make_beam, steering_vector, CONTINUOUS
from .geometry import PathParams, Scenario, scene_paths


@dataclass(frozen=True)
class WaveformConfig:
    bandwidth: float
    n_symbols: int
    symbol_energy: float
    pulse_model: str = "flat_spectrum"

    def __post_init__(self):
        if self.bandwidth <= 0 or self.n_symbols < 1 or self.symbol_energy <= 0:
            raise ValueError("need bandwidth > 0, n_symbols >= 1, symbol_energy > 0")
        if self.pulse_model != "flat_spectrum":
            raise ValueError(f"unsupported pulse model {self.pulse_model!r}")

    @classmethod
    def from_scene(cls, scene: Scenario) -> "WaveformConfig":
        return cls(scene.bandwidth, scene.n_symbols, scene.symbol_energy)


def _wf(scene: Scenario, wf: Optional[WaveformConfig]) -> WaveformConfig:
    return WaveformConfig.from_scene(scene) if wf is None else wf


@dataclass(frozen=True, eq=False)
class ChannelMatrix:
    matrices: np.ndarray  # (K, n_rx, n_tx)
    delays: np.ndarray

    def total(self) -> np.ndarray:
        return self.matrices.sum(axis=0)


def path_arrays(paths: Sequence[PathParams], scene: Scenario):
    """Stacked tx/rx steering matrices (columns per path), gains and delays."""
    d, lam = scene.element_spacing, scene.wavelength
    aod = np.array([pa.aod for pa in paths])
    aoa = np.array([pa.aoa for pa in paths])
    a_tx = steering_vector(aod, scene.n_tx, d, lam)
    a_rx = steering_vector(aoa, scene.n_rx, d, lam)
    h = np.array([pa.gain for pa in paths], dtype=complex)
    tau = np.array([pa.delay for pa in paths])
    return a_tx, a_rx, h, tau


def channel_matrices(paths: Sequence[PathParams], scene: Scenario) -> ChannelMatrix:
    a_tx, a_rx, h, tau = path_arrays(paths, scene)
    scale = math.sqrt(scene.n_tx * scene.n_rx)
    H = scale * h[:, None, None] * np.einsum("rk,tk->krt", a_rx, a_tx.conj())
    return ChannelMatrix(matrices=H, delays=tau)


def pulse_corr(order: int, delta, bandwidth: float):
    """Correlations of a unit-energy flat-spectrum pulse and its derivative.

    ``order`` 0, 1, 2 give the integrals of ``p(t-D) p(t)``, ``p'(t-D) p(t)``
    and ``p'(t-D) p'(t)`` over t. Small arguments use Taylor series so the
    zero-lag limits are exact.
    """
    delta = np.asarray(delta, dtype=float)
    x = np.pi * bandwidth * delta
    small = np.abs(x) < 1e-3
    xs = np.where(small, 1.0, x)
    pb = np.pi * bandwidth
    if order == 0:
        out = np.sinc(bandwidth * delta)
    elif order == 1:
        series = pb * (x / 3 - x**3 / 30 + x**5 / 840)
        exact = pb * (np.sin(xs) - xs * np.cos(xs)) / xs**2
        out = np.where(small, series, exact)
    elif order == 2:
        series = np.pi**2 * bandwidth**2 / 3 - pb**2 * (x**2 / 10 - x**4 / 168)
        exact = pb**2 * ((xs**2 - 2) * np.sin(xs) + 2 * xs * np.cos(xs)) / xs**3
        out = np.where(small, series, exact)
    else:
        raise ValueError("order must be 0, 1 or 2")
    return float(out) if out.ndim == 0 else out


def _tx_gains(f, a_tx: np.ndarray) -> np.ndarray:
    w = f.weights if isinstance(f, Beamformer) else np.asarray(f)
    return a_tx.conj().T @ w  # a_tx^H f per path


def snr(
    f_sel,
    paths: Sequence[PathParams],
    scene: Scenario,
    wf: Optional[WaveformConfig] = None,
    gain_exponent: int = 2,
) -> float:
    """Link SNR in dB for the selected beam."""
    wf = _wf(scene, wf)
    a_tx, _, h, _ = path_arrays(paths, scene)
    g = np.abs(_tx_gains(f_sel, a_tx))
    lin = scene.n_tx * scene.n_rx * wf.symbol_energy / scene.noise_psd * np.sum(np.abs(h) ** 2 * g**gain_exponent)
    return 10 * math.log10(lin) if lin > 0 else -math.inf


def rsps(
    f,
    paths: Sequence[PathParams],
    scene: Scenario,
    wf: Optional[WaveformConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Received reference-signal energy for one training beam.

    Noise-free unless ``rng`` is given, in which case zero-mean Gaussian noise
    with standard deviation ``N0 * sqrt(N * n_rx)`` is added.
    """
    wf = _wf(scene, wf)
    a_tx, a_rx, h, tau = path_arrays(paths, scene)
    c = math.sqrt(scene.n_tx * scene.n_rx) * h * _tx_gains(f, a_tx)
    rx_corr = a_rx.conj().T @ a_rx
    a0 = pulse_corr(0, tau[:, None] - tau[None, :], wf.bandwidth)
    energy = wf.n_symbols * wf.symbol_energy * float(np.real(c.conj() @ (rx_corr * a0) @ c))
    if rng is not None:
        energy += rng.normal(0.0, scene.noise_psd * math.sqrt(wf.n_symbols * scene.n_rx))
    return energy


def calibrate_symbol_energy(
    scene: Scenario, reference=(10.0, 0.0), gain_exponent: int = 2, rule: str = "standard"
) -> float:
    """Symbol energy giving 0 dB SNR for a matched full-array beam at ``reference``."""
    ref = replace(scene, rx_pos=tuple(reference), symbol_energy=1.0)
    paths = scene_paths(ref, rule)
    los = next(pa for pa in paths if pa.is_los)
    beam = make_beam(los.aod, ref.n_tx, ref, CONTINUOUS)
    return 10 ** (-snr(beam, paths, ref, gain_exponent=gain_exponent) / 10)


def calibrated(scene: Scenario, **kw) -> Scenario:
    return replace(scene, symbol_energy=calibrate_symbol_energy(scene, **kw))
