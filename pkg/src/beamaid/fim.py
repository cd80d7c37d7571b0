"""Fisher information for the channel parameters and the derived error bounds.

Per path the channel parameters are ordered ``[tau, theta_tx, theta_rx,
h_re, h_im]``. Each entry below is the closed-form expected curvature of the
log-likelihood for one training beam, written with

* ``g[i]   = f^H a_tx(theta_tx_i)``
* ``gd[i]  = a_tx'(theta_tx_i)^H f``
* ``b[i,j] = a_rx(theta_rx_i)^H a_rx(theta_rx_j)``, with ``bd`` and ``bdd``
  replacing the right (resp. both) factors by the angle derivative
* ``A0/A1/A2`` the pulse correlations evaluated at ``tau_i - tau_j``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .array import Beamformer, steering_derivative, steering_vector
from .channel import WaveformConfig, pulse_corr
from .geometry import PathParams, Scenario

ETA = "eta"
ETA_PRIME = "eta_prime"
COND_CAP = 1e12
PARAMS = ("tau", "theta_tx", "theta_rx", "h_re", "h_im")


@dataclass(frozen=True, eq=False)
class FisherMatrix:
    entries: np.ndarray
    parameterization: str
    path_count: int

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __add__(self, other: "FisherMatrix") -> "FisherMatrix":
        return accumulate([self, other])


def inverse_noise_level(scene: Scenario, wf: WaveformConfig) -> float:
    """``2 N Es Nr Nt / N0``."""
    return 2 * wf.n_symbols * wf.symbol_energy * scene.n_rx * scene.n_tx / scene.noise_psd


def fim_blocks(weights: np.ndarray, paths: Sequence[PathParams], scene: Scenario, wf: WaveformConfig):
    """All 25 entry kinds for a batch of beams.

    ``weights`` has shape ``(n_tx, M)``. Returns a dict mapping
    ``(row_param, col_param)`` to arrays of shape ``(M, K, K)`` indexed
    ``[beam, i, j]`` (row parameter of path i, column parameter of path j),
    already scaled by the inverse noise level.
    """
    d, lam = scene.element_spacing, scene.wavelength
    aod = np.array([pa.aod for pa in paths])
    aoa = np.array([pa.aoa for pa in paths])
    tau = np.array([pa.delay for pa in paths])
    h = np.array([pa.gain for pa in paths], dtype=complex)

    a_tx = steering_vector(aod, scene.n_tx, d, lam)
    da_tx = steering_derivative(aod, scene.n_tx, d, lam)
    a_rx = steering_vector(aoa, scene.n_rx, d, lam)
    da_rx = steering_derivative(aoa, scene.n_rx, d, lam)

    F = np.asarray(weights)
    g = F.conj().T @ a_tx  # (M, K)
    gd = (da_tx.conj().T @ F).T  # (M, K)
    b = a_rx.conj().T @ a_rx
    bd = a_rx.conj().T @ da_rx
    bdd = da_rx.conj().T @ da_rx
    bd_ji_c = bd.T.conj()  # conj(bd[j, i])

    dt = tau[:, None] - tau[None, :]
    A0 = pulse_corr(0, dt, wf.bandwidth)
    A1 = pulse_corr(1, dt, wf.bandwidth)
    A1t = A1.T  # A1(tau_j - tau_i)
    A2 = pulse_corr(2, dt, wf.bandwidth)

    gi, gjc = g[:, :, None], g[:, None, :].conj()
    gdic, gdj = gd[:, :, None].conj(), gd[:, None, :]
    hic, hj = h.conj()[:, None], h[None, :]
    hh = hic * hj
    s = inverse_noise_level(scene, wf)
    re = np.real

    e = {}
    e["tau", "tau"] = re(hh * gi * gjc * b * A2)
    e["theta_tx", "theta_tx"] = re(hh * gdic * b * gdj * A0)
    e["theta_rx", "theta_rx"] = re(hh * gi * bdd * gjc * A0)
    e["h_re", "h_re"] = re(gi * gjc * b * A0)
    e["h_im", "h_im"] = e["h_re", "h_re"]

    e["tau", "theta_tx"] = -re(hh * gi * b * gdj * A1)
    e["tau", "theta_rx"] = -re(hh * gi * bd * gjc * A1)
    e["tau", "h_re"] = -re(hic * gi * b * gjc * A1)
    e["tau", "h_im"] = -re(1j * hic * gi * b * gjc * A1)
    e["theta_tx", "theta_rx"] = re(hh * gdic * bd * gjc * A0)
    e["theta_tx", "h_re"] = re(hic * gdic * b * gjc * A0)
    e["theta_tx", "h_im"] = re(1j * hic * gdic * b * gjc * A0)
    e["theta_rx", "h_re"] = re(hic * gi * bd_ji_c * gjc * A0)
    e["theta_rx", "h_im"] = re(1j * hic * gi * bd_ji_c * gjc * A0)
    e["h_re", "h_im"] = re(1j * gi * b * gjc * A0)

    e["theta_tx", "tau"] = -re(hh * gdic * b * gjc * A1t)
    e["theta_rx", "tau"] = -re(hh * gi * bd_ji_c * gjc * A1t)
    e["h_re", "tau"] = -re(hj * gi * b * gjc * A1t)
    e["h_im", "tau"] = re(1j * hj * gi * b * gjc * A1t)
    e["theta_rx", "theta_tx"] = re(hh * gi * bd_ji_c * gdj * A0)
    e["h_re", "theta_tx"] = re(hj * gi * b * gdj * A0)
    e["h_im", "theta_tx"] = -re(1j * hj * gi * b * gdj * A0)
    e["h_re", "theta_rx"] = re(hj * gi * bd * gjc * A0)
    e["h_im", "theta_rx"] = -re(1j * hj * gi * bd * gjc * A0)
    e["h_im", "h_re"] = -re(1j * gi * b * gjc * A0)
    return {k: s * v for k, v in e.items()}


def fim_batch(weights: np.ndarray, paths: Sequence[PathParams], scene: Scenario, wf: WaveformConfig) -> np.ndarray:
    """Per-beam FIMs, shape ``(M, 5K, 5K)``."""
    e = fim_blocks(weights, paths, scene, wf)
    M = np.shape(weights)[1]
    K = len(paths)
    stack = np.empty((M, 5, 5, K, K))
    for a, ra in enumerate(PARAMS):
        for c, rc in enumerate(PARAMS):
            stack[:, a, c] = e[ra, rc]
    return stack.transpose(0, 3, 1, 4, 2).reshape(M, 5 * K, 5 * K)


def fim_beam(f: Beamformer, paths: Sequence[PathParams], scene: Scenario, wf: WaveformConfig | None = None) -> FisherMatrix:
    wf = WaveformConfig.from_scene(scene) if wf is None else wf
    w = f.weights if isinstance(f, Beamformer) else np.asarray(f)
    J = fim_batch(w[:, None], paths, scene, wf)[0]
    return FisherMatrix(J, ETA, len(paths))


def accumulate(fims: Iterable[FisherMatrix]) -> FisherMatrix:
    fims = list(fims)
    if not fims:
        raise ValueError("nothing to accumulate")
    first = fims[0]
    for J in fims[1:]:
        if J.parameterization != first.parameterization or J.entries.shape != first.entries.shape:
            raise ValueError("cannot accumulate FIMs of different parameterization or dimension")
    return FisherMatrix(np.sum([J.entries for J in fims], axis=0), first.parameterization, first.path_count)


def to_eta_prime(J: FisherMatrix, T: np.ndarray) -> FisherMatrix:
    if J.parameterization != ETA:
        raise ValueError("expected a channel-parameter FIM")
    if T.shape[0] != J.dim:
        raise ValueError(f"Jacobian has {T.shape[0]} rows, FIM has dimension {J.dim}")
    return FisherMatrix(T.T @ J.entries @ T, ETA_PRIME, J.path_count)


def crlb(J, cond_cap: float = COND_CAP):
    """Inverse of the FIM, or None if it is singular or too ill-conditioned.

    The condition number is taken after symmetric diagonal equilibration so
    that the mix of units (meters, radians, gains) does not count against it.
    """
    A = J.entries if isinstance(J, FisherMatrix) else np.asarray(J)
    diag = np.diag(A)
    if not np.all(np.isfinite(A)) or np.any(diag <= 0):
        return None
    dinv = 1 / np.sqrt(diag)
    C = A * dinv[:, None] * dinv[None, :]
    C = (C + C.T) / 2
    if np.linalg.cond(C) > cond_cap:
        return None
    return np.linalg.inv(C) * dinv[:, None] * dinv[None, :]


def peb(J: FisherMatrix, cond_cap: float = COND_CAP) -> float:
    """Position error bound in meters; ``inf`` when the position is unobservable."""
    inv = crlb(J, cond_cap)
    if inv is None:
        return math.inf
    return math.sqrt(max(inv[0, 0] + inv[1, 1], 0.0))


def reb(J: FisherMatrix, cond_cap: float = COND_CAP) -> float:
    """Rotation error bound in radians; ``inf`` when unobservable."""
    inv = crlb(J, cond_cap)
    if inv is None:
        return math.inf
    return math.sqrt(max(inv[2, 2], 0.0))


def peb_batch(J: np.ndarray, cond_cap: float = COND_CAP) -> np.ndarray:
    """PEB for a stack of location-parameter FIMs, shape ``(M, n, n)``."""
    diag = np.einsum("mii->mi", J)
    out = np.full(J.shape[0], np.inf)
    ok = np.all(diag > 0, axis=1)
    if not ok.any():
        return out
    dinv = 1 / np.sqrt(diag[ok])
    C = J[ok] * dinv[:, :, None] * dinv[:, None, :]
    C = (C + C.transpose(0, 2, 1)) / 2
    cond = np.linalg.cond(C)
    good = cond <= cond_cap
    inv = np.linalg.inv(C[good]) * (dinv[good][:, :, None] * dinv[good][:, None, :])
    vals = np.sqrt(np.maximum(inv[:, 0, 0] + inv[:, 1, 1], 0.0))
    idx = np.flatnonzero(ok)[good]
    out[idx] = vals
    return out


def to_db(x: float) -> float:
    """Error bound in dB: ``10 log10`` of the squared bound, so 1 m is 0 dB and 3.16 m is 10 dB."""
    return 20 * math.log10(x) if x > 0 and math.isfinite(x) else math.nan
