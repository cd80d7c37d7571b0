"""Scene geometry: positions and orientation to channel parameters and back.

Conventions
-----------
* ``tx_pos`` (D1) is known, ``rx_pos`` (D2) and ``rx_orientation`` are unknown.
* Both arrays are ULAs along the vertical axis, so broadside is the +x
  direction and every angle is measured from the array broadside.
* Per path the channel parameters are ``[tau, theta_tx, theta_rx, h_re, h_im]``.
  The location parameters are ``[p_x, p_y, alpha]`` followed, per path, by the
  scatterer position (NLOS paths only) and the gain ``[h_re, h_im]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

# -84 dBm/GHz expressed in W/Hz.
DEFAULT_NOISE_PSD = 10 ** (-84 / 10) * 1e-3 / 1e9


class InvalidSceneError(ValueError):
    """Raised for scenes with coincident points or non-physical constants."""


def wrap_angle(x):
    """Wrap to (-pi, pi]."""
    y = np.mod(np.asarray(x, dtype=float) + np.pi, 2 * np.pi) - np.pi
    y = np.where(y == -np.pi, np.pi, y)
    return float(y) if np.ndim(y) == 0 else y


@dataclass(frozen=True)
class Scenario:
    """Ground truth for one simulation instance, SI units throughout."""

    tx_pos: tuple = (0.0, 0.0)
    rx_pos: tuple = (10.0, 0.0)
    rx_orientation: float = 0.0
    scatterers: tuple = ((5.0, 5.0),)
    carrier_freq: float = 60e9
    bandwidth: float = 100e6
    noise_psd: float = DEFAULT_NOISE_PSD
    n_tx: int = 64
    n_rx: int = 64
    element_spacing: Optional[float] = None
    n_symbols: int = 64
    symbol_energy: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "tx_pos", tuple(float(v) for v in self.tx_pos))
        object.__setattr__(self, "rx_pos", tuple(float(v) for v in self.rx_pos))
        object.__setattr__(
            self, "scatterers", tuple(tuple(float(v) for v in s) for s in self.scatterers)
        )
        object.__setattr__(self, "rx_orientation", float(np.mod(self.rx_orientation, 2 * np.pi)))
        if self.element_spacing is None:
            object.__setattr__(self, "element_spacing", self.wavelength / 2)

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def spacing_wl(self) -> float:
        """Element spacing in wavelengths."""
        return self.element_spacing / self.wavelength

    @property
    def q(self) -> np.ndarray:
        return np.array(self.tx_pos)

    @property
    def p(self) -> np.ndarray:
        return np.array(self.rx_pos)

    @property
    def beta(self) -> np.ndarray:
        return np.array([*self.rx_pos, self.rx_orientation])

    def with_rx(self, rx_pos, rx_orientation=None) -> "Scenario":
        if rx_orientation is None:
            rx_orientation = self.rx_orientation
        return replace(self, rx_pos=tuple(rx_pos), rx_orientation=rx_orientation)

    def validate(self) -> None:
        if not (self.carrier_freq > 0 and self.bandwidth > 0 and self.element_spacing > 0):
            raise InvalidSceneError("carrier_freq, bandwidth and element_spacing must be > 0")
        if self.n_tx < 2 or self.n_rx < 2 or self.n_symbols < 1:
            raise InvalidSceneError("need n_tx >= 2, n_rx >= 2, n_symbols >= 1")
        pts = [("tx_pos", self.q), ("rx_pos", self.p)]
        pts += [(f"scatterers[{k}]", np.array(s)) for k, s in enumerate(self.scatterers)]
        for a in range(len(pts)):
            for b in range(a + 1, len(pts)):
                if a >= 2 and b >= 2:
                    continue
                if np.linalg.norm(pts[a][1] - pts[b][1]) == 0.0:
                    raise InvalidSceneError(f"{pts[a][0]} coincides with {pts[b][0]}")


@dataclass(frozen=True)
class PathParams:
    """One propagation path. ``scatterer`` is None for the LOS path."""

    delay: float
    aod: float
    aoa: float
    gain: complex
    scatterer: Optional[int] = None

    @property
    def is_los(self) -> bool:
        return self.scatterer is None


@dataclass
class LocationState:
    """Position/orientation estimate with its covariance.

    ``nuisance`` holds the jointly drawn estimates of the remaining location
    parameters (gains, scatterer positions) in the same layout as the
    information matrix; it is empty when only ``beta`` was estimated.
    """

    position: np.ndarray
    orientation: float
    covariance: np.ndarray
    nuisance: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def beta(self) -> np.ndarray:
        return np.array([*self.position, self.orientation])


def _bearing(v) -> float:
    return math.atan2(v[1], v[0])


def _los_gain(dist: float, scene: Scenario) -> complex:
    rho = (2 * np.pi * dist / scene.wavelength) ** 2
    return complex(np.exp(-2j * np.pi * scene.carrier_freq * dist / SPEED_OF_LIGHT) / np.sqrt(rho))


def path_params_from_scene(scene: Scenario) -> list[PathParams]:
    """LOS path first, then one path per scatterer, with the free-space gain model."""
    scene.validate()
    q, p, alpha = scene.q, scene.p, scene.rx_orientation
    c = SPEED_OF_LIGHT

    d0 = float(np.linalg.norm(p - q))
    tau0 = d0 / c
    aod0 = _bearing(p - q)
    paths = [
        PathParams(
            delay=tau0,
            aod=aod0,
            aoa=wrap_angle(_bearing(q - p) - alpha),
            gain=_los_gain(d0, scene),
        )
    ]
    for k, s in enumerate(scene.scatterers):
        s = np.array(s)
        d1 = float(np.linalg.norm(q - s))
        d2 = float(np.linalg.norm(s - p))
        tau = (d1 + d2) / c
        rho = (2 * np.pi * d1 * d2 / scene.wavelength) ** 2
        gain = complex(np.exp(-2j * np.pi * scene.carrier_freq * tau) / np.sqrt(rho))
        paths.append(
            PathParams(
                delay=tau,
                aod=_bearing(s - q),
                aoa=wrap_angle(_bearing(s - p) - alpha),
                gain=gain,
                scatterer=k,
            )
        )
    return paths


def beta_from_los(delay: float, aod: float, aoa: float, tx_pos=(0.0, 0.0)) -> np.ndarray:
    """Recover ``[p_x, p_y, alpha]`` from the LOS delay and angles."""
    r = delay * SPEED_OF_LIGHT
    q = np.asarray(tx_pos, dtype=float)
    p = q + r * np.array([math.cos(aod), math.sin(aod)])
    alpha = float(np.mod(np.pi + aod - aoa, 2 * np.pi))
    return np.array([p[0], p[1], alpha])


def _angularly_unresolvable(a: PathParams, b: PathParams, scene: Scenario, rule: str) -> bool:
    dsin = abs(math.sin(a.aoa) - math.sin(b.aoa))
    if rule == "standard":
        return dsin <= scene.wavelength / (scene.n_rx * scene.element_spacing)
    if rule == "literal":
        return scene.n_rx * scene.wavelength * dsin <= scene.element_spacing
    raise ValueError(f"unknown resolvability rule {rule!r}")


def merge_unresolvable(
    paths: Sequence[PathParams], scene: Scenario, rule: str = "standard"
) -> list[PathParams]:
    """Combine paths that are unresolvable in both delay and angle of arrival.

    A merged path keeps the delay, angles and identity of its stronger member
    and carries the sum of the complex gains. Merging repeats until every pair
    is resolvable, so the function is idempotent.
    """
    out = list(paths)
    merged = True
    while merged:
        merged = False
        for a in range(len(out)):
            for b in range(a + 1, len(out)):
                pa, pb = out[a], out[b]
                if abs(pa.delay - pb.delay) > 1 / scene.bandwidth:
                    continue
                if not _angularly_unresolvable(pa, pb, scene, rule):
                    continue
                strong = pa if abs(pa.gain) >= abs(pb.gain) else pb
                out[a] = replace(strong, gain=pa.gain + pb.gain)
                del out[b]
                merged = True
                break
            if merged:
                break
    return out


def scene_paths(scene: Scenario, rule: str = "standard") -> list[PathParams]:
    return merge_unresolvable(path_params_from_scene(scene), scene, rule)


# ---------------------------------------------------------------------------
# Parameter vectors and the channel -> location Jacobian


def eta_vector(paths: Sequence[PathParams]) -> np.ndarray:
    out = []
    for pa in paths:
        out += [pa.delay, pa.aod, pa.aoa, pa.gain.real, pa.gain.imag]
    return np.array(out)


def eta_prime_layout(paths: Sequence[PathParams]) -> list[tuple[int, str]]:
    """Column labels of the location parameter vector as (path, name) pairs.

    Path index -1 marks the shared ``p_x, p_y, alpha`` block.
    """
    layout = [(-1, "p_x"), (-1, "p_y"), (-1, "alpha")]
    for k, pa in enumerate(paths):
        if not pa.is_los:
            layout += [(k, "s_x"), (k, "s_y")]
        layout += [(k, "h_re"), (k, "h_im")]
    return layout


def eta_prime_vector(paths: Sequence[PathParams], scene: Scenario) -> np.ndarray:
    out = [*scene.rx_pos, scene.rx_orientation]
    for pa in paths:
        if not pa.is_los:
            out += list(scene.scatterers[pa.scatterer])
        out += [pa.gain.real, pa.gain.imag]
    return np.array(out)


def paths_from_eta_prime(
    x: np.ndarray, template: Sequence[PathParams], scene: Scenario
) -> tuple[list[PathParams], Scenario]:
    """Rebuild paths (and the implied scene) from a location parameter vector.

    ``template`` fixes the path structure, i.e. which entries are scatterers.
    """
    x = np.asarray(x, dtype=float)
    p, alpha = x[:2], float(x[2])
    q = scene.q
    scat = list(scene.scatterers)
    idx = 3
    paths = []
    for pa in template:
        if pa.is_los:
            d = np.linalg.norm(p - q)
            if d == 0:
                raise InvalidSceneError("estimated position coincides with tx_pos")
            geo = dict(delay=d / SPEED_OF_LIGHT, aod=_bearing(p - q), aoa=wrap_angle(_bearing(q - p) - alpha))
        else:
            s = x[idx : idx + 2]
            idx += 2
            scat[pa.scatterer] = tuple(s)
            d1, d2 = np.linalg.norm(q - s), np.linalg.norm(s - p)
            if d1 == 0 or d2 == 0:
                raise InvalidSceneError("estimated scatterer coincides with a device")
            geo = dict(
                delay=(d1 + d2) / SPEED_OF_LIGHT,
                aod=_bearing(s - q),
                aoa=wrap_angle(_bearing(s - p) - alpha),
            )
        gain = complex(x[idx], x[idx + 1])
        idx += 2
        paths.append(PathParams(gain=gain, scatterer=pa.scatterer, **geo))
    est_scene = replace(scene, rx_pos=tuple(p), rx_orientation=alpha, scatterers=tuple(scat))
    return paths, est_scene


def _bearing_grad(v: np.ndarray) -> np.ndarray:
    """Gradient of atan2(v_y, v_x) with respect to v."""
    n2 = float(v @ v)
    if n2 == 0.0:
        raise InvalidSceneError("zero-length path segment")
    return np.array([-v[1], v[0]]) / n2


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise InvalidSceneError("zero-length path segment")
    return v / n


def jacobian_T(paths: Sequence[PathParams], scene: Scenario) -> np.ndarray:
    """Jacobian of channel parameters with respect to location parameters.

    Returns T with ``T[i, j] = d eta_i / d eta'_j``; shape ``(5K, len(eta'))``.
    """
    q, p = scene.q, scene.p
    c = SPEED_OF_LIGHT
    layout = eta_prime_layout(paths)
    col = {key: j for j, key in enumerate(layout)}
    T = np.zeros((5 * len(paths), len(layout)))
    for k, pa in enumerate(paths):
        r = 5 * k
        if pa.is_los:
            T[r, 0:2] = _unit(p - q) / c
            T[r + 1, 0:2] = _bearing_grad(p - q)
            T[r + 2, 0:2] = -_bearing_grad(q - p)
        else:
            s = np.array(scene.scatterers[pa.scatterer])
            js = col[(k, "s_x")]
            T[r, 0:2] = _unit(p - s) / c
            T[r, js : js + 2] = (_unit(s - q) + _unit(s - p)) / c
            T[r + 1, js : js + 2] = _bearing_grad(s - q)
            g = _bearing_grad(s - p)
            T[r + 2, 0:2] = -g
            T[r + 2, js : js + 2] = g
        T[r + 2, 2] = -1.0
        jh = col[(k, "h_re")]
        T[r + 3, jh] = 1.0
        T[r + 4, jh + 1] = 1.0
    return T
