"""Beam selection protocols: received-power tree search and position-aided search.

``run_cbs`` is the conventional hierarchical search driven only by received
power. ``run_jpbs`` adds a position estimate fed back after every iteration:
the AOD uncertainty decides how many antennas the next iteration can afford,
and the next three beam directions are picked to shrink the expected position
error.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf

from .array import CONTINUOUS, DISCRETE, Beamformer, BeamSet, codebook_directions, hpbw, make_beam
from .channel import WaveformConfig, rsps, snr
from .fim import (
    ETA,
    FisherMatrix,
    accumulate,
    crlb,
    fim_batch,
    peb,
    peb_batch,
    reb,
    to_eta_prime,
)
from .geometry import (
    InvalidSceneError,
    LocationState,
    PathParams,
    Scenario,
    eta_prime_vector,
    jacobian_T,
    merge_unresolvable,
    paths_from_eta_prime,
    scene_paths,
)

CBS = "CBS"
D_JPBS = "D_JPBS"
C_JPBS = "C_JPBS"
PROTOCOL_KINDS = (CBS, D_JPBS, C_JPBS)
COVERAGE_SLACK = 0.01


def _default_epsilon_grid():
    return tuple(float(x) for x in np.round(np.arange(0, 0.3 + 1e-12, 0.0025), 6))


@dataclass(frozen=True)
class ProtocolConfig:
    kind: str = CBS
    initial_active: int = 2
    initial_beams: int = 2
    hpbw_multiplier: float = 3.0
    epsilon_grid: tuple = field(default_factory=_default_epsilon_grid)
    rng_seed: int = 0
    feedback: str = "sample"
    rsps_noise: bool = False
    gain_exponent: int = 2
    resolvability: str = "standard"

    def __post_init__(self):
        if self.kind not in PROTOCOL_KINDS:
            raise ValueError(f"unknown protocol {self.kind!r}")
        n = self.initial_active
        if n < 2 or n & (n - 1):
            raise ValueError("initial_active must be a power of two >= 2")
        if self.feedback not in ("sample", "mean"):
            raise ValueError("feedback must be 'sample' or 'mean'")

    @property
    def codebook(self) -> str:
        return CONTINUOUS if self.kind == C_JPBS else DISCRETE


@dataclass
class IterationRecord:
    index: int
    n_active: int
    beams: BeamSet
    powers: np.ndarray
    hierarchical: bool
    beam_fims: list = field(default_factory=list)
    fim: Optional[FisherMatrix] = None
    estimate: Optional[LocationState] = None
    peb: float = math.nan
    reb: float = math.nan

    @property
    def n_beams(self) -> int:
        return len(self.beams)


@dataclass
class ProtocolTrace:
    kind: str
    iterations: list
    f_sel: Beamformer
    snr_db: float
    final_fim: Optional[FisherMatrix] = None

    @property
    def transactions_approx(self) -> int:
        return sum(r.n_beams for r in self.iterations)

    @property
    def transactions_exact(self) -> int:
        return sum(r.n_beams + 2 for r in self.iterations) + 1

    @property
    def peb(self) -> float:
        return self.iterations[-1].peb

    @property
    def reb(self) -> float:
        return self.iterations[-1].reb

    @property
    def observable(self) -> bool:
        return math.isfinite(self.peb)


# ---------------------------------------------------------------------------
# helpers shared by both protocols


def _ladder(n_start: int, n_tx: int) -> list[int]:
    out, n = [], n_start
    while n <= n_tx:
        out.append(n)
        n *= 2
    if out[-1] != n_tx:
        raise ValueError(f"n_tx={n_tx} is not reachable by doubling from {n_start}")
    return out


def _measure(beams: BeamSet, paths, scene, wf, rng, noisy: bool) -> np.ndarray:
    return np.array([rsps(b, paths, scene, wf, rng if noisy else None) for b in beams])


def child_directions(parent: float, runner_up: Optional[float], n_active: int, n_children: int = 3) -> list[float]:
    """Codebook directions at ``n_active`` closest to the parent in sin-space.

    Ties (the children straddle the parent symmetrically) are broken toward
    the side of the runner-up beam of the previous level.
    """
    cands = codebook_directions(n_active)
    u = np.sin(cands)
    up = math.sin(parent)
    side = 0.0 if runner_up is None else math.copysign(1.0, math.sin(runner_up) - up)
    dist = np.round(np.abs(u - up), 9)
    prefer = np.where(np.sign(u - up) == side, 0, 1)
    order = np.lexsort((prefer, dist))
    return sorted(float(cands[k]) for k in order[:n_children])


def _winner_and_runner(beams: BeamSet, powers: np.ndarray):
    order = np.argsort(-powers, kind="stable")
    win = beams.beams[order[0]]
    run = beams.beams[order[1]] if len(order) > 1 else None
    return win, run


def initial_beams(cfg: ProtocolConfig, scene: Scenario, kind: str) -> BeamSet:
    dirs = codebook_directions(cfg.initial_beams)
    return BeamSet(tuple(make_beam(t, cfg.initial_active, scene, kind) for t in dirs), 1)


def cbs_transactions(n_tx: int, cfg: ProtocolConfig = ProtocolConfig()) -> int:
    """Approximate transaction count of the conventional search (scene independent)."""
    levels = len(_ladder(cfg.initial_active, n_tx))
    return cfg.initial_beams + 3 * (levels - 1)


# ---------------------------------------------------------------------------
# conventional protocol


def run_cbs(scene: Scenario, cfg: ProtocolConfig = ProtocolConfig(), wf: Optional[WaveformConfig] = None) -> ProtocolTrace:
    """Hierarchical received-power search with the 4-phase codebook."""
    if cfg.kind != CBS:
        raise ValueError("run_cbs needs a CBS config")
    rng = np.random.default_rng(cfg.rng_seed)
    paths = scene_paths(scene, cfg.resolvability)
    ladder = _ladder(cfg.initial_active, scene.n_tx)
    beams = initial_beams(cfg, scene, DISCRETE)
    records = []
    for i, n in enumerate(ladder, start=1):
        if i > 1:
            win, run = _winner_and_runner(records[-1].beams, records[-1].powers)
            dirs = child_directions(win.pointing, run.pointing if run else None, n)
            beams = BeamSet(tuple(make_beam(t, n, scene, DISCRETE) for t in dirs), i)
        powers = _measure(beams, paths, scene, wf, rng, cfg.rsps_noise)
        records.append(IterationRecord(i, n, beams, powers, hierarchical=True))
    f_sel = records[-1].beams.beams[int(np.argmax(records[-1].powers))]
    return ProtocolTrace(CBS, records, f_sel, snr(f_sel, paths, scene, wf, cfg.gain_exponent))


# ---------------------------------------------------------------------------
# position-aided protocol


def estimator_surrogate(J: FisherMatrix, truth, rng: Optional[np.random.Generator]) -> Optional[LocationState]:
    """Draw an estimate from a Gaussian centered at the truth with the CRLB covariance.

    ``truth`` is either the full location-parameter vector (all nuisance
    parameters are then drawn jointly and returned in ``nuisance``) or just
    ``[p_x, p_y, alpha]``. With ``rng=None`` the estimate is the mean itself.
    Returns None when ``J`` is unobservable.
    """
    cov = crlb(J)
    if cov is None:
        return None
    cov = (cov + cov.T) / 2
    truth = np.asarray(truth, dtype=float)
    n = len(truth)
    sub = cov[:n, :n]
    w, V = np.linalg.eigh(sub)
    z = np.zeros(n) if rng is None else rng.standard_normal(n)
    draw = truth + V @ (np.sqrt(np.clip(w, 0, None)) * z)
    return LocationState(
        position=draw[:2].copy(),
        orientation=float(np.mod(draw[2], 2 * np.pi)),
        covariance=cov[:3, :3].copy(),
        nuisance=draw[3:].copy(),
    )


def aod_stats(state: LocationState, scene: Scenario) -> tuple[float, float]:
    """AOD estimate and its linearized standard deviation."""
    v = np.asarray(state.position) - scene.q
    r2 = float(v @ v)
    if r2 == 0.0:
        raise ValueError("estimated position coincides with the transmitter; AOD undefined")
    theta = math.atan2(v[1], v[0])
    g = np.array([-v[1], v[0]]) / r2
    var = float(g @ state.covariance[:2, :2] @ g)
    return theta, math.sqrt(max(var, 0.0))


def _visible(theta: float) -> float:
    """Fold an angle into [-pi/2, pi/2]; a ULA cannot tell front from back."""
    return math.asin(max(-1.0, min(1.0, math.sin(theta))))


def select_active_antennas(
    theta_hat: Optional[float],
    sigma: Optional[float],
    n_prev: int,
    scene: Scenario,
    kind: str = CONTINUOUS,
    multiplier: float = 3.0,
) -> tuple[int, bool]:
    """Pick the next number of active antennas from the doubling ladder.

    Returns ``(n_next, hierarchical)``; the hierarchical branch doubles the
    previous count and is taken when no estimate exists or the AOD spread is
    too large for ``2 * n_prev`` antennas.
    """
    n2 = 2 * n_prev
    if theta_hat is None or sigma is None or not math.isfinite(sigma):
        return n2, True
    th = _visible(theta_hat)
    if sigma >= multiplier * hpbw(n2, th, scene, kind):
        return n2, True
    n = n2
    for cand in _ladder(n2, scene.n_tx):
        if multiplier * hpbw(cand, th, scene, kind) >= sigma:
            n = cand
    return n, False


def _planning_objective(theta_sets, n_active, kind, J_prev, est_paths, est_scene, wf):
    """PEB^2 after adding the beams in each row of ``theta_sets`` to ``J_prev``."""
    theta_sets = np.asarray(theta_sets, dtype=float)
    uniq, inv = np.unique(theta_sets, return_inverse=True)
    inv = inv.reshape(theta_sets.shape)
    W = np.stack([make_beam(t, n_active, est_scene, kind).weights for t in uniq], axis=1)
    per_beam = fim_batch(W, est_paths, est_scene, wf)
    J = J_prev.entries[None] + per_beam[inv].sum(axis=1)
    T = jacobian_T(est_paths, est_scene)
    Jp = np.einsum("ia,mij,jb->mab", T, J, T)
    return peb_batch(Jp) ** 2


def aod_coverage(theta_sets, theta_hat: float, sigma: float, width: float) -> np.ndarray:
    """Probability mass of N(theta_hat, sigma^2) inside the union of half-power intervals.

    Every beam in a row of ``theta_sets`` is modeled as covering
    ``[theta - width/2, theta + width/2]``.
    """
    theta_sets = np.atleast_2d(np.asarray(theta_sets, dtype=float))
    if sigma <= 0:
        return np.array([float(np.any(np.abs(row - theta_hat) <= width / 2)) for row in theta_sets])
    out = np.empty(len(theta_sets))
    for m, row in enumerate(theta_sets):
        ivs = sorted((t - width / 2, t + width / 2) for t in row)
        merged = [list(ivs[0])]
        for lo, hi in ivs[1:]:
            if lo <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], hi)
            else:
                merged.append([lo, hi])
        z = (np.array(merged) - theta_hat) / (sigma * math.sqrt(2))
        out[m] = 0.5 * float(np.sum(erf(z[:, 1]) - erf(z[:, 0])))
    return out


def optimize_beam_directions(
    theta_hat: float,
    sigma: float,
    J_prev: FisherMatrix,
    est_paths: Sequence[PathParams],
    est_scene: Scenario,
    n_active: int,
    kind: str,
    epsilon_grid: Sequence[float] = _default_epsilon_grid(),
    wf: Optional[WaveformConfig] = None,
    coverage_slack: Optional[float] = COVERAGE_SLACK,
) -> tuple[float, float, float]:
    """Three pointing directions minimizing the planned position error.

    ``J_prev`` and ``est_paths`` must describe the *estimated* channel; the
    objective is the trace of the position block of the inverse FIM after
    adding the three candidate beams. Candidates must first cover the AOD
    region: only sets whose half-power intervals capture within
    ``coverage_slack`` of the best achievable AOD probability mass compete on
    the objective. ``coverage_slack=None`` drops the coverage requirement.
    """
    wf = WaveformConfig.from_scene(est_scene) if wf is None else wf
    th = _visible(theta_hat)
    if kind == CONTINUOUS:
        eps = np.asarray(epsilon_grid, dtype=float)
        sets = np.stack(
            [np.full_like(eps, th), np.clip(th + eps, -np.pi / 2, np.pi / 2), np.clip(th - eps, -np.pi / 2, np.pi / 2)],
            axis=1,
        )
        fallback = sets[0]
    else:
        cb = codebook_directions(n_active)
        i0 = int(np.argmin(np.abs(cb - th)))
        t0 = float(cb[i0])
        spacing = max(abs(cb[min(i0 + 1, len(cb) - 1)] - t0), abs(t0 - cb[max(i0 - 1, 0)]))
        window = max(sigma, spacing) + spacing
        cands = sorted({float(t) for t in cb if abs(t - th) <= window + 1e-12} | {t0})
        pairs = list(itertools.combinations_with_replacement(cands, 2))
        sets = np.array([(t0, a, b) for a, b in pairs])
        fallback = np.array([t0, cb[max(i0 - 1, 0)], cb[min(i0 + 1, len(cb) - 1)]])

    obj = _planning_objective(sets, n_active, kind, J_prev, est_paths, est_scene, wf)
    if coverage_slack is not None:
        cov = aod_coverage(sets, th, sigma, hpbw(n_active, th, est_scene, kind))
        obj = np.where(cov >= cov.max() - coverage_slack, obj, np.inf)
    if not np.isfinite(obj).any():
        return tuple(float(x) for x in fallback)
    return tuple(float(x) for x in sets[int(np.argmin(obj))])


def _estimated_channel(state: LocationState, paths, scene: Scenario, rule: str):
    x = np.concatenate([state.beta, state.nuisance])
    try:
        est_paths, est_scene = paths_from_eta_prime(x, paths, scene)
    except InvalidSceneError:
        # drop scatterer paths whose estimate collapsed onto a device
        los_only = [pa for pa in paths if pa.is_los][:1]
        if not los_only:
            return None, None
        x_los = np.concatenate([state.beta, state.nuisance[_los_gain_slice(paths)]])
        est_paths, est_scene = paths_from_eta_prime(x_los, los_only, scene)
    return merge_unresolvable(est_paths, est_scene, rule), est_scene


def _los_gain_slice(paths) -> slice:
    off = 0
    for pa in paths:
        if pa.is_los:
            return slice(off, off + 2)
        off += 4
    raise ValueError("no LOS path")


def run_jpbs(scene: Scenario, cfg: ProtocolConfig, wf: Optional[WaveformConfig] = None) -> ProtocolTrace:
    """Joint positioning and beam selection (discrete or continuous codebook)."""
    if cfg.kind not in (D_JPBS, C_JPBS):
        raise ValueError("run_jpbs needs a D_JPBS or C_JPBS config")
    wf = WaveformConfig.from_scene(scene) if wf is None else wf
    rng = np.random.default_rng(cfg.rng_seed)
    kind = cfg.codebook
    paths = scene_paths(scene, cfg.resolvability)
    T = jacobian_T(paths, scene)
    truth = eta_prime_vector(paths, scene)

    n = cfg.initial_active
    beams = initial_beams(cfg, scene, kind)
    hierarchical = True
    records: list[IterationRecord] = []
    J_acc = None
    while True:
        W = beams.weight_matrix()
        beam_fims = [FisherMatrix(J, ETA, len(paths)) for J in fim_batch(W, paths, scene, wf)]
        J_acc = accumulate(([J_acc] if J_acc is not None else []) + beam_fims)
        powers = _measure(beams, paths, scene, wf, rng, cfg.rsps_noise)
        Jp = to_eta_prime(J_acc, T)
        est = estimator_surrogate(Jp, truth, rng if cfg.feedback == "sample" else None)
        records.append(
            IterationRecord(len(records) + 1, n, beams, powers, hierarchical, beam_fims, J_acc, est, peb(Jp), reb(Jp))
        )
        if n >= scene.n_tx:
            break

        theta_hat = sigma = None
        if est is not None:
            try:
                theta_hat, sigma = aod_stats(est, scene)
            except ValueError:
                est = None
        n_next, hierarchical = select_active_antennas(theta_hat, sigma, n, scene, kind, cfg.hpbw_multiplier)
        dirs = None
        if not hierarchical:
            est_paths, est_scene = _estimated_channel(est, paths, scene, cfg.resolvability)
            if est_paths:
                W_all = np.concatenate([r.beams.weight_matrix() for r in records], axis=1)
                J_prev = FisherMatrix(fim_batch(W_all, est_paths, est_scene, wf).sum(axis=0), ETA, len(est_paths))
                dirs = optimize_beam_directions(
                    theta_hat, sigma, J_prev, est_paths, est_scene, n_next, kind, cfg.epsilon_grid, wf
                )
            else:
                n_next, hierarchical = 2 * n, True
        if hierarchical:
            win, run = _winner_and_runner(records[-1].beams, records[-1].powers)
            dirs = child_directions(win.pointing, run.pointing if run else None, n_next)
        n = n_next
        beams = BeamSet(tuple(make_beam(t, n, scene, kind) for t in dirs), len(records) + 1)

    last = records[-1]
    f_sel = last.beams.beams[int(np.argmax(last.powers))]
    final = to_eta_prime(J_acc, T)
    return ProtocolTrace(cfg.kind, records, f_sel, snr(f_sel, paths, scene, wf, cfg.gain_exponent), final)


def run_protocol(scene: Scenario, cfg: ProtocolConfig, wf: Optional[WaveformConfig] = None) -> ProtocolTrace:
    return run_cbs(scene, cfg, wf) if cfg.kind == CBS else run_jpbs(scene, cfg, wf)


# ---------------------------------------------------------------------------
# trace records

TRACE_FIELDS = (
    "iteration",
    "n_active",
    "n_beams",
    "pointing_rad",
    "rsps",
    "hierarchical",
    "p_hat_x",
    "p_hat_y",
    "alpha_hat",
    "peb_m",
    "reb_rad",
)


def trace_rows(trace: ProtocolTrace) -> list[dict]:
    rows = []
    for r in trace.iterations:
        est = r.estimate
        rows.append(
            {
                "iteration": r.index,
                "n_active": r.n_active,
                "n_beams": r.n_beams,
                "pointing_rad": ";".join(f"{b.pointing:.9g}" for b in r.beams),
                "rsps": ";".join(f"{p:.9g}" for p in r.powers),
                "hierarchical": int(r.hierarchical),
                "p_hat_x": "" if est is None else f"{est.position[0]:.9g}",
                "p_hat_y": "" if est is None else f"{est.position[1]:.9g}",
                "alpha_hat": "" if est is None else f"{est.orientation:.9g}",
                "peb_m": "" if not math.isfinite(r.peb) else f"{r.peb:.9g}",
                "reb_rad": "" if not math.isfinite(r.reb) else f"{r.reb:.9g}",
            }
        )
    return rows


def write_trace(trace: ProtocolTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
        w.writeheader()
        w.writerows(trace_rows(trace))


def read_trace(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
