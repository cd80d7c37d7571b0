"""Grid sweeps over receiver positions, aggregation, and CSV output."""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np
import tomli
import tomli_w

from .channel import calibrate_symbol_energy
from .fim import to_db
from .geometry import DEFAULT_NOISE_PSD, SPEED_OF_LIGHT, Scenario
from .protocols import CBS, PROTOCOL_KINDS, ProtocolConfig, _default_epsilon_grid, cbs_transactions, run_protocol

log = logging.getLogger(__name__)

POINT_FIELDS = ("x_m", "y_m", "protocol", "snr_db", "n_trans", "n_trans_norm", "peb_db", "reb_db", "observable")
RADIAL_FIELDS = ("dist_m",) + POINT_FIELDS[2:]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    # area and sampling
    x_min: float = 0.0
    x_max: float = 40.0
    y_min: float = -20.0
    y_max: float = 20.0
    grid_step: float = 2.0
    grid_offset: float = 0.5
    exclusion_radius: float = 0.5
    realizations: int = 10
    protocols: tuple = PROTOCOL_KINDS
    seed: int = 0
    out: str = "results"
    workers: int = 1
    # scenario template
    tx_pos: tuple = (0.0, 0.0)
    rx_orientation: float = 0.0
    scatterers: tuple = ((5.0, 5.0),)
    carrier_freq: float = 60e9
    bandwidth: float = 100e6
    noise_psd: float = DEFAULT_NOISE_PSD
    n_tx: int = 64
    n_rx: int = 64
    element_spacing: Optional[float] = None
    n_symbols: int = 64
    symbol_energy: Optional[float] = None
    calibration_point: tuple = (10.0, 0.0)
    # protocol settings
    initial_active: int = 2
    initial_beams: int = 2
    hpbw_multiplier: float = 3.0
    epsilon_grid: tuple = field(default_factory=_default_epsilon_grid)
    feedback: str = "sample"
    rsps_noise: bool = False
    gain_exponent: int = 2
    resolvability: str = "standard"

    def __post_init__(self):
        tup = lambda v: tuple(tup(x) for x in v) if isinstance(v, (list, tuple)) else v
        for name in ("protocols", "tx_pos", "scatterers", "calibration_point", "epsilon_grid"):
            object.__setattr__(self, name, tup(getattr(self, name)))
        if self.element_spacing is None:
            object.__setattr__(self, "element_spacing", SPEED_OF_LIGHT / self.carrier_freq / 2)
        self.validate()

    def validate(self) -> None:
        def bad(name, why):
            raise ConfigError(f"{name}: {why} (got {getattr(self, name)!r})")

        if not self.grid_step > 0:
            bad("grid_step", "must be > 0")
        if self.realizations < 1:
            bad("realizations", "must be >= 1")
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            bad("x_max", "area bounds must satisfy x_min < x_max and y_min < y_max")
        if not 0 <= self.grid_offset < 1:
            bad("grid_offset", "must be a fraction of grid_step in [0, 1)")
        if self.carrier_freq < 1e9:
            bad("carrier_freq", "below 1 GHz; expected Hz (e.g. 60e9)")
        if not self.bandwidth > 0:
            bad("bandwidth", "must be > 0 Hz")
        if self.bandwidth > self.carrier_freq:
            bad("bandwidth", "exceeds the carrier frequency; expected Hz")
        if not 0 < self.noise_psd < 1e-12:
            bad("noise_psd", "expected W/Hz (e.g. 3.98e-21)")
        if self.n_tx < 2 or self.n_rx < 2 or self.n_symbols < 1:
            bad("n_tx", "need n_tx >= 2, n_rx >= 2, n_symbols >= 1")
        if not 0 < self.element_spacing < 1:
            bad("element_spacing", "expected meters")
        if self.symbol_energy is not None and not self.symbol_energy > 0:
            bad("symbol_energy", "must be > 0 J")
        if self.workers < 1:
            bad("workers", "must be >= 1")
        for p in self.protocols:
            if p not in PROTOCOL_KINDS:
                bad("protocols", f"unknown protocol {p!r}; choose from {PROTOCOL_KINDS}")
        if len(self.tx_pos) != 2 or any(len(s) != 2 for s in self.scatterers):
            bad("tx_pos", "positions must be 2-vectors")

    def scenario(self) -> Scenario:
        """Scenario template with ``rx_pos`` at the calibration point."""
        s = Scenario(
            tx_pos=self.tx_pos,
            rx_pos=self.calibration_point,
            rx_orientation=self.rx_orientation,
            scatterers=self.scatterers,
            carrier_freq=self.carrier_freq,
            bandwidth=self.bandwidth,
            noise_psd=self.noise_psd,
            n_tx=self.n_tx,
            n_rx=self.n_rx,
            element_spacing=self.element_spacing,
            n_symbols=self.n_symbols,
        )
        es = self.symbol_energy
        if es is None:
            es = calibrate_symbol_energy(
                s, reference=self.calibration_point, gain_exponent=self.gain_exponent, rule=self.resolvability
            )
        return replace(s, symbol_energy=es)

    def protocol_config(self, kind: str, rng_seed: int = 0) -> ProtocolConfig:
        return ProtocolConfig(
            kind=kind,
            initial_active=self.initial_active,
            initial_beams=self.initial_beams,
            hpbw_multiplier=self.hpbw_multiplier,
            epsilon_grid=self.epsilon_grid,
            rng_seed=rng_seed,
            feedback=self.feedback,
            rsps_noise=self.rsps_noise,
            gain_exponent=self.gain_exponent,
            resolvability=self.resolvability,
        )

    def grid(self) -> list[tuple[float, float]]:
        """Receiver positions, excluding points too close to the transmitter or a scatterer."""
        off = self.grid_offset * self.grid_step
        xs = np.arange(self.x_min + off, self.x_max + 1e-9, self.grid_step)
        ys = np.arange(self.y_min + off, self.y_max + 1e-9, self.grid_step)
        keep = [np.array(self.tx_pos)] + [np.array(s) for s in self.scatterers]
        pts = []
        for x in xs:
            for y in ys:
                p = np.array([x, y])
                if all(np.linalg.norm(p - k) >= self.exclusion_radius for k in keep):
                    pts.append((round(float(x), 9), round(float(y), 9)))
        return pts


_FIELD_TYPES = {f.name: f for f in fields(SweepConfig)}


def load_config(path) -> SweepConfig:
    """Read a flat TOML (``key = value``) file; missing keys take the defaults."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    for key, val in raw.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}: unknown key {key!r}")
        if isinstance(val, dict):
            raise ConfigError(f"{path}: key {key!r} must be a flat value, not a table")
    try:
        return SweepConfig(**raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def save_config(cfg: SweepConfig, path) -> None:
    data = {k: v for k, v in asdict(cfg).items() if v is not None}
    listify = lambda v: [listify(x) for x in v] if isinstance(v, (list, tuple)) else v
    data = {k: listify(v) for k, v in data.items()}
    with open(path, "wb") as fh:
        tomli_w.dump(data, fh)


# ---------------------------------------------------------------------------
# sweep


@dataclass
class PointRow:
    x_m: float
    y_m: float
    protocol: str
    snr_db: float = math.nan
    n_trans: float = math.nan
    n_trans_norm: float = math.nan
    peb_db: float = math.nan
    reb_db: float = math.nan
    observable: Optional[int] = None

    @property
    def dist(self) -> float:
        return math.hypot(self.x_m, self.y_m)


@dataclass
class RadialRow:
    dist_m: float
    protocol: str
    snr_db: float = math.nan
    n_trans: float = math.nan
    n_trans_norm: float = math.nan
    peb_db: float = math.nan
    reb_db: float = math.nan
    observable: float = math.nan


@dataclass
class GridResult:
    rows: list
    radial: list = field(default_factory=list)

    def select(self, protocol: str) -> list:
        return [r for r in self.rows if r.protocol == protocol]

    def radial_for(self, protocol: str) -> list:
        return [r for r in self.radial if r.protocol == protocol]


def _run_seed(seed: int, point: int, proto: int, realization: int) -> int:
    return int(np.random.SeedSequence([seed, point, proto, realization]).generate_state(1)[0])


def _run_point(args) -> list[PointRow]:
    cfg, scene, idx, (x, y) = args
    s = scene.with_rx((x, y))
    cbs_count = cbs_transactions(cfg.n_tx, cfg.protocol_config(CBS))
    rows = []
    for pk, kind in enumerate(PROTOCOL_KINDS):
        if kind not in cfg.protocols:
            continue
        deterministic = (kind == CBS and not cfg.rsps_noise) or (kind != CBS and cfg.feedback == "mean" and not cfg.rsps_noise)
        n_runs = 1 if deterministic else cfg.realizations
        try:
            traces = [
                run_protocol(s, cfg.protocol_config(kind, _run_seed(cfg.seed, idx, pk, r)))
                for r in range(n_runs)
            ]
        except Exception as exc:  # flagged row, never abort the sweep
            log.warning("point (%g, %g) %s failed: %s", x, y, kind, exc)
            rows.append(PointRow(x, y, kind))
            continue
        n_trans = float(np.mean([t.transactions_approx for t in traces]))
        row = PointRow(
            x,
            y,
            kind,
            snr_db=float(np.mean([t.snr_db for t in traces])),
            n_trans=n_trans,
            n_trans_norm=n_trans / cbs_count,
        )
        if kind != CBS:
            obs = all(t.observable for t in traces)
            row.observable = int(obs)
            if obs:
                row.peb_db = to_db(float(np.mean([t.peb for t in traces])))
                row.reb_db = to_db(float(np.mean([t.reb for t in traces])))
        rows.append(row)
    return rows


def radial_average(rows: list, step: float) -> list[RadialRow]:
    """Average per-point metrics over rings of width ``step`` centred on the origin."""
    groups: dict = {}
    for r in rows:
        k = int(math.floor(r.dist / step))
        groups.setdefault((r.protocol, k), []).append(r)
    out = []
    order = {p: i for i, p in enumerate(PROTOCOL_KINDS)}
    for (proto, k), rs in sorted(groups.items(), key=lambda kv: (order.get(kv[0][0], 99), kv[0][1])):

        def avg(name):
            vals = [getattr(r, name) for r in rs]
            vals = [v for v in vals if v is not None and math.isfinite(v)]
            return float(np.mean(vals)) if vals else math.nan

        obs = [r.observable for r in rs if r.observable is not None]
        out.append(
            RadialRow(
                dist_m=(k + 0.5) * step,
                protocol=proto,
                snr_db=avg("snr_db"),
                n_trans=avg("n_trans"),
                n_trans_norm=avg("n_trans_norm"),
                peb_db=avg("peb_db"),
                reb_db=avg("reb_db"),
                observable=float(np.mean(obs)) if obs else math.nan,
            )
        )
    return out


def run_sweep(cfg: SweepConfig, workers: Optional[int] = None) -> GridResult:
    """Run every configured protocol at every grid point.

    Results do not depend on ``workers``: each point and realization has its
    own seed derived from ``cfg.seed``.
    """
    workers = cfg.workers if workers is None else workers
    scene = cfg.scenario()
    jobs = [(cfg, scene, i, pt) for i, pt in enumerate(cfg.grid())]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(_run_point, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        chunks = [_run_point(j) for j in jobs]
    rows = [r for chunk in chunks for r in chunk]
    return GridResult(rows, radial_average(rows, cfg.grid_step))


# ---------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    return "" if not math.isfinite(v) else f"{v:.9g}"


def _parse(v: str, kind=float):
    if v == "":
        return None if kind is int else math.nan
    return kind(float(v)) if kind is int else float(v)


def radial_path(path) -> Path:
    path = Path(path)
    return path.with_name("radial_" + path.name)


def write_results(result: GridResult, path) -> None:
    """Write the per-point CSV and its ``radial_`` companion next to it."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(POINT_FIELDS)
            for r in result.rows:
                w.writerow([_fmt(getattr(r, f)) for f in POINT_FIELDS])
        with open(radial_path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RADIAL_FIELDS)
            for r in result.radial:
                w.writerow([_fmt(getattr(r, f)) for f in RADIAL_FIELDS])
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def read_results(path) -> GridResult:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [
            PointRow(
                x_m=float(d["x_m"]),
                y_m=float(d["y_m"]),
                protocol=d["protocol"],
                snr_db=_parse(d["snr_db"]),
                n_trans=_parse(d["n_trans"]),
                n_trans_norm=_parse(d["n_trans_norm"]),
                peb_db=_parse(d["peb_db"]),
                reb_db=_parse(d["reb_db"]),
                observable=_parse(d["observable"], int),
            )
            for d in csv.DictReader(fh)
        ]
    radial = []
    rp = radial_path(path)
    if os.path.exists(rp):
        with open(rp, newline="") as fh:
            radial = [
                RadialRow(
                    dist_m=float(d["dist_m"]),
                    protocol=d["protocol"],
                    **{k: _parse(d[k]) for k in RADIAL_FIELDS[2:]},
                )
                for d in csv.DictReader(fh)
            ]
    return GridResult(rows, radial)
