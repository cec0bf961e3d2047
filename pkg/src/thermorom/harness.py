"""Experiment orchestration: training, assimilation runs, evaluation and reports.

Configuration is a JSON document with explicit keys (see :class:`ExperimentConfig`).
Relative paths inside a config file resolve against the file's directory.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (
    format_epoch,
    ingest_snapshots,
    load_basis,
    load_model,
    parse_epoch,
    preprocess_track,
    read_driver_csv,
    read_track_csv,
    save_basis,
    save_model,
)
from .drivers import driver_matrix
from .ekf import NoiseConfig, extract_current, init_filter, predict, skip_update, update_multi
from .errors import ConfigError, EmptyInput, NonFiniteState, NonPositiveMeasurement
from .grid import GridSpec, build_obs_operator
from .ident import DMDC, SINDYC_AR, RegressionConfig, fit_dmdc, fit_sindyc_ar, rescale_cadence, simulate
from .latent import fit_basis, project

log = logging.getLogger(__name__)

_PATH_FIELDS = ("assim_tracks", "withheld_tracks", "model_path", "basis_path", "drivers",
                "train_drivers", "snapshots", "out_dir")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one train/assimilate run needs.

    ``start`` and ``stop`` are epoch seconds since 2000-01-01 UTC (ISO strings are
    accepted in config files). ``train_drivers`` falls back to ``drivers``.
    """

    start: int = 0
    stop: int = 0
    assim_tracks: tuple = ()
    withheld_tracks: tuple = ()
    model_path: str = "model.rdx"
    basis_path: str = "basis.rdx"
    drivers: str = "drivers.csv"
    train_drivers: str | None = None
    snapshots: tuple = ()
    out_dir: str = "out"
    kind: str = SINDYC_AR
    r: int = 10
    n_ar: int = 5
    alpha: float = 500_000.0
    standardize: bool = True
    t2: float = 60.0
    q1: float = 1e-2
    q2: float = 1e-3
    p0_scale: float = 10.0
    q_scale: float = 1.0
    spin_up_s: float = 6 * 3600.0
    gate: float | None = None
    floor: float = 0.0
    rel_err: float = 0.05
    n_mc: int = 100
    seed: int = 0
    align_tol: float | None = None
    eval_start: int | None = None
    eval_stop: int | None = None
    plots: bool = True

    def noise(self) -> NoiseConfig:
        return NoiseConfig(q1=self.q1, q2=self.q2, p0_scale=self.p0_scale, q_scale=self.q_scale,
                           spin_up_s=self.spin_up_s)

    def as_dict(self) -> dict:
        out = asdict(self)
        for key in ("assim_tracks", "withheld_tracks", "snapshots"):
            out[key] = list(out[key])
        return out

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON of every field that can change results."""
        content = {k: v for k, v in self.as_dict().items() if k not in ("out_dir", "plots")}
        canon = json.dumps(content, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def check(self, for_train: bool = False, for_assim: bool = False) -> None:
        """Validate invariants that do not depend on file contents."""
        if self.kind not in (SINDYC_AR, DMDC):
            raise ConfigError(f"model kind must be {SINDYC_AR!r} or {DMDC!r}, got {self.kind!r}")
        if self.r < 1 or self.n_ar < 0 or not self.alpha > 0 or not self.t2 > 0:
            raise ConfigError("need r >= 1, n_ar >= 0, alpha > 0 and t2 > 0")
        if self.spin_up_s < 0:
            raise ConfigError("spin-up must be non-negative")
        needed = []
        if for_train:
            if not self.snapshots:
                raise ConfigError("training needs at least one snapshot file")
            needed += list(self.snapshots) + [self.train_drivers or self.drivers]
        if for_assim:
            if not self.start < self.stop:
                raise ConfigError(f"start {self.start} must precede stop {self.stop}")
            if not self.assim_tracks:
                raise ConfigError("at least one assimilated track is required")
            needed += list(self.assim_tracks) + list(self.withheld_tracks)
            needed += [self.drivers, self.model_path, self.basis_path]
        missing = [p for p in needed if not os.path.exists(p)]
        if missing:
            raise ConfigError(f"missing input file(s): {', '.join(missing)}")


def _coerce(name: str, value):
    if name in ("start", "stop", "eval_start", "eval_stop") and value is not None:
        return int(round(parse_epoch(str(value))))
    if name in ("assim_tracks", "withheld_tracks", "snapshots"):
        if isinstance(value, str):
            value = [value]
        return tuple(str(v) for v in value)
    return value


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then the config file, then ``overrides`` (``None`` values are ignored)."""
    known = {f.name for f in fields(ExperimentConfig)}
    merged: dict = {}
    base = Path(".")
    if path is not None:
        base = Path(path).resolve().parent
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged.update(raw)
        for key in _PATH_FIELDS:
            val = merged.get(key)
            if val is None:
                continue
            if isinstance(val, (list, tuple)):
                merged[key] = [str(base / v) for v in val]
            else:
                merged[key] = str(base / val)
    for key, val in (overrides or {}).items():
        if key not in known:
            raise ConfigError(f"unknown option {key}")
        if val is not None:
            merged[key] = val
    try:
        return ExperimentConfig(**{k: _coerce(k, v) for k, v in merged.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc


def mape(estimates, measurements) -> float:
    """Mean absolute percentage error in linear density."""
    est = np.asarray(estimates, dtype=float)
    meas = np.asarray(measurements, dtype=float)
    if est.size == 0 or meas.size == 0:
        raise EmptyInput("MAPE of an empty series")
    if est.shape != meas.shape:
        raise ValueError(f"estimate shape {est.shape} differs from measurement shape {meas.shape}")
    if not np.all(meas > 0):
        raise NonPositiveMeasurement("MAPE needs strictly positive measurements")
    return float(100.0 * np.mean(np.abs(est - meas) / meas))


# --------------------------------------------------------------------------- training

def train_models(series, drivers, r=10, kind=SINDYC_AR, n_ar=5, cfg: RegressionConfig | None = None):
    """Fit the basis, project the snapshots and identify the latent model at their cadence."""
    basis = fit_basis(series.values, r=r, grid=series.grid)
    z = project(basis, series.values)
    u = driver_matrix(drivers, series.epochs)
    cadence = series.cadence_s
    if kind == DMDC:
        model = fit_dmdc(z, u, cfg=cfg, cadence_s=cadence)
    else:
        model = fit_sindyc_ar(z, u, n_ar=n_ar, cfg=cfg, cadence_s=cadence)
    return basis, model


def run_train(config: ExperimentConfig):
    config.check(for_train=True)
    series = ingest_snapshots(list(config.snapshots))
    drivers = read_driver_csv(config.train_drivers or config.drivers)
    basis, model = train_models(series, drivers, config.r, config.kind, config.n_ar,
                                RegressionConfig(config.alpha, config.standardize))
    for p in (config.basis_path, config.model_path):
        Path(p).parent.mkdir(parents=True, exist_ok=True)
    save_basis(config.basis_path, basis)
    save_model(config.model_path, model)
    log.info("trained %s model: r=%d n_ar=%d on %d snapshots", model.kind, model.r, model.n_ar, len(series))
    return basis, model


# --------------------------------------------------------------------------- assimilation

@dataclass
class EvalReport:
    """Result of one assimilation run.

    ``summary`` rows carry satellite, role, estimate and MAPE; ``residuals`` maps
    each satellite to its per-measurement rows; ``innovations`` holds one row per
    assimilated measurement.
    """

    epochs: np.ndarray
    z_assim: np.ndarray
    z_open: np.ndarray
    trace_p: np.ndarray
    summary: list = field(default_factory=list)
    residuals: dict = field(default_factory=dict)
    innovations: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def mape_of(self, satellite: str, estimate: str = "assimilated") -> float:
        for row in self.summary:
            if row["satellite"] == satellite and row["estimate"] == estimate:
                return row["mape"]
        raise KeyError((satellite, estimate))


def _group_by_step(measurements, epochs0: int, t2: float, m: int):
    groups: dict[int, list] = {}
    dropped = 0
    for meas in measurements:
        k = (meas.epoch - epochs0) / t2
        ki = int(round(k))
        if abs(k - ki) > 1e-9 or ki < 0 or ki >= m:
            dropped += 1
            continue
        groups.setdefault(ki, []).append(meas)
    return groups, dropped


def assimilate(model, basis, grid: GridSpec, drivers, epochs, assim, withheld=(), noise: NoiseConfig | None = None,
               gate: float | None = None, floor: float = 0.0, eval_window=None) -> EvalReport:
    """Filter along ``epochs`` (uniform, spacing = filter step) and evaluate both estimates.

    ``model`` is given at its identification cadence and rescaled internally.
    Step ``k-1 -> k`` uses the driver at ``epochs[k-1]``; every assimilated
    measurement at ``epochs[k]`` is then applied in one stacked update. Open-loop
    runs the same rescaled model from the same zero state with no updates.
    """
    noise = noise or NoiseConfig()
    epochs = np.asarray(epochs, dtype=np.int64)
    t2 = float(epochs[1] - epochs[0]) if epochs.size > 1 else model.cadence_s
    m = epochs.size
    fmodel = rescale_cadence(model, t2)
    u = driver_matrix(drivers, epochs)

    groups, n_out = _group_by_step(assim, int(epochs[0]), t2, m)
    if n_out:
        log.info("%d assimilated measurements fall outside the run window", n_out)

    state = init_filter(fmodel, noise, cadence_s=t2)
    r = fmodel.r
    z_assim = np.empty((r, m))
    trace_p = np.empty(m)
    innovations = []
    for k in range(m):
        if k:
            state = predict(state, fmodel, u[:, k - 1], noise)
        obs = groups.get(k)
        if obs:
            ops = [build_obs_operator(basis, grid, o.lat, o.lt, o.alt) for o in obs]
            state, rec = update_multi(state, ops, [o.log_rho for o in obs], [o.sigma_v2 for o in obs],
                                      gate=gate, floor=floor)
            for i, o in enumerate(obs):
                innovations.append({
                    "epoch": int(epochs[k]), "satellite_id": o.satellite_id, "nu": float(rec.nu[i]),
                    "s": float(rec.s[i]), "accepted": bool(rec.accepted[i]),
                    "positive": bool(rec.positive[i]), "trace_p": rec.trace_p,
                })
        else:
            state = skip_update(state)
        z, _ = extract_current(state)
        if np.max(np.abs(z)) > 1e12:
            raise NonFiniteState(f"latent state magnitude {np.max(np.abs(z)):.3g} at epoch "
                                 f"{format_epoch(epochs[k])}; trace P = {np.trace(state.p_aug):.3g}")
        z_assim[:, k] = z
        trace_p[k] = np.trace(state.p_aug)

    z_open = simulate(fmodel, u)
    report = EvalReport(epochs, z_assim, z_open, trace_p, innovations=innovations)
    spin_end = int(epochs[0]) + noise.spin_up_s
    lo, hi = eval_window or (None, None)
    assim_ids = sorted({o.satellite_id for o in assim})
    for role, meas_list in (("assimilated", assim), ("withheld", withheld)):
        by_sat: dict[str, list] = {}
        for o in meas_list:
            by_sat.setdefault(o.satellite_id, []).append(o)
        for sat, items in sorted(by_sat.items()):
            if role == "withheld" and sat in assim_ids:
                sat = f"{sat}_withheld"
            rows = _evaluate_track(items, basis, grid, epochs, t2, z_assim, z_open, spin_end, lo, hi)
            report.residuals[sat] = rows
            used = [row for row in rows if row["in_eval"]]
            for est, key in (("assimilated", "rho_assim"), ("open_loop", "rho_open")):
                value = mape([row[key] for row in used], [row["rho_meas"] for row in used]) if used else float("nan")
                report.summary.append({"satellite": sat, "role": role, "estimate": est,
                                       "mape": value, "n": len(used)})
    return report


def _evaluate_track(items, basis, grid, epochs, t2, z_assim, z_open, spin_end, lo, hi):
    rows = []
    for o in sorted(items, key=lambda x: x.epoch):
        k = (o.epoch - int(epochs[0])) / t2
        ki = int(round(k))
        if abs(k - ki) > 1e-9 or ki < 0 or ki >= epochs.size:
            continue
        op = build_obs_operator(basis, grid, o.lat, o.lt, o.alt)
        in_eval = o.epoch >= spin_end and (lo is None or o.epoch >= lo) and (hi is None or o.epoch <= hi)
        rows.append({
            "epoch": int(o.epoch), "lat": o.lat, "lt": o.lt, "alt": o.alt, "rho_meas": o.rho,
            "rho_assim": float(10.0 ** (op.h_row @ z_assim[:, ki] + op.mu_scalar)),
            "rho_open": float(10.0 ** (op.h_row @ z_open[:, ki] + op.mu_scalar)),
            "in_eval": bool(in_eval),
        })
    return rows


def _load_tracks(paths, config: ExperimentConfig):
    out, reports = [], []
    for p in paths:
        meas, rep = preprocess_track(read_track_csv(p), t2=config.t2, rel_err=config.rel_err,
                                     n_mc=config.n_mc, seed=config.seed, align_tol=config.align_tol)
        out.extend(meas)
        reports.append({"file": str(p), **{k: v for k, v in asdict(rep).items() if k != "notes"}})
    return out, reports


def run_assimilate(config: ExperimentConfig) -> EvalReport:
    """Load inputs named by ``config``, run the filter and write the report directory."""
    config.check(for_assim=True)
    basis = load_basis(config.basis_path)
    model = load_model(config.model_path)
    if model.kind != config.kind:
        log.warning("config kind %s differs from stored model kind %s", config.kind, model.kind)
    grid = basis.grid
    if grid is None:
        raise ConfigError("basis file carries no grid description")
    drivers = read_driver_csv(config.drivers)
    assim, pre_a = _load_tracks(config.assim_tracks, config)
    withheld, pre_w = _load_tracks(config.withheld_tracks, config)
    n = int((config.stop - config.start) // config.t2)
    epochs = config.start + np.arange(n + 1, dtype=np.int64) * int(config.t2)
    report = assimilate(model, basis, grid, drivers, epochs, assim, withheld, config.noise(),
                        gate=config.gate, floor=config.floor, eval_window=(config.eval_start, config.eval_stop))
    report.metadata = {
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "versions": {"thermorom": __version__, "numpy": np.__version__},
        "preprocessing": pre_a + pre_w,
        "steps": int(epochs.size),
    }
    emit_report(report, config.out_dir, config)
    return report


# --------------------------------------------------------------------------- reports

SUMMARY_HEADER = ["satellite", "role", "estimate", "mape_percent", "n_points"]
RESIDUAL_HEADER = ["epoch_utc", "epoch_s", "lat_deg", "lt_hours", "alt_km", "rho_meas", "rho_assim",
                   "rho_open", "in_eval"]
INNOVATION_HEADER = ["epoch_utc", "satellite_id", "nu", "s", "accepted", "positive", "trace_p"]


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        out.writerows(rows)


def emit_report(report: EvalReport, out_dir, config: ExperimentConfig | None = None, plots: bool | None = None):
    """Write CSV tables, gnuplot-ready ``.dat`` series, the resolved config and figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "mape_summary.csv", SUMMARY_HEADER,
               [[r["satellite"], r["role"], r["estimate"], _fmt(r["mape"]), r["n"]] for r in report.summary])
    for sat, rows in report.residuals.items():
        _write_csv(out / f"residuals_{sat}.csv", RESIDUAL_HEADER, [
            [format_epoch(r["epoch"]), r["epoch"], _fmt(r["lat"]), _fmt(r["lt"]), _fmt(r["alt"]),
             _fmt(r["rho_meas"]), _fmt(r["rho_assim"]), _fmt(r["rho_open"]), int(r["in_eval"])]
            for r in rows])
    _write_csv(out / "innovations.csv", INNOVATION_HEADER, [
        [format_epoch(r["epoch"]), r["satellite_id"], _fmt(r["nu"]), _fmt(r["s"]), int(r["accepted"]),
         int(r["positive"]), _fmt(r["trace_p"])] for r in report.innovations])

    if config is not None:
        resolved = {"config": config.as_dict(), "config_hash": config.config_hash()}
        (out / "config_resolved.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n",
                                                  encoding="utf-8")
    (out / "metadata.json").write_text(json.dumps(report.metadata, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")

    # gnuplot: whitespace separated, '#' header, hours since the first epoch
    hours = (report.epochs - report.epochs[0]) / 3600.0
    r = report.z_assim.shape[0]
    cols = ["hours"] + [f"z{i + 1}_assim" for i in range(r)] + [f"z{i + 1}_open" for i in range(r)] + ["trace_p"]
    data = np.column_stack([hours, report.z_assim.T, report.z_open.T, report.trace_p])
    np.savetxt(out / "latent.dat", data, fmt="%.10e", header=" ".join(cols))
    for sat, rows in report.residuals.items():
        arr = np.array([[(row["epoch"] - report.epochs[0]) / 3600.0, row["rho_meas"], row["rho_assim"],
                         row["rho_open"]] for row in rows]).reshape(-1, 4)
        np.savetxt(out / f"track_{sat}.dat", arr, fmt="%.10e", header="hours rho_meas rho_assim rho_open")

    if plots if plots is not None else (config is None or config.plots):
        from . import plotting

        t0 = float(report.epochs[0])
        for sat, rows in report.residuals.items():
            plotting.plot_track_density(rows, out / f"density_{sat}.png", title=sat, t0=t0)
        plotting.plot_latent(report.epochs, report.z_assim, report.z_open, out / "latent.png")
        plotting.plot_innovations(report.innovations, out / "innovations.png", t0=t0)
        if report.summary:
            plotting.plot_mape_summary(report.summary, out / "mape_summary.png")
    return out


def evaluate_dir(out_dir, eval_start=None, eval_stop=None, spin_up_s=None):
    """Recompute the MAPE table from written residual files, optionally over a sub-window.

    Without a window the ``in_eval`` flags written by the run are used.
    """
    out = Path(out_dir)
    files = sorted(out.glob("residuals_*.csv"))
    if not files:
        raise ConfigError(f"no residual files in {out}")
    roles = {}
    summary_path = out / "mape_summary.csv"
    if summary_path.exists():
        with open(summary_path, newline="", encoding="utf-8") as fh:
            roles = {row["satellite"]: row["role"] for row in csv.DictReader(fh)}
    summary = []
    for path in files:
        sat = path.stem[len("residuals_"):]
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        t0 = min((int(r["epoch_s"]) for r in rows), default=0)
        keep = []
        for row in rows:
            ep = int(row["epoch_s"])
            if eval_start is None and eval_stop is None and spin_up_s is None:
                ok = row["in_eval"] == "1"
            else:
                ok = (eval_start is None or ep >= eval_start) and (eval_stop is None or ep <= eval_stop)
                ok = ok and (spin_up_s is None or ep >= t0 + spin_up_s)
            if ok:
                keep.append(row)
        meas = [float(r["rho_meas"]) for r in keep]
        for est, key in (("assimilated", "rho_assim"), ("open_loop", "rho_open")):
            value = mape([float(r[key]) for r in keep], meas) if keep else float("nan")
            summary.append({"satellite": sat, "role": roles.get(sat, ""), "estimate": est,
                            "mape": value, "n": len(keep)})
    return summary


# --------------------------------------------------------------------------- synthetic experiments

def run_synth(out_dir, seed: int = 0, grid: GridSpec | None = None, r_true: int = 4, amplitude: float | None = None,
              train_hours: int = 480, eval_hours: int = 96, mismatch: float = 0.1, process_noise: float = 0.0,
              rel_err: float = 0.05, negative_fraction: float = 0.0, r_model: int | None = None):
    """Write a self-contained twin experiment: training snapshots, tracks, drivers and a config.

    Training data come from the ``excite`` scenario with nominal operators. The
    evaluation window is a storm driven by operators perturbed by ``mismatch``.
    Three satellites are flown; the config assimilates ``SAT_A`` and withholds
    ``SAT_B`` and ``SAT_C``.
    """
    from .dataio import write_driver_csv, write_snapshots, write_track_csv
    from .synthtwin import (
        HOUR, OrbitSpec, TwinSpec, default_operators, fly_orbit, generate_truth,
        inject_negatives, synthesize_measurements,
    )

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = grid or GridSpec()
    amp = amplitude if amplitude is not None else 0.1 * np.sqrt(grid.size)
    ops = default_operators(r_true, amp, seed)
    train = generate_truth(TwinSpec(grid=grid, r_true=r_true, seed=seed, scenario="excite",
                                    start_epoch=120_528_000 - (train_hours + 24) * HOUR,
                                    duration_h=train_hours, amplitude=amp, operators=ops))
    truth = generate_truth(TwinSpec(grid=grid, r_true=r_true, seed=seed, scenario="storm", duration_h=eval_hours,
                                    amplitude=amp, operators=ops.perturbed(mismatch, seed + 11),
                                    process_noise=process_noise))
    write_snapshots(out / "train_snapshots.rdx", train.snapshots)
    write_driver_csv(out / "train_drivers.csv", train.drivers)
    write_driver_csv(out / "drivers.csv", truth.drivers)

    t0, t1 = int(truth.snapshots.epochs[0]), int(truth.snapshots.epochs[-1])
    epochs = np.arange(t0, t1 + 1, 60, dtype=np.int64)
    orbits = {"SAT_A": OrbitSpec(altitude_km=450.0, lt_node_h=10.0),
              "SAT_B": OrbitSpec(altitude_km=500.0, inclination_deg=89.0, period_min=94.5, lt_node_h=6.0,
                                 phase_rad=1.0),
              "SAT_C": OrbitSpec(altitude_km=400.0, inclination_deg=83.0, period_min=92.6, lt_node_h=15.5,
                                 phase_rad=2.5)}
    for i, (sat, orbit) in enumerate(orbits.items()):
        meas = synthesize_measurements(truth.snapshots, fly_orbit(orbit, epochs), rel_err=rel_err,
                                       seed=seed + i, satellite_id=sat, n_mc=10)
        rows = inject_negatives(meas, negative_fraction, seed + 100 + i)
        write_track_csv(out / f"track_{sat}.csv", rows)

    config = {
        "start": format_epoch(t0), "stop": format_epoch(t1),
        "snapshots": ["train_snapshots.rdx"], "train_drivers": "train_drivers.csv", "drivers": "drivers.csv",
        "assim_tracks": ["track_SAT_A.csv"], "withheld_tracks": ["track_SAT_B.csv", "track_SAT_C.csv"],
        "basis_path": "basis.rdx", "model_path": "model.rdx", "out_dir": "report",
        "r": r_model or r_true, "n_ar": 2, "alpha": 1e-3, "seed": seed, "rel_err": rel_err,
    }
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    return out / "config.json"


def with_overrides(config: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
