"""Declarative experiment runner: sweeps, result tables, and artifacts.

An experiment config (strict JSON) names an initial measure, a target (a
benchmark field or a target measure), synthesis knobs with optional sweep
lists over (n_avg, m_width, n_osc), and integrator settings. Running it
produces ``results.csv`` with one row per sweep coordinate, a JSON manifest,
and per-row schedule/trajectory artifacts under ``rows/<key>/``. Rows are
isolated: a failing coordinate is recorded as a failed row, never aborts the
sweep, and reruns with ``resume`` recompute only missing rows.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .fields import VectorFieldSpec, benchmark_field
from .flow import IntegratorConfig, MeasureTrajectory, integrate_flow
from .measures import RNG_ALGORITHM, MeasureSpec, ParticleEnsemble, sample_measure
from .synthesis import (
    SynthesisParams,
    displacement_target_field,
    synthesize_controls,
)
from .transport import sup_w2, w2_exact

RESULTS_HEADER = "n_avg,m,n_osc,sup_w2,final_w2,max_fit_err,pieces,wall_s,status"

_FIT_KNOBS = ("feature_scale", "ridge", "grid_per_axis", "refine_steps", "refine_lr")


class ConfigError(ValueError):
    """Invalid or unparseable experiment configuration."""


def _require_keys(d: Mapping, allowed: set, required: set, where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")
    missing = required - set(d)
    if missing:
        raise ConfigError(f"missing required key(s) {sorted(missing)} in {where}")


def _int_list(value, name: str) -> tuple:
    if isinstance(value, bool):
        raise ConfigError(f"{name} must be an integer or list of integers")
    if isinstance(value, int):
        value = [value]
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{name} must be an integer or nonempty list of integers")
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise ConfigError(f"{name} entries must be integers >= 1")
        out.append(v)
    return tuple(sorted(set(out)))


@dataclass(frozen=True)
class ExperimentConfig:
    """Parsed experiment description; see :func:`ExperimentConfig.from_dict`."""

    kind: str
    initial_measure: MeasureSpec
    n_particles: int
    seed: int
    n_avg_values: tuple
    m_values: tuple
    n_osc_values: tuple
    fit_tolerance: float = 0.1
    region_margin: float = 1.5
    synthesis_seed: Optional[int] = None
    fit_options: Mapping = field(default_factory=dict)
    field_name: Optional[str] = None
    field_params: Mapping = field(default_factory=dict)
    target_measure: Optional[MeasureSpec] = None
    smoothing: float = 0.5
    method: str = "rk4"
    base_step: float = 0.01
    snap_count: int = 11
    snap_times: Optional[tuple] = None
    out_dir: Optional[str] = None
    schedule_path: Optional[str] = None

    @staticmethod
    def from_dict(raw: Mapping) -> "ExperimentConfig":
        if not isinstance(raw, Mapping):
            raise ConfigError("config must be a JSON object")
        top_allowed = {
            "kind",
            "initial_measure",
            "target_measure",
            "field",
            "n_particles",
            "synthesis",
            "integrator",
            "smoothing",
            "out_dir",
            "seed",
            "schedule",
        }
        _require_keys(raw, top_allowed, {"kind", "initial_measure", "n_particles", "synthesis", "seed"}, "config")
        kind = raw["kind"]
        if kind not in ("trajectory", "endpoint"):
            raise ConfigError(f"kind must be 'trajectory' or 'endpoint', got {kind!r}")
        if kind == "trajectory" and "field" not in raw:
            raise ConfigError("trajectory config needs a 'field' entry")
        if kind == "endpoint" and "target_measure" not in raw:
            raise ConfigError("endpoint config needs a 'target_measure' entry")

        if not isinstance(raw["seed"], int) or isinstance(raw["seed"], bool):
            raise ConfigError("seed must be an integer")
        n_particles = raw["n_particles"]
        if not isinstance(n_particles, int) or isinstance(n_particles, bool) or n_particles < 1:
            raise ConfigError("n_particles must be an integer >= 1")

        def parse_measure(entry, where):
            if not isinstance(entry, Mapping):
                raise ConfigError(f"{where} must be an object with kind/params")
            _require_keys(entry, {"kind", "params"}, {"kind"}, where)
            spec = MeasureSpec(entry["kind"], dict(entry.get("params", {})))
            if spec.kind == "translate-of-initial":
                if where != "target_measure":
                    raise ConfigError("translate-of-initial is only valid as a target_measure")
                if set(spec.params) != {"offset"}:
                    raise ConfigError("translate-of-initial takes exactly one param: offset")
            return spec

        syn = raw["synthesis"]
        if not isinstance(syn, Mapping):
            raise ConfigError("synthesis must be an object")
        syn_allowed = {"n_avg", "m_width", "n_osc", "fit_tolerance", "region_margin", "seed", *_FIT_KNOBS}
        _require_keys(syn, syn_allowed, set(), "synthesis")
        fit_options = {k: syn[k] for k in _FIT_KNOBS if k in syn}

        field_name, field_params = None, {}
        if "field" in raw:
            f = raw["field"]
            if not isinstance(f, Mapping):
                raise ConfigError("field must be an object with name/params")
            _require_keys(f, {"name", "params"}, {"name"}, "field")
            field_name, field_params = f["name"], dict(f.get("params", {}))

        method, base_step, snap_count, snap_times = "rk4", 0.01, 11, None
        if "integrator" in raw:
            integ = raw["integrator"]
            if not isinstance(integ, Mapping):
                raise ConfigError("integrator must be an object")
            _require_keys(integ, {"method", "base_step", "snap_count", "snap_times"}, set(), "integrator")
            if "snap_count" in integ and "snap_times" in integ:
                raise ConfigError("give snap_count or snap_times, not both")
            method = integ.get("method", method)
            base_step = float(integ.get("base_step", base_step))
            snap_count = int(integ.get("snap_count", snap_count))
            if snap_count < 2:
                raise ConfigError("snap_count must be >= 2")
            if "snap_times" in integ:
                snap_times = tuple(float(t) for t in integ["snap_times"])

        smoothing = float(raw.get("smoothing", 0.5))
        if smoothing <= 0:
            raise ConfigError("smoothing must be positive")
        if "schedule" in raw and not isinstance(raw["schedule"], str):
            raise ConfigError("schedule must be a path string")

        try:
            return ExperimentConfig(
                kind=kind,
                initial_measure=parse_measure(raw["initial_measure"], "initial_measure"),
                n_particles=n_particles,
                seed=raw["seed"],
                n_avg_values=_int_list(syn.get("n_avg", 1), "synthesis.n_avg"),
                m_values=_int_list(syn.get("m_width", 16), "synthesis.m_width"),
                n_osc_values=_int_list(syn.get("n_osc", 4), "synthesis.n_osc"),
                fit_tolerance=float(syn.get("fit_tolerance", 0.1)),
                region_margin=float(syn.get("region_margin", 1.5)),
                synthesis_seed=syn.get("seed"),
                fit_options=fit_options,
                field_name=field_name,
                field_params=field_params,
                target_measure=(
                    parse_measure(raw["target_measure"], "target_measure")
                    if "target_measure" in raw
                    else None
                ),
                smoothing=smoothing,
                method=method,
                base_step=base_step,
                snap_count=snap_count,
                snap_times=snap_times,
                out_dir=raw.get("out_dir"),
                schedule_path=raw.get("schedule"),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return ExperimentConfig.from_dict(raw)

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "initial_measure": self.initial_measure.to_dict(),
            "n_particles": self.n_particles,
            "seed": self.seed,
            "synthesis": {
                "n_avg": list(self.n_avg_values),
                "m_width": list(self.m_values),
                "n_osc": list(self.n_osc_values),
                "fit_tolerance": self.fit_tolerance,
                "region_margin": self.region_margin,
                **({"seed": self.synthesis_seed} if self.synthesis_seed is not None else {}),
                **dict(self.fit_options),
            },
            "integrator": {"method": self.method, "base_step": self.base_step},
        }
        if self.snap_times is not None:
            d["integrator"]["snap_times"] = list(self.snap_times)
        else:
            d["integrator"]["snap_count"] = self.snap_count
        if self.field_name is not None:
            d["field"] = {"name": self.field_name, "params": dict(self.field_params)}
        if self.target_measure is not None:
            d["target_measure"] = self.target_measure.to_dict()
            d["smoothing"] = self.smoothing
        if self.out_dir is not None:
            d["out_dir"] = self.out_dir
        if self.schedule_path is not None:
            d["schedule"] = self.schedule_path
        return d

    # -- derived pieces ----------------------------------------------------

    def measure_seeds(self) -> tuple:
        s = np.random.SeedSequence(self.seed).generate_state(2)
        return int(s[0]), int(s[1])

    def build_mu0(self) -> ParticleEnsemble:
        return sample_measure(self.initial_measure, self.n_particles, self.measure_seeds()[0])

    def build_muf(self) -> ParticleEnsemble:
        if self.target_measure is None:
            raise ConfigError("config has no target_measure")
        if self.target_measure.kind == "translate-of-initial":
            offset = np.asarray(self.target_measure.params["offset"], dtype=float)
            return self.build_mu0().translate(offset)
        return sample_measure(self.target_measure, self.n_particles, self.measure_seeds()[1])

    def build_field(self, mu0: Optional[ParticleEnsemble] = None) -> VectorFieldSpec:
        if self.kind == "trajectory":
            return benchmark_field(self.field_name, self.field_params)
        mu0 = mu0 if mu0 is not None else self.build_mu0()
        return displacement_target_field(mu0, self.build_muf(), self.smoothing)

    def integrator(self, horizon: float) -> IntegratorConfig:
        snaps = (
            np.asarray(self.snap_times, dtype=float)
            if self.snap_times is not None
            else np.linspace(0.0, horizon, self.snap_count)
        )
        return IntegratorConfig(method=self.method, base_step=self.base_step, snap_times=snaps)

    def sweep_points(self) -> list:
        return sorted(product(self.n_avg_values, self.m_values, self.n_osc_values))

    def synthesis_params(self, coords) -> SynthesisParams:
        n_avg, m, n_osc = coords
        return SynthesisParams(
            n_avg=n_avg,
            m_width=m,
            fit_tolerance=self.fit_tolerance,
            n_osc=n_osc,
            region_margin=self.region_margin,
            seed=self.seed if self.synthesis_seed is None else self.synthesis_seed,
        )


# -- result rows ---------------------------------------------------------------


def row_key(coords) -> str:
    n_avg, m, n_osc = coords
    return f"navg{n_avg}_m{m}_nosc{n_osc}"


@dataclass(frozen=True)
class ResultRow:
    """One sweep coordinate's outcome."""

    n_avg: int
    m: int
    n_osc: int
    sup_w2: float
    final_w2: float
    max_fit_err: float
    pieces: int
    wall_s: float
    status: str
    error: Optional[str] = None

    @property
    def coords(self):
        return (self.n_avg, self.m, self.n_osc)

    @property
    def key(self) -> str:
        return row_key(self.coords)

    def to_csv_line(self) -> str:
        return ",".join(
            [
                str(self.n_avg),
                str(self.m),
                str(self.n_osc),
                "%.12g" % self.sup_w2,
                "%.12g" % self.final_w2,
                "%.12g" % self.max_fit_err,
                str(self.pieces),
                "%.3f" % self.wall_s,
                self.status,
            ]
        )

    def to_dict(self) -> dict:
        d = {
            "n_avg": self.n_avg,
            "m": self.m,
            "n_osc": self.n_osc,
            "sup_w2": self.sup_w2,
            "final_w2": self.final_w2,
            "max_fit_err": self.max_fit_err,
            "pieces": self.pieces,
            "wall_s": self.wall_s,
            "status": self.status,
        }
        if self.error is not None:
            d["error"] = self.error
        return d

    @staticmethod
    def from_dict(d: Mapping) -> "ResultRow":
        return ResultRow(
            n_avg=int(d["n_avg"]),
            m=int(d["m"]),
            n_osc=int(d["n_osc"]),
            sup_w2=float(d["sup_w2"]),
            final_w2=float(d["final_w2"]),
            max_fit_err=float(d["max_fit_err"]),
            pieces=int(d["pieces"]),
            wall_s=float(d["wall_s"]),
            status=str(d["status"]),
            error=d.get("error"),
        )


@dataclass(frozen=True)
class ResultTable:
    config: ExperimentConfig
    rows: tuple
    out_dir: Path

    @property
    def all_failed(self) -> bool:
        return all(r.status == "failed" for r in self.rows)

    @property
    def any_failed(self) -> bool:
        return any(r.status == "failed" for r in self.rows)


# -- file plumbing ---------------------------------------------------------------


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_json(path: Path, obj) -> None:
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _reference_paths(out_dir: Path) -> dict:
    return {
        "mu0": out_dir / "mu0.csv",
        "muf": out_dir / "muf.csv",
        "reference": out_dir / "reference",
    }


def _prepare_shared(cfg: ExperimentConfig, out_dir: Path) -> tuple:
    """Sample inputs, build the target field, and integrate the reference."""
    mu0 = cfg.build_mu0()
    muf = cfg.build_muf() if cfg.kind == "endpoint" else None
    vf = (
        benchmark_field(cfg.field_name, cfg.field_params)
        if cfg.kind == "trajectory"
        else displacement_target_field(mu0, muf, cfg.smoothing)
    )
    icfg = cfg.integrator(vf.horizon_T)
    reference = integrate_flow(vf, mu0, icfg)

    paths = _reference_paths(out_dir)
    _atomic_write(paths["mu0"], mu0.to_csv())
    if muf is not None:
        _atomic_write(paths["muf"], muf.to_csv())
    paths["reference"].mkdir(parents=True, exist_ok=True)
    reference.save(paths["reference"])
    return mu0, muf, vf, icfg, reference


def _execute_row(cfg_json: str, coords, out_root: str) -> dict:
    """Compute one sweep row and write its artifacts; never raises.

    Top-level so process pools can pickle it; rebuilds every input from the
    config for parity between sequential and parallel execution.
    """
    cfg = ExperimentConfig.from_json(cfg_json)
    out_dir = Path(out_root)
    row_dir = out_dir / "rows" / row_key(coords)
    row_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        mu0 = cfg.build_mu0()
        muf = cfg.build_muf() if cfg.kind == "endpoint" else None
        vf = (
            benchmark_field(cfg.field_name, cfg.field_params)
            if cfg.kind == "trajectory"
            else displacement_target_field(mu0, muf, cfg.smoothing)
        )
        icfg = cfg.integrator(vf.horizon_T)
        reference = MeasureTrajectory.load(_reference_paths(out_dir)["reference"])

        result = synthesize_controls(vf, mu0, cfg.synthesis_params(coords), **dict(cfg.fit_options))
        synthesized = integrate_flow(result.schedule, mu0, icfg)

        sup_err = sup_w2(synthesized, reference)
        final_target = muf if cfg.kind == "endpoint" else reference.final
        final_err = w2_exact(synthesized.final, final_target).distance

        _atomic_write(row_dir / "schedule.json", result.schedule.to_json() + "\n")
        _write_json(row_dir / "report.json", result.report.to_json_dict())
        traj_dir = row_dir / "trajectory"
        traj_dir.mkdir(exist_ok=True)
        synthesized.save(traj_dir)

        row = ResultRow(
            n_avg=coords[0],
            m=coords[1],
            n_osc=coords[2],
            sup_w2=sup_err,
            final_w2=final_err,
            max_fit_err=result.report.max_fit_error,
            pieces=result.report.piece_count,
            wall_s=time.perf_counter() - start,
            status="ok" if result.report.tolerance_met else "tolerance-miss",
        )
    except Exception as exc:  # per-row isolation: a bad row must not kill the sweep
        row = ResultRow(
            n_avg=coords[0],
            m=coords[1],
            n_osc=coords[2],
            sup_w2=math.nan,
            final_w2=math.nan,
            max_fit_err=math.nan,
            pieces=0,
            wall_s=time.perf_counter() - start,
            status="failed",
            error=f"{type(exc).__name__}: {exc}",
        )
    _write_json(row_dir / "row.json", row.to_dict())
    return row.to_dict()


def _load_completed_row(out_dir: Path, coords) -> Optional[ResultRow]:
    path = out_dir / "rows" / row_key(coords) / "row.json"
    if not path.exists():
        return None
    try:
        row = ResultRow.from_dict(json.loads(path.read_text()))
    except (ValueError, KeyError):
        return None
    return row if row.coords == coords and row.status != "failed" else None


def _write_results_csv(out_dir: Path, rows: Sequence[ResultRow]) -> None:
    lines = [RESULTS_HEADER] + [r.to_csv_line() for r in sorted(rows, key=lambda r: r.coords)]
    _atomic_write(out_dir / "results.csv", "\n".join(lines) + "\n")


def _row_files(out_dir: Path, row: ResultRow) -> list:
    row_dir = out_dir / "rows" / row.key
    files = [row_dir / "row.json"]
    if row.status != "failed":
        files += [row_dir / "schedule.json", row_dir / "report.json"]
        traj_dir = row_dir / "trajectory"
        if traj_dir.is_dir():
            files += sorted(traj_dir.iterdir())
    return [str(p.relative_to(out_dir)) for p in files if p.exists()]


def _write_manifest(cfg: ExperimentConfig, out_dir: Path, rows: Sequence[ResultRow]) -> None:
    inputs = ["mu0.csv"] + (["muf.csv"] if cfg.kind == "endpoint" else [])
    reference_dir = out_dir / "reference"
    manifest = {
        "config": cfg.to_dict(),
        "rng": RNG_ALGORITHM,
        "results_csv": "results.csv",
        "inputs": inputs,
        "reference": sorted(str(p.relative_to(out_dir)) for p in reference_dir.iterdir()),
        "rows": {
            r.key: {"status": r.status, "files": _row_files(out_dir, r)}
            for r in sorted(rows, key=lambda r: r.coords)
        },
    }
    _write_json(out_dir / "manifest.json", manifest)


def _run_experiment(
    cfg: ExperimentConfig,
    out_dir,
    parallel: int = 1,
    resume: bool = False,
) -> ResultTable:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "rows").mkdir(exist_ok=True)
    _prepare_shared(cfg, out_dir)

    points = cfg.sweep_points()
    rows_by_coords = {}
    pending = []
    for coords in points:
        prior = _load_completed_row(out_dir, coords) if resume else None
        if prior is not None:
            rows_by_coords[coords] = prior
        else:
            pending.append(coords)

    cfg_json = json.dumps(cfg.to_dict())
    if parallel > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(
                pool.map(_execute_row, [cfg_json] * len(pending), pending, [str(out_dir)] * len(pending))
            )
        for coords, row_dict in zip(pending, results):
            rows_by_coords[coords] = ResultRow.from_dict(row_dict)
    else:
        for coords in pending:
            rows_by_coords[coords] = ResultRow.from_dict(_execute_row(cfg_json, coords, str(out_dir)))

    rows = tuple(rows_by_coords[c] for c in points)
    _write_results_csv(out_dir, rows)
    _write_manifest(cfg, out_dir, rows)
    return ResultTable(config=cfg, rows=rows, out_dir=out_dir)


def run_trajectory_experiment(cfg: ExperimentConfig, out_dir, parallel: int = 1, resume: bool = False) -> ResultTable:
    """Sweep synthesis knobs against a benchmark field and tabulate errors.

    For each sweep coordinate: synthesize a schedule, integrate it from the
    shared initial ensemble on the shared snapshot grid, and record the sup-W2
    distance to the reference trajectory plus the final-time W2.
    """
    if cfg.kind != "trajectory":
        raise ConfigError(f"trajectory experiment got a {cfg.kind!r} config")
    return _run_experiment(cfg, out_dir, parallel=parallel, resume=resume)


def run_endpoint_experiment(cfg: ExperimentConfig, out_dir, parallel: int = 1, resume: bool = False) -> ResultTable:
    """Steer the initial measure toward a target measure and tabulate errors.

    Builds the displacement-interpolation field between the sampled ensembles,
    then sweeps like the trajectory experiment. ``final_w2`` is measured
    against the target ensemble rather than the reference trajectory.
    """
    if cfg.kind != "endpoint":
        raise ConfigError(f"endpoint experiment got a {cfg.kind!r} config")
    return _run_experiment(cfg, out_dir, parallel=parallel, resume=resume)


# -- plot data -------------------------------------------------------------------

_AXIS_PRIORITY = ("n_osc", "m", "n_avg")
_AXIS_METRIC = {"n_osc": "sup_w2", "m": "max_fit_err", "n_avg": "sup_w2"}


def emit_plot_data(table: ResultTable, out_dir=None) -> list:
    """Write one CSV series per combination of non-primary sweep coordinates.

    The primary axis is the first of (n_osc, m, n_avg) that takes more than
    one value (n_osc when none does). Series pair the axis with sup_w2, except
    an m axis, which pairs with the fit error it controls. Failed rows are
    left out. Returns the written paths, one file per series, lines sorted by
    the axis value.
    """
    rows = [r for r in table.rows if r.status != "failed"]
    if not rows:
        raise ValueError("no completed rows to plot")
    out_dir = Path(out_dir) if out_dir is not None else table.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    axis = next(
        (a for a in _AXIS_PRIORITY if len({getattr(r, a) for r in rows}) > 1),
        "n_osc",
    )
    metric = _AXIS_METRIC[axis]
    others = [a for a in _AXIS_PRIORITY if a != axis]

    series = {}
    for r in rows:
        series.setdefault(tuple(getattr(r, a) for a in others), []).append(r)

    written = []
    for combo in sorted(series):
        suffix = "_".join(f"{a}{v}" for a, v in zip(others, combo))
        path = out_dir / f"plot_{axis}__{suffix}.csv"
        lines = [f"{axis},{metric}"]
        for r in sorted(series[combo], key=lambda r: getattr(r, axis)):
            lines.append(f"{getattr(r, axis)},{'%.12g' % getattr(r, metric)}")
        _atomic_write(path, "\n".join(lines) + "\n")
        written.append(path)
    return written
