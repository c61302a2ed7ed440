"""Command line front end for the toolkit.

Subcommands cover the full workflow: simulate a recording, generate
train/validation datasets, fit the reduced force elements, validate them
inside the drive train, run a fault diagnosis, benchmark model
complexity, and calibrate isolation thresholds.

Conventions shared by every command:

* artifacts land in a fixed layout under the output root: data/ for
  recordings, models/ for fitted elements, reports/ for validation and
  diagnosis products, bench/ for complexity measurements
* every JSON artifact carries a schema_version and a meta block with the
  hash of the resolved run configuration; inputs enter that hash by
  content fingerprint, not by path, so reruns from different directories
  produce byte-identical files (measured wall-clock timings are the one
  exception and never enter hashed payloads)
* writes are atomic (temp file + rename)
* exit codes: 0 success, 1 runtime failure, 2 usage or config error;
  failures print a machine-readable error object to stderr
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .core import (Dataset, ParameterError, SchemaError, ScenarioError,
                   AlignmentError, ResampleError, TimeSeries, config_hash,
                   dataset_from_dir, dataset_to_dir, derived_rng, mse,
                   write_json_atomic, write_text_atomic)
from .plant import (PLANT_CHANNELS, PlantParams, ReferenceProfile,
                    free_equilibrium, make_cycle_reference, random_excitation,
                    simulate_plant, simulate_plant_batch)
from .plant import model_stats as plant_stats
from .surrogates import load_model, save_model
from .surrogates import model_stats as surrogate_stats
from .faults import (FAULT_MODES, ThresholdSet, calibrate_thresholds,
                     default_thresholds, load_scenario, scenario_to_dict)
from .diagnose import (DEConfig, DiagnosisReport, HybridModel, HYBRID_TAGS,
                       estimate_simultaneous, isolate, make_diagnosis_reference,
                       report_to_dict, simulate_hybrid, track_all_faults,
                       track_single_fault)
from .fit import FitConfig, element_series, fit_acausal_nn, fit_acausal_poly, fit_causal

SCHEMA_VERSION = "1"

REP_TAGS = ("causal", "poly", "posmap")

# channels used by the diagnosis trackers; thresholds put noise on these
DIAG_CHANNELS = ("i", "theta", "omega")

_SUBDIRS = ("data", "models", "reports", "bench")


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved configuration of one CLI run.

    Collects everything that determines the command's outputs: the
    subcommand, the seeds, the plant and scenario sources, the
    representation tag, noise levels, and the per-command options. Input
    files are recorded as content fingerprints so the derived hash does
    not depend on where the inputs happen to live. The output root is
    carried for bookkeeping but excluded from the hash for the same
    reason."""

    command: str
    out: str
    seeds: tuple[int, ...] = (0,)
    plant: str | None = None
    scenario: str | None = None
    rep: str | None = None
    dt: float | None = None
    method: str | None = None
    noise_pct: float = 0.0
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.command:
            raise ParameterError("command must be a non-empty string")
        if len(self.seeds) == 0:
            raise ParameterError("seeds must be non-empty")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        for label in ("plant", "scenario"):
            path = getattr(self, label)
            if path is not None and not os.path.exists(path):
                raise FileNotFoundError(f"{label} file not found: {path}")
        if self.rep is not None and self.rep not in HYBRID_TAGS:
            raise ParameterError(
                f"rep must be one of {HYBRID_TAGS}, got {self.rep!r}")
        if self.dt is not None and not self.dt > 0:
            raise ParameterError(f"dt must be positive, got {self.dt}")
        if not self.noise_pct >= 0:
            raise ParameterError(
                f"noise_pct must be >= 0, got {self.noise_pct}")

    def hash_payload(self) -> dict:
        d = {"schema_version": SCHEMA_VERSION,
             "command": self.command,
             "seeds": list(self.seeds),
             "plant": _fingerprint(self.plant),
             "scenario": _fingerprint(self.scenario),
             "rep": self.rep,
             "dt": self.dt,
             "method": self.method,
             "noise_pct": self.noise_pct,
             "options": dict(self.options)}
        return d

    @property
    def hash(self) -> str:
        return config_hash(self.hash_payload())

    def meta(self, **extra) -> dict:
        m = {"command": self.command, "config_hash": self.hash,
             "seeds": list(self.seeds)}
        m.update(extra)
        return m


def _fingerprint(path: str | None) -> str | None:
    """Content identity of an input file or directory.

    A dataset directory is identified by its meta.json (which itself
    carries the producing run's config hash); other directories by the
    names and bytes of their JSON files; a file by its bytes."""
    if path is None:
        return None
    if os.path.isdir(path):
        meta = os.path.join(path, "meta.json")
        if os.path.exists(meta):
            path = meta
        else:
            h = hashlib.sha256()
            for name in sorted(os.listdir(path)):
                fp = os.path.join(path, name)
                if name.endswith(".json") and os.path.isfile(fp):
                    h.update(name.encode())
                    with open(fp, "rb") as fh:
                        h.update(fh.read())
            return h.hexdigest()[:16]
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# validation statistics


_STAT_KEYS = ("min", "q1", "median", "q3", "max", "mean")


@dataclass(frozen=True)
class ValidationStats:
    """Per-channel spread of per-series replay MSEs for one model.

    per_channel maps channel name to {min, q1, median, q3, max, mean}.
    The quartile chain must be ordered and the mean must lie inside the
    [min, max] envelope; violations are config errors."""

    rep: str
    n_series: int
    per_channel: dict

    def __post_init__(self):
        if self.n_series < 1:
            raise ParameterError(f"need n_series >= 1, got {self.n_series}")
        for name, stats in self.per_channel.items():
            missing = [k for k in _STAT_KEYS if k not in stats]
            if missing:
                raise SchemaError(f"channel {name!r} missing stats {missing}")
            vals = [float(stats[k]) for k in _STAT_KEYS]
            if not all(np.isfinite(vals)):
                raise ParameterError(f"channel {name!r} has non-finite stats")
            if vals[0] < 0:
                raise ParameterError(f"channel {name!r} has negative MSE")
            mn, q1, med, q3, mx, mean = vals
            if not (mn <= q1 <= med <= q3 <= mx):
                raise ParameterError(
                    f"channel {name!r} quartiles out of order: {vals[:5]}")
            if not (mn <= mean <= mx):
                raise ParameterError(
                    f"channel {name!r} mean {mean} outside [{mn}, {mx}]")

    @classmethod
    def from_mses(cls, rep: str, mses: dict) -> "ValidationStats":
        """Build from {channel: [per-series mse, ...]}."""
        per = {}
        n = None
        for name, values in mses.items():
            arr = np.asarray(values, float)
            if arr.ndim != 1 or arr.size == 0:
                raise ParameterError(f"channel {name!r} needs a 1-D value list")
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise ParameterError("channels disagree on series count")
            q1, med, q3 = np.quantile(arr, [0.25, 0.5, 0.75])
            per[name] = {"min": float(arr.min()), "q1": float(q1),
                         "median": float(med), "q3": float(q3),
                         "max": float(arr.max()), "mean": float(arr.mean())}
        return cls(rep=rep, n_series=int(n), per_channel=per)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "rep": self.rep,
                "n_series": self.n_series,
                "per_channel": {k: dict(v) for k, v in self.per_channel.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "ValidationStats":
        return cls(rep=d["rep"], n_series=int(d["n_series"]),
                   per_channel=d["per_channel"])


# ---------------------------------------------------------------------------
# complexity report


@dataclass(frozen=True)
class ComplexityReport:
    """Size and cost bookkeeping for the full plant and the reduced models.

    rows maps a model tag to {states, parameters, equations,
    wall_clock_per_cycle_s, speedup_vs_full}. The speedup column must be
    consistent with the timing column and the full plant must be present
    with speedup exactly 1."""

    rows: dict
    horizon: float
    repeats: int

    def __post_init__(self):
        if "full" not in self.rows:
            raise ParameterError("rows must include the full plant")
        if self.repeats < 1:
            raise ParameterError(f"repeats must be >= 1, got {self.repeats}")
        t_full = float(self.rows["full"]["wall_clock_per_cycle_s"])
        if not t_full > 0:
            raise ParameterError("full plant timing must be positive")
        for tag, row in self.rows.items():
            for key in ("states", "parameters", "equations",
                        "wall_clock_per_cycle_s", "speedup_vs_full"):
                if key not in row:
                    raise SchemaError(f"row {tag!r} missing {key!r}")
            t = float(row["wall_clock_per_cycle_s"])
            s = float(row["speedup_vs_full"])
            if not t > 0:
                raise ParameterError(f"row {tag!r} timing must be positive")
            if abs(s - t_full / t) > 1e-9 * max(s, 1.0):
                raise ParameterError(
                    f"row {tag!r} speedup {s} inconsistent with timings")

    @classmethod
    def from_timings(cls, sizes: dict, timings: dict, horizon: float,
                     repeats: int) -> "ComplexityReport":
        """Build from {tag: (states, parameters, equations)} and {tag:
        median wall clock per cycle}."""
        t_full = float(timings["full"])
        rows = {}
        for tag, (states, n_par, n_eq) in sizes.items():
            t = float(timings[tag])
            rows[tag] = {"states": int(states), "parameters": int(n_par),
                         "equations": int(n_eq),
                         "wall_clock_per_cycle_s": t,
                         "speedup_vs_full": t_full / t}
        return cls(rows=rows, horizon=float(horizon), repeats=int(repeats))

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "horizon": self.horizon,
                "repeats": self.repeats,
                "rows": {k: dict(v) for k, v in self.rows.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "ComplexityReport":
        return cls(rows=d["rows"], horizon=float(d["horizon"]),
                   repeats=int(d["repeats"]))


# ---------------------------------------------------------------------------
# shared plumbing


def _load_plant(path: str | None) -> PlantParams:
    if path is None:
        return PlantParams()
    with open(path) as fh:
        return PlantParams.from_dict(json.load(fh))


def _require(path: str, what: str, directory: bool = False):
    if not os.path.exists(path):
        raise FileNotFoundError(f"{what} not found: {path}")
    if directory and not os.path.isdir(path):
        raise NotADirectoryError(f"{what} is not a directory: {path}")


def _outdir(cfg: ExperimentConfig, sub: str) -> str:
    d = os.path.join(cfg.out, sub)
    os.makedirs(d, exist_ok=True)
    return d


def _reference_from_meta(meta: dict) -> ReferenceProfile:
    try:
        r = meta["reference"]
        return ReferenceProfile(np.asarray(r["knots_t"], float),
                                np.asarray(r["knots_w"], float),
                                float(r["horizon"]))
    except KeyError as e:
        raise SchemaError(f"dataset meta lacks a replayable reference: {e}")


def _reference_to_dict(ref: ReferenceProfile) -> dict:
    return {"knots_t": ref.knots_t.tolist(), "knots_w": ref.knots_w.tolist(),
            "horizon": ref.horizon}


def _write_csv(path: str, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(v)) if isinstance(v, float)
                              else str(v) for v in row))
    write_text_atomic(path, "\n".join(lines) + "\n")


def _emit(payload: dict, quiet: bool):
    if not quiet:
        print(json.dumps(payload, sort_keys=True))


def _de_from_args(args, seed: int) -> DEConfig | None:
    if args.de_pop_mult is None and args.de_max_gen is None:
        return None
    kw = {"seed": seed}
    if args.de_pop_mult is not None:
        kw["pop_mult"] = args.de_pop_mult
    if args.de_max_gen is not None:
        kw["max_gen"] = args.de_max_gen
    return DEConfig(**kw)


def _load_thresholds(path: str | None) -> ThresholdSet:
    if path is None:
        return default_thresholds()
    _require(path, "thresholds file")
    with open(path) as fh:
        d = json.load(fh)
    return ThresholdSet.from_dict(d.get("thresholds", d))


def _hybrid_for(p: PlantParams, rep: str, model_path: str | None) -> HybridModel:
    if rep == "full":
        return HybridModel(params=p, tag="full")
    if model_path is None:
        raise ParameterError(f"rep {rep!r} needs a fitted model file")
    _require(model_path, "model file")
    return HybridModel(params=p, tag=rep, surrogate=load_model(model_path))


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(cfg: ExperimentConfig, args) -> dict:
    """Record one full-plant run and store it as a single-series dataset.

    The dataset meta embeds the speed reference and the applied scenario
    so a later diagnose call can replay the exact same experiment."""
    p = _load_plant(cfg.plant)
    scenario = load_scenario(cfg.scenario) if cfg.scenario else None
    dt = cfg.dt if cfg.dt is not None else 0.1
    horizon = args.horizon
    if args.reference == "cycle":
        ref = (make_cycle_reference() if horizon is None
               else make_cycle_reference(horizon=horizon))
    else:
        ref = (make_diagnosis_reference() if horizon is None
               else make_diagnosis_reference(horizon=horizon))
    ts = simulate_hybrid(HybridModel(params=p, tag="full"), reference=ref,
                         scenario=scenario, dt_out=dt)
    meta = cfg.meta(reference=_reference_to_dict(ref),
                    scenario=None if scenario is None
                    else scenario_to_dict(scenario),
                    dt=dt)
    out = os.path.join(_outdir(cfg, "data"), args.name)
    dataset_to_dir(Dataset([ts], meta), out)
    return {"outputs": [out], "n_samples": ts.n_samples}


# ---------------------------------------------------------------------------
# gen-data


def cmd_gen_data(cfg: ExperimentConfig, args) -> dict:
    """Write excitation datasets for training and validation.

    Each series drives the nominal plant with an independent band-limited
    random speed reference from the free rest pose. Per-series seeds and
    references are logged in the dataset meta so any series can be
    replayed later."""
    p = _load_plant(cfg.plant)
    dt = cfg.dt if cfg.dt is not None else 0.1
    if not args.duration > 0:
        raise ParameterError(f"duration must be positive, got {args.duration}")
    if args.n_train < 1:
        raise ParameterError(f"n_train must be >= 1, got {args.n_train}")
    if args.n_val < 0:
        raise ParameterError(f"n_val must be >= 0, got {args.n_val}")
    if not args.omega_max > 0:
        raise ParameterError(f"omega_max must be positive, got {args.omega_max}")

    x0 = free_equilibrium(p)
    outputs = []
    counts = {"train": args.n_train, "validation": args.n_val}
    for kind, n in counts.items():
        if n == 0:
            continue
        series, seeds, refs = [], [], []
        for k in range(n):
            sk = int(derived_rng(cfg.seeds[0], "gen-data", kind, k)
                     .integers(2 ** 31))
            ref = random_excitation(p, args.duration, args.omega_max, sk)
            series.append(simulate_plant(p, ref, dt_out=dt, x0=x0))
            seeds.append(sk)
            refs.append(_reference_to_dict(ref))
        meta = cfg.meta(kind=kind, series_seeds=seeds, references=refs,
                        duration=args.duration, dt=dt,
                        omega_max=args.omega_max)
        out = os.path.join(_outdir(cfg, "data"), kind)
        dataset_to_dir(Dataset(series, meta), out)
        outputs.append(out)
    return {"outputs": outputs,
            "n_series": {k: v for k, v in counts.items() if v}}


# ---------------------------------------------------------------------------
# train


def cmd_train(cfg: ExperimentConfig, args) -> dict:
    """Fit one reduced force element from a recorded dataset.

    The causal net trains on every series; the two dynamic forms fit a
    single series picked by --series. Writes the model JSON and a fit
    report side by side under models/."""
    if cfg.rep not in REP_TAGS:
        raise ParameterError(f"--rep must be one of {REP_TAGS}, got {cfg.rep!r}")
    _require(args.data, "dataset directory", directory=True)
    p = _load_plant(cfg.plant)
    ds = dataset_from_dir(args.data)
    elements = [element_series(s, p) for s in ds.series]

    kw = {"seed": cfg.seeds[0]}
    for name in ("epochs", "restarts", "batch", "hidden"):
        v = getattr(args, name)
        if v is not None:
            kw[name] = v
    for flag, name in (("lr0", "lr0"), ("lr_decay", "lr_decay"),
                       ("split_ratio", "split_ratio")):
        v = getattr(args, flag)
        if v is not None:
            kw[name] = v
    fit_cfg = FitConfig(**kw)

    if cfg.rep == "causal":
        model, report = fit_causal(Dataset(elements, dict(ds.meta)), fit_cfg)
    else:
        if not 0 <= args.series < len(elements):
            raise ParameterError(
                f"--series {args.series} out of range for {len(elements)} series")
        series = elements[args.series]
        if cfg.rep == "poly":
            model, report = fit_acausal_poly(series, fit_cfg)
        else:
            model, report = fit_acausal_nn(series, fit_cfg)

    mdir = _outdir(cfg, "models")
    model_path = os.path.join(mdir, f"{cfg.rep}.json")
    report_path = os.path.join(mdir, f"{cfg.rep}_report.json")
    save_model(model, model_path)
    write_json_atomic(report_path, {
        "schema_version": SCHEMA_VERSION, "meta": cfg.meta(),
        "rep": cfg.rep, "fit": report.to_dict()})
    return {"outputs": [model_path, report_path],
            "train_mse": report.train_mse, "test_mse": report.test_mse}


# ---------------------------------------------------------------------------
# validate


def _replay_series(model: HybridModel, recorded: TimeSeries,
                   ref: ReferenceProfile, p: PlantParams) -> TimeSeries:
    if model.tag == "full":
        x0 = free_equilibrium(p)
    else:
        # start the reduced train at the recorded initial pose, at rest
        x0 = np.array([0.0, recorded["theta"][0], 0.0, 0.0,
                       recorded["x"][0], 0.0])
    return simulate_hybrid(model, reference=ref, dt_out=recorded.dt, x0=x0)


def cmd_validate(cfg: ExperimentConfig, args) -> dict:
    """Replay validation references through each model and score it.

    Every requested representation is embedded back into the drive train
    and run over the recorded references; per-series per-channel MSEs
    against the plant recording are reduced to quartile statistics and
    also written as CSV plot data."""
    _require(args.data, "dataset directory", directory=True)
    p = _load_plant(cfg.plant)
    ds = dataset_from_dir(args.data)
    refs = ds.meta.get("references")
    if refs is None:
        raise SchemaError("dataset meta lacks replayable references; "
                          "validate needs gen-data output")
    reps = list(REP_TAGS) + ["full"] if args.rep == "all" else [args.rep]
    channels = [name for name, _ in PLANT_CHANNELS]

    rdir = _outdir(cfg, "reports")
    outputs = []
    results = {}
    for rep in reps:
        model_path = (None if rep == "full"
                      else os.path.join(args.models, f"{rep}.json"))
        model = _hybrid_for(p, rep, model_path)
        mses = {c: [] for c in channels}
        for k, recorded in enumerate(ds.series):
            ref = ReferenceProfile(np.asarray(refs[k]["knots_t"], float),
                                   np.asarray(refs[k]["knots_w"], float),
                                   float(refs[k]["horizon"]))
            replay = _replay_series(model, recorded, ref, p)
            for c in channels:
                mses[c].append(mse(recorded, replay, [c]))
        stats = ValidationStats.from_mses(rep, mses)
        jpath = os.path.join(rdir, f"validation_{rep}.json")
        cpath = os.path.join(rdir, f"validation_{rep}.csv")
        write_json_atomic(jpath, {"schema_version": SCHEMA_VERSION,
                                  "meta": cfg.meta(rep=rep),
                                  "stats": stats.to_dict()})
        _write_csv(cpath, ["series", "channel", "mse"],
                   [(k, c, mses[c][k]) for k in range(len(ds.series))
                    for c in channels])
        outputs += [jpath, cpath]
        results[rep] = {c: stats.per_channel[c]["median"] for c in ("x", "v", "F")}
    return {"outputs": outputs, "median_mse": results}


# ---------------------------------------------------------------------------
# diagnose


def cmd_diagnose(cfg: ExperimentConfig, args) -> dict:
    """Track fault parameters against an observed recording and isolate.

    The observed dataset must carry its speed reference in meta (simulate
    writes one). The tracker runs either every fault mode or the single
    mode picked with --method, then the threshold test turns estimates
    into a verdict."""
    _require(args.data, "dataset directory", directory=True)
    p = _load_plant(cfg.plant)
    ds = dataset_from_dir(args.data)
    observed = ds.series[args.series]
    ref = _reference_from_meta(ds.meta)
    rep = cfg.rep or "full"
    model = _hybrid_for(p, rep, args.model)
    de = _de_from_args(args, cfg.seeds[0])
    thresholds = _load_thresholds(args.thresholds)

    if cfg.method not in (None, "all"):
        if cfg.method not in FAULT_MODES[1:]:
            raise ParameterError(
                f"--method must be 'all' or one of {FAULT_MODES[1:]}")
        row = track_single_fault(model, observed, cfg.method, reference=ref,
                                 de=de, seed=cfg.seeds[0])
        report = DiagnosisReport(rows={cfg.method: row},
                                 meta={"seed": cfg.seeds[0], "tag": rep})
    else:
        report = track_all_faults(model, observed, reference=ref, de=de,
                                  seed=cfg.seeds[0])
    if args.joint:
        joint = estimate_simultaneous(model, observed, reference=ref, de=de,
                                      seed=cfg.seeds[0])
        report = dataclasses.replace(report, joint=joint)
    verdict = isolate(report, thresholds)
    report = report.with_verdict(verdict, thresholds)

    rdir = _outdir(cfg, "reports")
    path = os.path.join(rdir, "diagnosis.json")
    write_json_atomic(path, {"schema_version": SCHEMA_VERSION,
                             "meta": cfg.meta(rep=rep),
                             "report": report_to_dict(report)})
    return {"outputs": [path], "verdict": verdict}


# ---------------------------------------------------------------------------
# bench


def _median_timing(run, repeats: int) -> tuple[float, float, float]:
    run()  # warm-up, compiles kernels and fills caches
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        run()
        samples.append(time.perf_counter() - t0)
    arr = np.asarray(samples)
    return float(np.median(arr)), float(arr.min()), float(arr.max())


def cmd_bench(cfg: ExperimentConfig, args) -> dict:
    """Measure model sizes and switching-cycle wall clock.

    Times the full plant and every fitted element over the standard
    cycle (median of --repeats runs after a warm-up), derives speedups,
    and probes how the plant's per-step cost grows with the number of
    rail segments. Timings are measured quantities and stay out of the
    hashed meta."""
    p = _load_plant(cfg.plant)
    ref = make_cycle_reference()
    repeats = args.repeats
    if repeats < 1:
        raise ParameterError(f"--repeats must be >= 1, got {repeats}")

    sizes = {"full": (plant_stats(p)["states"], plant_stats(p)["parameters"],
                      plant_stats(p)["equations"])}
    timings, spread = {}, {}
    t, lo, hi = _median_timing(
        lambda: simulate_plant(p, ref, dt_out=0.1), repeats)
    timings["full"], spread["full"] = t, (lo, hi)

    for rep in REP_TAGS:
        model_path = os.path.join(args.models, f"{rep}.json")
        if not os.path.exists(model_path):
            continue
        model = _hybrid_for(p, rep, model_path)
        st = surrogate_stats(model.surrogate)
        sizes[rep] = (st["variables"], st["parameters"], st["equations"])
        t, lo, hi = _median_timing(
            lambda m=model: simulate_hybrid(m, reference=ref, dt_out=0.1),
            repeats)
        timings[rep], spread[rep] = t, (lo, hi)
    if len(sizes) == 1:
        raise ParameterError(f"no fitted models found under {args.models}")

    report = ComplexityReport.from_timings(sizes, timings, ref.horizon, repeats)

    # the cost probe runs a small batch so the python dispatch overhead,
    # which does not depend on the chain length, is shared and the
    # O(n_seg) integration work dominates the measurement; the fastest
    # repeat is the noise-robust estimate
    probe_ref = ReferenceProfile(np.array([0.0, 0.5, 1.0]),
                                 np.array([0.0, 7.2, 7.2]), 1.0)
    probe_B = 8
    probe_steps = round(probe_ref.horizon / 1e-3)
    probe = []
    for n_seg in args.nprobe:
        pn = dataclasses.replace(p, n_seg=int(n_seg))
        refs = [probe_ref] * probe_B
        simulate_plant_batch(pn, refs)
        samples = []
        for _ in range(max(repeats, 3)):
            t0 = time.perf_counter()
            simulate_plant_batch(pn, refs)
            samples.append(time.perf_counter() - t0)
        probe.append({"n_seg": int(n_seg), "states": pn.n_states,
                      "per_step_s": min(samples) / probe_steps / probe_B})

    bdir = _outdir(cfg, "bench")
    jpath = os.path.join(bdir, "complexity.json")
    write_json_atomic(jpath, {
        "schema_version": SCHEMA_VERSION, "meta": cfg.meta(),
        "report": report.to_dict(),
        "timing_spread_s": {k: list(v) for k, v in spread.items()},
        "nprobe": probe})
    cpath = os.path.join(bdir, "cycles.csv")
    _write_csv(cpath, ["model", "states", "parameters", "equations",
                       "wall_clock_per_cycle_s", "speedup_vs_full"],
               [(tag, r["states"], r["parameters"], r["equations"],
                 r["wall_clock_per_cycle_s"], r["speedup_vs_full"])
                for tag, r in report.rows.items()])
    npath = os.path.join(bdir, "nprobe.csv")
    _write_csv(npath, ["n_seg", "states", "per_step_s"],
               [(r["n_seg"], r["states"], r["per_step_s"]) for r in probe])
    return {"outputs": [jpath, cpath, npath],
            "speedup": {tag: report.rows[tag]["speedup_vs_full"]
                        for tag in report.rows}}


# ---------------------------------------------------------------------------
# thresholds


def cmd_thresholds(cfg: ExperimentConfig, args) -> dict:
    """Calibrate isolation thresholds from nominal-run scatter.

    Noise levels default to a percentage of each diagnosis channel's RMS
    on a clean cycle recording. Passing a fitted model makes calibration
    run on the fast reduced train instead of the full plant."""
    p = _load_plant(cfg.plant)
    ref = make_cycle_reference()
    clean = simulate_plant(p, ref)
    sigma = {c: cfg.noise_pct / 100.0 * float(np.sqrt(np.mean(clean[c] ** 2)))
             for c in DIAG_CHANNELS}
    model = None
    if args.model is not None:
        rep = cfg.rep
        if rep is None:
            raise ParameterError("--model needs --rep to name its family")
        model = _hybrid_for(p, rep, args.model)
    de = _de_from_args(args, cfg.seeds[0])
    ts = calibrate_thresholds(p, sigma, trials=args.trials, seed=cfg.seeds[0],
                              reference=ref, model=model, de=de)
    rdir = _outdir(cfg, "reports")
    path = os.path.join(rdir, "thresholds.json")
    write_json_atomic(path, {"schema_version": SCHEMA_VERSION,
                             "meta": cfg.meta(),
                             "noise_sigma": sigma, "trials": args.trials,
                             "thresholds": ts.to_dict()})
    return {"outputs": [path], "thresholds": ts.to_dict()}


# ---------------------------------------------------------------------------
# parser


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0,
                        help="base seed for every random draw")
    common.add_argument("--out", default="switchdiag_out",
                        help="output root (fixed data/models/reports/bench "
                             "layout underneath)")
    common.add_argument("--plant", default=None,
                        help="plant parameter JSON (defaults built in)")
    common.add_argument("--dt", type=float, default=None,
                        help="output sample period in seconds")
    common.add_argument("--method", default=None,
                        help="diagnose: 'all' or a single fault mode")
    common.add_argument("--quiet", action="store_true",
                        help="suppress the success summary line")

    top = _Parser(prog="switchdiag",
                  description="rail switch simulation, model reduction, "
                              "and fault diagnosis")
    sub = top.add_subparsers(dest="cmd", required=True)

    ps = sub.add_parser("simulate", parents=[common],
                        help="record one full-plant run")
    ps.add_argument("--scenario", default=None,
                    help="fault scenario JSON to apply")
    ps.add_argument("--reference", choices=("cycle", "diagnosis"),
                    default="cycle")
    ps.add_argument("--horizon", type=float, default=None)
    ps.add_argument("--name", default="simulate",
                    help="dataset directory name under data/")

    pg = sub.add_parser("gen-data", parents=[common],
                        help="generate train/validation excitation datasets")
    pg.add_argument("--n-train", type=int, default=15)
    pg.add_argument("--n-val", type=int, default=25)
    pg.add_argument("--duration", type=float, default=100.0)
    pg.add_argument("--omega-max", type=float, default=6.0)

    pt = sub.add_parser("train", parents=[common],
                        help="fit a reduced force element")
    pt.add_argument("--rep", required=True, choices=REP_TAGS)
    pt.add_argument("--data", required=True,
                    help="training dataset directory")
    pt.add_argument("--series", type=int, default=0,
                    help="series index for the single-series fits")
    pt.add_argument("--epochs", type=int, default=None)
    pt.add_argument("--restarts", type=int, default=None)
    pt.add_argument("--batch", type=int, default=None)
    pt.add_argument("--hidden", type=int, default=None)
    pt.add_argument("--lr0", type=float, default=None)
    pt.add_argument("--lr-decay", type=float, default=None)
    pt.add_argument("--split-ratio", type=float, default=None)

    pv = sub.add_parser("validate", parents=[common],
                        help="score fitted elements inside the drive train")
    pv.add_argument("--data", required=True,
                    help="validation dataset directory (gen-data output)")
    pv.add_argument("--models", default=None,
                    help="directory of fitted model JSONs "
                         "(default <out>/models)")
    pv.add_argument("--rep", choices=REP_TAGS + ("full", "all"),
                    default="all")

    pd = sub.add_parser("diagnose", parents=[common],
                        help="track fault parameters against a recording")
    pd.add_argument("--data", required=True,
                    help="observed dataset directory (simulate output)")
    pd.add_argument("--model", default=None,
                    help="fitted surrogate JSON; omit to use the full plant")
    pd.add_argument("--rep", choices=REP_TAGS, default=None,
                    help="surrogate family of --model")
    pd.add_argument("--series", type=int, default=0)
    pd.add_argument("--thresholds", default=None,
                    help="thresholds JSON (default floor values)")
    pd.add_argument("--joint", action="store_true",
                    help="also run the simultaneous estimate")
    pd.add_argument("--de-pop-mult", type=int, default=None)
    pd.add_argument("--de-max-gen", type=int, default=None)

    pb = sub.add_parser("bench", parents=[common],
                        help="measure model sizes and cycle wall clock")
    pb.add_argument("--models", default=None,
                    help="directory of fitted model JSONs "
                         "(default <out>/models)")
    pb.add_argument("--repeats", type=int, default=5)
    pb.add_argument("--nprobe", type=lambda s: [int(v) for v in s.split(",")],
                    default=[5, 10, 20, 40],
                    help="comma-separated segment counts for the cost probe")

    ph = sub.add_parser("thresholds", parents=[common],
                        help="calibrate isolation thresholds")
    ph.add_argument("--model", default=None,
                    help="fitted surrogate JSON to diagnose with")
    ph.add_argument("--rep", choices=REP_TAGS, default=None,
                    help="surrogate family of --model")
    ph.add_argument("--trials", type=int, default=10)
    ph.add_argument("--noise-pct", type=float, default=1.0)
    ph.add_argument("--de-pop-mult", type=int, default=None)
    ph.add_argument("--de-max-gen", type=int, default=None)

    return top


_OPTION_KEYS = {
    "simulate": ("reference", "horizon", "name"),
    "gen-data": ("n_train", "n_val", "duration", "omega_max"),
    "train": ("data", "series", "epochs", "restarts", "batch", "hidden",
              "lr0", "lr_decay", "split_ratio"),
    "validate": ("data", "models", "rep"),
    "diagnose": ("data", "model", "series", "thresholds", "joint",
                 "de_pop_mult", "de_max_gen"),
    "bench": ("models", "repeats", "nprobe"),
    "thresholds": ("model", "trials", "de_pop_mult", "de_max_gen"),
}

# options naming an input whose content, not path, identifies the run
_INPUT_OPTIONS = ("data", "model", "models", "thresholds")

_COMMANDS = {
    "simulate": cmd_simulate,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "validate": cmd_validate,
    "diagnose": cmd_diagnose,
    "bench": cmd_bench,
    "thresholds": cmd_thresholds,
}

_USAGE_EXC = (SchemaError, ParameterError, ScenarioError, AlignmentError,
              ResampleError, FileNotFoundError, NotADirectoryError,
              json.JSONDecodeError, KeyError, TypeError)


def _config_from_args(args) -> ExperimentConfig:
    opts = {}
    for key in _OPTION_KEYS[args.cmd]:
        v = getattr(args, key, None)
        if key in _INPUT_OPTIONS and isinstance(v, str):
            v = _fingerprint(v) if os.path.exists(v) else v
        opts[key] = v
    rep = getattr(args, "rep", None)
    noise_pct = getattr(args, "noise_pct", 0.0)
    return ExperimentConfig(command=args.cmd, out=args.out,
                            seeds=(args.seed,), plant=args.plant,
                            scenario=getattr(args, "scenario", None),
                            rep=None if rep == "all" else rep,
                            dt=args.dt, method=args.method,
                            noise_pct=noise_pct, options=opts)


def _dispatch(args) -> int:
    if args.cmd in ("validate", "bench") and args.models is None:
        args.models = os.path.join(args.out, "models")
    cfg = _config_from_args(args)
    result = _COMMANDS[args.cmd](cfg, args)
    payload = {"status": "ok", "command": args.cmd,
               "config_hash": cfg.hash}
    payload.update(result)
    _emit(payload, args.quiet)
    return 0


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except _UsageError as e:
        _print_error(2, "UsageError", str(e))
        return 2
    try:
        return _dispatch(args)
    except _USAGE_EXC as e:
        _print_error(2, type(e).__name__, str(e))
        return 2
    except Exception as e:
        _print_error(1, type(e).__name__, str(e))
        return 1


def _print_error(code: int, kind: str, message: str):
    obj = {"schema_version": SCHEMA_VERSION, "status": "error",
           "error": {"type": kind, "message": message, "exit_code": code}}
    print(json.dumps(obj, sort_keys=True), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
