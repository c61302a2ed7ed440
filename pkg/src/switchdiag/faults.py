"""Fault scenarios for the switch mechanism and their mapping onto plant
parameters.

Four single-fault modes are modeled. Loose adjuster bolts widen the
dead-zone gap on one side (left or right), a missing bearing adds linear
friction on the drive-side rail mass, and an obstacle adds a localized
velocity-proportional drag centered at some position along the travel.
Bolt faults are expressed as gap deviations added to the nominal gap
(positive deviation = looser bolt = later contact); bearing and obstacle
faults overwrite the corresponding plant fields directly."""

import json
from dataclasses import dataclass

import numpy as np

from .core import (SCHEMA_VERSION, ParamVector, ParameterError, ScenarioError,
                   SchemaError, derived_rng, mse, write_json_atomic)
from .plant import PlantParams

FAULT_MODES = ("Nominal", "LeftBolt", "RightBolt", "MissingBearing", "Obstacle")

# Estimation bounds per mode: (name, lower, upper) in SI units.
FAULT_BOUNDS = {
    "Nominal": (),
    "LeftBolt": (("delta_gap_left", 0.0, 0.3),),
    "RightBolt": (("delta_gap_right", 0.0, 0.3),),
    "MissingBearing": (("b_extra", 0.0, 1e4),),
    "Obstacle": (("sigma_obs", 0.0, 3e5), ("x_obs", 0.9, 1.3)),
}

# Smallest threshold worth reporting per fault parameter; calibration
# never returns a value below these, even on noise-free data where the
# estimator spread collapses to solver tolerance.
THRESHOLD_FLOORS = {
    "delta_gap_left": 2e-3,
    "delta_gap_right": 2e-3,
    "b_extra": 100.0,
    "sigma_obs": 5e3,
    "x_obs": 0.02,
}


@dataclass(frozen=True)
class FaultScenario:
    """A fault mode plus its parameter vector.

    theta carries exactly the parameters declared for the mode, inside
    the declared bounds; Nominal carries an empty vector."""

    mode: str
    theta: ParamVector

    def __post_init__(self):
        if self.mode not in FAULT_MODES:
            raise ScenarioError(f"unknown fault mode {self.mode!r}")
        expected = tuple(name for name, _, _ in FAULT_BOUNDS[self.mode])
        if self.theta.names != expected:
            raise ScenarioError(
                f"{self.mode} needs parameters {expected}, got {self.theta.names}")
        for name, lo, hi in FAULT_BOUNDS[self.mode]:
            v = self.theta[name]
            if not (lo <= v <= hi):
                raise ScenarioError(
                    f"{name}={v} outside [{lo}, {hi}] for mode {self.mode}")


def make_scenario(mode: str, **values) -> FaultScenario:
    """Build a scenario from keyword parameters, e.g.
    make_scenario("LeftBolt", delta_gap_left=0.05)."""
    if mode not in FAULT_MODES:
        raise ScenarioError(f"unknown fault mode {mode!r}")
    entries = []
    remaining = dict(values)
    for name, lo, hi in FAULT_BOUNDS[mode]:
        if name not in remaining:
            raise ScenarioError(f"{mode} requires parameter {name!r}")
        entries.append((name, float(remaining.pop(name)), lo, hi))
    if remaining:
        raise ScenarioError(f"unexpected parameters {sorted(remaining)} for {mode}")
    try:
        theta = ParamVector.from_entries(entries)
    except ParameterError as exc:
        raise ScenarioError(str(exc)) from None
    return FaultScenario(mode, theta)


def nominal_scenario() -> FaultScenario:
    return make_scenario("Nominal")


def apply_fault(p: PlantParams, s: FaultScenario) -> PlantParams:
    """Plant parameters with the scenario injected.

    Bolt deviations add to the nominal gaps, so applying a bolt scenario
    twice widens the gap twice; bearing and obstacle values are absolute
    sets and therefore idempotent. All other fields are untouched."""
    if s.mode == "Nominal":
        return p
    if s.mode == "LeftBolt":
        return p.replace(gap_left=p.gap_left + s.theta["delta_gap_left"])
    if s.mode == "RightBolt":
        return p.replace(gap_right=p.gap_right + s.theta["delta_gap_right"])
    if s.mode == "MissingBearing":
        return p.replace(b_extra=s.theta["b_extra"])
    return p.replace(sigma_obs=s.theta["sigma_obs"], x_obs=s.theta["x_obs"])


def scenario_to_dict(s: FaultScenario) -> dict:
    return {"schema_version": SCHEMA_VERSION, "mode": s.mode,
            "theta": s.theta.as_dict()}


def scenario_from_dict(d: dict) -> FaultScenario:
    try:
        mode = d["mode"]
        theta = d.get("theta", {})
    except (KeyError, TypeError):
        raise SchemaError("scenario must be a mapping with a 'mode' field") from None
    if not isinstance(theta, dict):
        raise SchemaError("scenario 'theta' must be a mapping")
    try:
        return make_scenario(mode, **theta)
    except TypeError:
        raise SchemaError(f"malformed scenario parameters {theta!r}") from None


def save_scenario(s: FaultScenario, path: str):
    write_json_atomic(path, scenario_to_dict(s))


def load_scenario(path: str) -> FaultScenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# isolation thresholds


@dataclass(frozen=True)
class ThresholdSet:
    """Per-fault-parameter significance levels: an estimated parameter
    counts as an active fault only when it exceeds its eps."""

    eps: dict

    def __post_init__(self):
        clean = {}
        for name, v in dict(self.eps).items():
            v = float(v)
            if not (np.isfinite(v) and v > 0):
                raise ParameterError(f"threshold {name} must be positive, got {v}")
            clean[str(name)] = v
        object.__setattr__(self, "eps", clean)

    def __getitem__(self, name: str) -> float:
        return self.eps[name]

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "eps": dict(self.eps)}

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdSet":
        try:
            return cls(d["eps"])
        except (KeyError, TypeError):
            raise SchemaError("threshold dict needs an 'eps' mapping") from None


def default_thresholds() -> ThresholdSet:
    return ThresholdSet(dict(THRESHOLD_FLOORS))


def calibrate_thresholds(p: PlantParams, noise_sigma: dict, trials: int = 10,
                         seed: int = 0, reference=None, model=None,
                         de=None) -> ThresholdSet:
    """Thresholds from the spread of nominal estimates.

    Runs `trials` single-fault diagnoses per mode on independently noisy
    copies of a nominal recording and sets each parameter's threshold to
    three sample standard deviations of its estimates, clamped below by
    THRESHOLD_FLOORS. On noise-free data the spread collapses to the
    optimizer tolerance and the floors take over. Deterministic per seed.

    noise_sigma maps channel names to additive noise levels in channel
    units. model is the hybrid used by the tracker; it defaults to the
    exact full-order hybrid, which is correct but slow, so calibration
    runs normally pass the same fitted surrogate hybrid that will do the
    diagnosis. reference and de are forwarded to the tracker."""
    from .diagnose import HybridModel, track_single_fault
    from .plant import make_cycle_reference, simulate_plant
    from .core import add_noise

    if trials < 10:
        raise ParameterError(f"need at least 10 trials, got {trials}")
    if reference is None:
        reference = make_cycle_reference()
    if model is None:
        model = HybridModel(params=p, tag="full")
    clean = simulate_plant(p, reference)
    sigma = np.array([float(noise_sigma.get(name, 0.0))
                      for name, _ in clean.channels])
    estimates = {name: [] for name in THRESHOLD_FLOORS}
    for k in range(trials):
        trial_seed = int(derived_rng(seed, "thresholds", k).integers(2 ** 31))
        observed = add_noise(clean, sigma, seed=trial_seed)
        for mode in ("LeftBolt", "RightBolt", "MissingBearing", "Obstacle"):
            res = track_single_fault(model, observed, mode,
                                     reference=reference, de=de,
                                     seed=trial_seed)
            for name, value in res.theta.as_dict().items():
                estimates[name].append(value)
    eps = {}
    for name, floor in THRESHOLD_FLOORS.items():
        spread = 3.0 * float(np.std(np.array(estimates[name]), ddof=1))
        eps[name] = max(spread, floor)
    return ThresholdSet(eps)


def fault_signature_mse(p: PlantParams, s: FaultScenario, reference=None,
                        channels=("i", "omega")) -> float:
    """Separation between the faulty and nominal responses on the chosen
    channels: mse(nominal, faulty) from the shared nominal start pose."""
    from .plant import locked_equilibrium, make_cycle_reference, simulate_plant

    if reference is None:
        reference = make_cycle_reference()
    x0 = locked_equilibrium(p, p.x_min)
    nominal = simulate_plant(p, reference, x0=x0)
    faulty = simulate_plant(apply_fault(p, s), reference, x0=x0)
    return mse(nominal, faulty, channels)
