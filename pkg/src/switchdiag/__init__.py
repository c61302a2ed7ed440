"""Rail-switch plant simulation, reduced-order surrogates, and
optimization-based fault diagnosis."""

from .core import (AlignmentError, Dataset, FitError, ParamVector,
                   ParameterError, ResampleError, SCHEMA_VERSION, ScenarioError,
                   SchemaError, SimulationError, TimeSeries, add_noise,
                   canonical_json, config_hash, dataset_from_dir,
                   dataset_to_dir, derived_rng, mse, resample,
                   timeseries_from_csv, timeseries_to_csv, write_json_atomic,
                   write_text_atomic)
from .sim import IntegratorConfig, forward_sensitivities, gradient_check, integrate
from .plant import (PlantParams, PlantState, ReferenceProfile, free_equilibrium,
                    locked_equilibrium, make_cycle_reference, plant_jac,
                    plant_outputs, plant_rhs, rail_energy, random_excitation,
                    simulate_plant, simulate_plant_batch)
from .plant import model_stats as _plant_stats
from .surrogates import (CausalNet, DissipativePoly, PolyGMSD, PosMapGMSD,
                         PosMapNet, causal_force, causal_force_grads,
                         causal_from_params, causal_params, check_dissipative,
                         dissipative_poly_force, energy_trace, load_model,
                         model_from_dict, model_to_dict, poly_force_grads,
                         poly_forces, poly_from_params, poly_params,
                         poly_potential, posmap_force_grads, posmap_forces,
                         posmap_from_params, posmap_params, posmap_potential,
                         save_model, surrogate_vector_field)
from .surrogates import model_stats as _surrogate_stats
from .faults import (FAULT_BOUNDS, FAULT_MODES, THRESHOLD_FLOORS, FaultScenario,
                     ThresholdSet, apply_fault, calibrate_thresholds,
                     default_thresholds, fault_signature_mse, load_scenario,
                     make_scenario, nominal_scenario, save_scenario,
                     scenario_from_dict, scenario_to_dict)
from .diagnose import (DEConfig, DiagnosisReport, FaultEstimate, HybridModel,
                       diagnosis_loss, differential_evolution,
                       estimate_simultaneous, hybrid_equilibrium,
                       hybrid_from_dict, hybrid_to_dict, isolate, load_hybrid,
                       load_report, make_diagnosis_reference, report_from_dict,
                       report_to_dict, save_hybrid, save_report,
                       simulate_hybrid, track_all_faults, track_single_fault)
from .fit import (FitConfig, FitReport, element_series, fit_acausal_nn,
                  fit_acausal_poly, fit_causal, powell_finetune,
                  powell_minimize, split)
from .cli import ComplexityReport, ExperimentConfig, ValidationStats

__version__ = "0.1.0"


def model_stats(model) -> dict:
    """Size bookkeeping for any model in the toolkit: the full plant or
    one of the reduced force elements."""
    if isinstance(model, PlantParams):
        return _plant_stats(model)
    return _surrogate_stats(model)
