"""Identification, control and sizing tools for model jet engine thrust.

The package covers the full loop for small turbojets driven over a
25..100 % throttle range: a second-order gray-box thrust model with bundled
bench-identified presets (engine), synthetic data generation (simulation),
smoothing and Kalman filtering (filtering), sparse structure discovery
(sindy), parameter estimation (grayid), thrust-tracking controllers
(control) and hover propulsion sizing (sizing).  The cli module exposes the
lot as the `jetdyn` command.
"""

from .engine import (ENGINES, PRESETS, EngineSpec, JetParams, ThrustState,
                     drift, equilibrium_thrust, input_gain, input_map,
                     invert_input_map, load_params, save_params, thrust_accel)
from .simulation import (CAMPAIGNS, ExcitationSpec, Segment, SimConfig,
                         TimeSeries, excitation_rank_check, gen_excitation,
                         read_timeseries_csv, simulate, simulate_accel,
                         write_timeseries_csv)
from .filtering import (EkfModel, EkfState, SgConfig, ekf_predict, ekf_update,
                        numerical_jacobian, savgol_derivatives)
from .sindy import (LibrarySpec, SparseModel, build_library, eval_sparse_model,
                    identify_structure, monomial_exponents, stls)
from .grayid import (AugmentedState, IdConfig, augmented_jacobian,
                     batch_ls_identify, discrete_step, ekf_identify,
                     param_regressor, validation_mae)
from .control import (FlGains, LoopConfig, Reference, RefSegment, SmGains,
                      build_reference, closed_loop_sim, fl_control, sm_control,
                      tracking_accuracy)
from .sizing import (ELECTRIC_FAN, TURBOJET, PropulsionSpec, battery_mass,
                     engine_count, fuel_mass)

__version__ = "0.1.0"
