"""Position-aided mmWave beam training: geometry, arrays, Fisher information and protocols."""
from .array import (
    CONTINUOUS,
    DISCRETE,
    Beamformer,
    BeamSet,
    beam_gain,
    codebook_directions,
    hpbw,
    make_beam,
    steering_derivative,
    steering_vector,
)
from .channel import WaveformConfig, calibrate_symbol_energy, calibrated, channel_matrices, pulse_corr, rsps, snr
from .fim import FisherMatrix, accumulate, crlb, fim_beam, peb, reb, to_db, to_eta_prime
from .geometry import (
    InvalidSceneError,
    LocationState,
    PathParams,
    Scenario,
    eta_prime_vector,
    eta_vector,
    jacobian_T,
    merge_unresolvable,
    path_params_from_scene,
    scene_paths,
)
from .harness import ConfigError, GridResult, SweepConfig, load_config, read_results, run_sweep, save_config, write_results
from .protocols import (
    CBS,
    C_JPBS,
    D_JPBS,
    ProtocolConfig,
    ProtocolTrace,
    aod_stats,
    estimator_surrogate,
    optimize_beam_directions,
    run_cbs,
    run_jpbs,
    run_protocol,
    select_active_antennas,
)

__version__ = "0.1.0"
