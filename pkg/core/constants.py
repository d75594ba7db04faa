# ========== NV Ensemble Constants ==========
ZERO_FIELD_SPLITTING_HZ = 2.87e9
GAMMA_E_HZ_PER_T = 28.024e9
HYPERFINE_SPLIT_HZ = 2.158e6
LINEWIDTH_HZ = 1.0e6
CONTRAST = 0.0015
PHOTON_RATE = 7.5e14
DDDT_HZ_PER_K = -74.0e3

# First-order Zeeman bound
MAX_BIAS_FIELD_T = 0.01

HYPERFINE_INDICES = [-1, 0, 1]
BRANCHES = [1, -1]

# Lorentzian lineshape factor of the shot-noise limit
LORENTZIAN_SHAPE_FACTOR = 4.0 / (3.0 * 3.0 ** 0.5)

# ========== Drive / Detector Constants ==========
CARRIER_HZ = 2.8525e9
FM_DEVIATION_HZ = 400e3
FM_RATE_HZ = 1.0e3
SAMPLES_PER_MOD_PERIOD = 50

# Lumped gain that gives a ~2.2 nV/Hz discriminator at the default operating point
RESPONSIVITY_GAIN = 7.5e-16
ELECTRONIC_PSD_V2HZ = 4.5e-12  # ~15 uV lock-in noise at tau = 10 ms

POISSON_GAUSSIAN_THRESHOLD = 1000.0
MAX_SYNTH_SAMPLES = 1_000_000_000

# Bias projections (T) onto the four NV axes; isolates the axis-0 lower branch
BIAS_PROJECTIONS_T = [-0.6247e-3, 2.5e-3, -3.3753e-3, 1.5e-3]

# ========== Lock-in Constants ==========
LOCKIN_TAU_S = 10e-3
HP_CUTOFF_HZ = 700.0
OUT_RATE_HZ = 1.9e3
SETTLE_TAUS = 5
MIN_DWELL_TAUS = 3
PHASE_POWER_THRESHOLD = 1e-24  # V^2

# ========== PI Lock Constants ==========
PI_KP_NATIVE = -50.0
PI_KI_NATIVE = -2.5
# Native gain units: kp per 10 mV of error, ki per 1 V of error
PI_KP_NATIVE_SCALE = 0.01
PI_KI_NATIVE_SCALE = 1.0
PI_CLAMP_HZ = 5.0e6
LOCK_LOSS_FACTOR = 5.0
LOCK_LOSS_PERIODS = 100
LOCK_REFERENCE_PERIODS = 200
LOCK_FLOOR_FRACTION = 1e-3
LINEARITY_TOLERANCE = 0.05

# ========== Analysis Constants ==========
NOISE_BAND_HZ = (10.0, 100.0)
ONE_SIGMA_CI = 0.682689492137
WINDOW_DEFAULT = 'hann'
OVERLAP_DEFAULT = 0.5
MIN_GAUSSIAN_SAMPLES = 100

EDF_WHITE_FM = 'white_fm'
EDF_CONSERVATIVE = 'conservative'
EDF_GREENHALL = 'greenhall'

EDF_MODE_VALUES = [
    EDF_WHITE_FM,
    EDF_CONSERVATIVE,
    EDF_GREENHALL
]

# ========== Scenario Constants ==========
SCENARIO_ODMR = 'odmr'
SCENARIO_TRACK = 'track'
SCENARIO_DYNRANGE = 'dynrange'
SCENARIO_ALLAN = 'allan'
SCENARIO_PSD = 'psd'
SCENARIO_REPLAY = 'replay'
SCENARIO_CALIBRATE = 'calibrate'

SCENARIO_VALUES = [
    SCENARIO_ODMR,
    SCENARIO_TRACK,
    SCENARIO_DYNRANGE,
    SCENARIO_ALLAN,
    SCENARIO_PSD,
    SCENARIO_REPLAY,
    SCENARIO_CALIBRATE
]

# ========== Field Profile Constants ==========
PROFILE_CONSTANT = 'constant'
PROFILE_SQUARE = 'square'
PROFILE_RAMP = 'ramp'
PROFILE_REPLAY = 'replay'

PROFILE_VALUES = [
    PROFILE_CONSTANT,
    PROFILE_SQUARE,
    PROFILE_RAMP,
    PROFILE_REPLAY
]

# ========== Output Constants ==========
CSV_HEADER_SPECTRUM = ['freq_hz', 'i_v', 'q_v']
CSV_HEADER_LOOP = ['t_s', 'error_v', 'pi_hz', 'field_T']
CSV_HEADER_DYNRANGE = ['applied_T', 'open_T', 'closed_T']
CSV_HEADER_PSD = ['freq_hz', 'psd_v2hz', 'psd_t2hz']
CSV_HEADER_ALLAN = ['tau_s', 'adev', 'ci_lo', 'ci_hi']
CSV_HEADER_REPLAY = ['t_s', 'field_T']
CSV_HEADER_CALIBRATION = ['current_a', 'center_hz']
CSV_HEADER_TRACK = ['t_s', 'mean_field_T', 'single_field_T']
CSV_HEADER_INTEGRATED = ['freq_hz', 'normalized']

MANIFEST_FILE = 'manifest.json'
SUMMARY_FILE = 'summary.json'
OUTPUT_ENV_VAR = 'QMAGPI_OUT'
DEFAULT_OUTPUT_DIR = 'qmagpi_out'

# ========== Result Status Constants ==========
RESULT_STATUS_COMPLETE = 'Complete'
RESULT_STATUS_FAILED = 'Failed'

# ========== Exit Code Constants ==========
EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3
