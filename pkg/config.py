import logging
import os
from pathlib import Path

# Base directory (where this config file lives)
BASE_DIR = Path(__file__).parent.resolve()

# Load .env file if it exists
from dotenv import load_dotenv
load_dotenv(BASE_DIR / ".env")

# Runtime environment
LOG_LEVEL = os.environ.get("DRPC_LOG_LEVEL", "info").lower()
OUTPUT_DIR = os.environ.get("DRPC_OUTPUT_DIR", str(BASE_DIR / "output"))
DEFAULT_SEED = int(os.environ.get("DRPC_SEED", "0"))

# Cluster model
RESOURCES = ("cpu", "mem")
MIN_CPU_PER_REPLICA = 0.1  # cores
MIN_MEM_PER_REPLICA = 0.1  # GB
CHAIN_WEIGHT_TOLERANCE = 1e-9

# Simulator
SIM_TICK = 1.0  # seconds
SIM_RT_MAX = 200.0  # ms, maximum tolerant latency
SIM_L_MAX = 5000.0  # ms, latency of a saturated station
SIM_MEM_PENALTY = 2.0
SIM_MAX_REPLICAS = 16
SIM_HORIZON = 288  # ticks per episode
CONTROL_INTERVAL = 5  # ticks between teacher decisions

# Reward targets (fractions of machine capacity)
U_PRED_CPU = 0.60
U_PRED_MEM = 0.75

# Vertical / horizontal scaling procedure
CPU_STEP = 0.25  # cores
MEMORY_STEP = 0.25  # GB
Q_THRESHOLD = 0.5

# TD3 teacher
TD3_GAMMA = 0.99
TD3_POLYAK = 0.995
TD3_POLICY_UPDATE = 2
TD3_EXPLORATION_NOISE = 0.1
TD3_TARGET_NOISE = 0.2
TD3_NOISE_CLIP = 0.5
TD3_BATCH_SIZE = 64
TD3_BUFFER_CAPACITY = 100_000
TD3_WARMUP_STEPS = 1_000
TD3_ACTOR_LR = 1e-3
TD3_CRITIC_LR = 1e-3
TD3_HIDDEN = (64, 64)

# Students
STUDENT_HIDDEN = 48
STUDENT_BUFFER_CAPACITY = 10_000
STUDENT_BATCH_SIZE = 64
STUDENT_LR = 1e-2
STUDENT_STEPS_PER_INTERVAL = 10  # imitation steps per teacher decision

# Retraining notifier
NOTIFIER_THRESHOLD = 0.5
NOTIFIER_HISTORY = 20
MIN_TEACHER_INTERVALS = 200  # control intervals of Stage 1 before release

# Threshold baseline
BASELINE_CPU_THRESHOLD = 0.75

# Workload profiler and predictor
PROFILER_LAYERS = (2, 16, 16, 1)
PROFILER_EPOCHS = 500
PROFILER_LR = 0.05
PROFILER_BATCH_SIZE = 8
PROFILER_MIN_SAMPLES = 10
PROFILE_REQUESTS_PER_CASE = 200
PREDICTOR_HIDDEN = 32
PREDICTOR_WINDOW = 12  # intervals (1 hour of 5-minute intervals)
PREDICTOR_EPOCHS = 40
PREDICTOR_LR = 1e-2
PREDICTOR_BATCH_SIZE = 32
PREDICTOR_VALIDATION_FRACTION = 0.2
PREDICTION_HORIZONS = (1, 2, 3, 4, 5)

# Synthetic load (runs without a trace)
SYNTHETIC_PEAK_LOAD = 1.2  # x saturation rate of the initial provisioning
SURGE_EVERY = 250  # ticks per flash-crowd window, one surge each
SURGE_FACTOR = (2.0, 2.8)  # load multiplier range
SURGE_HOLD = (20, 60)  # ticks at full strength
SURGE_RISE = 2  # ticks
SURGE_DECAY = 10  # ticks

# Reporting
PERCENTILES = (50, 66, 75, 80, 90, 95, 99, 99.99)

# File Paths (absolute, based on BASE_DIR)
SCENARIOS_DIR = str(BASE_DIR / "scenarios")
DATA_DIR = str(BASE_DIR / "data")
DEFAULT_SCENARIO_FILE = str(BASE_DIR / "scenarios" / "desk.json")
SAMPLE_TRACE_FILE = str(BASE_DIR / "data" / "alibaba_sample.csv")

_LEVELS = {
    "error": logging.ERROR,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def configure_logging(level: str = None) -> int:
    """Configure root logging from DRPC_LOG_LEVEL (or an explicit level)."""
    name = (level or LOG_LEVEL).lower()
    resolved = _LEVELS.get(name)
    logging.basicConfig(
        level=resolved or logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if resolved is None:
        logging.getLogger(__name__).warning(
            f"Unknown DRPC_LOG_LEVEL '{name}', using info"
        )
        resolved = logging.INFO
    return resolved
