"""
Constants used throughout the simulator.
"""

# Data-quality curve constants fitted on the reference digit-recognition experiment
KAPPA_1 = 0.361
KAPPA_2 = 4.348
KAPPA_3 = 1e-3
KAPPA_4 = 0.993
KAPPA_5 = 0.31
KAPPA_6 = 1.743
KAPPA_7 = 100.0

# Federated training / cost model defaults
LOCAL_EPOCHS = 5
GLOBAL_EPOCHS = 10
MODEL_SIZE = 0.5
CHANNEL_BANDWIDTH_HZ = 1e4
REQUIRED_RATE_BPS = 1e6
PLATFORM_UNIT_COMPUTE_COST = 5e-2
PLATFORM_UNIT_TRANSMIT_COST = 5e-5
SIGMA_MAX = 1.2
D_MAX = 10.0
LABEL_COUNT = 10
CHANNEL_POOL_SIZE = 100
RMA_GROUPS = 10

# DRLA network shape
GCN_LAYERS = 2
EMBEDDING_DIM = 64
MONOTONE_GROUPS = 8
MONOTONE_UNITS = 8
CHANNEL_FEATURE_SCALE = 10.0
GAIN_FEATURE_SCALE = 1e7

# CLI exit codes
EXIT_OK = 0
EXIT_PROPERTY_FAILURE = 1
EXIT_ERROR = 2

# CSV layouts
SWEEP_COLUMNS = ["value", "mechanism", "mean_S", "std_S", "mean_W", "std_W", "n_instances", "seed"]
REPORT_COLUMNS = ["check", "mechanism", "instances", "trials", "failures", "worst_violation", "seeds"]
TRAINING_LOG_COLUMNS = ["episode", "validation_welfare", "loss", "epsilon"]
GRID_COLUMNS = ["D", "Delta", "accuracy", "std", "seeds"]

INSTANCE_FILE_HEADER = "# flmarket-instances v1"


class MechanismNames:
    RMA = "rma"
    DRLA = "drla"
    BENCHMARK = "benchmark"
    ORACLE = "oracle"
    PAY_YOUR_BID = "pay_your_bid"

    ALL = [RMA, DRLA, BENCHMARK, ORACLE]


class PaymentBranch:
    CONFLICT = "conflict"
    EXHAUSTION = "exhaustion"
    BISECTION = "bisection"
