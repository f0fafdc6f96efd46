import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Output location for results.csv, summary.csv and QNC traces
OUTPUT_DIR = Path(os.getenv('COREQN_OUTPUT_DIR', BASE_DIR / 'results'))

# Worker threads for experiment cells; --threads takes precedence
THREADS = os.getenv('COREQN_THREADS')

# Logging
LOG_LEVEL = os.getenv('COREQN_LOG_LEVEL', 'INFO')
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'

# Variances everywhere: a model slot written sigma in the literature is sigma^2 here.

# Model defaults
LOGISTIC_PRIOR_SCALE = 1.0
GAUSSIAN_PRIOR_VAR = 1.0
RBF_SCALES = (0.2, 0.4, 0.8, 1.2, 1.6, 2.0)
RBF_CENTERS_PER_SCALE = 50
RBF_CONSTANT_SCALE = 100.0

# HMC defaults
HMC_WARMUP_STEPS = 500
HMC_LEAPFROG_STEPS = 20
HMC_TARGET_ACCEPT = 0.8
HMC_INITIAL_STEP_SIZE = 0.1
HMC_MAX_HALVINGS = 10
HMC_STEP_JITTER = 0.1

# Laplace approximation
LAPLACE_GRAD_TOL = 1e-8
LAPLACE_MAX_ITER = 200

# Quasi-Newton coreset defaults
QNC_SAMPLES = 500
QNC_MAX_STEPS = 20
QNC_TUNE_STEPS = 1
QNC_GAMMA = 1.0
QNC_TAU = 0.01
QNC_MAX_CONDITION = 1e8
QNC_STOP_PATIENCE = 3
QNC_STOP_FACTOR = 0.99
LINE_SEARCH_C2 = 0.9
LINE_SEARCH_SHRINK = 0.5
LINE_SEARCH_MAX_HALVINGS = 5

# Metrics
IMQ_SCALE = 1.0
KSD_BETA = -0.5
EVAL_SAMPLES = 1000
FULL_HMC_DRAWS = 2000
COVARIANCE_JITTER = 1e-9

# Desk-scale experiment grid
DEFAULT_CORESET_SIZES = (50, 100, 200, 500)
DEFAULT_TRIALS = 10
DEFAULT_METHODS = ('QNC', 'UNIF', 'LAP', 'FULL')
DEFAULT_SEED = 0

# Desk-scale synthetic datasets
GAUSSIAN_N = 50000
GAUSSIAN_D = 20
GAUSSIAN_DATA_MEAN_VAR = 100.0
GAUSSIAN_NOISE_VAR = 100.0
LOGISTIC_N = 10000
LOGISTIC_D = 5
RBF_N = 10000
RBF_NOISE_SCALE = 0.1
