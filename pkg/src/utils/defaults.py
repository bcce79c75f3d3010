# Default run configuration
# Values marked "protocol" follow the benchmark experiment setup; the rest are declared config.

DIMENSION_MIN = 1

WIDTH = 100                 # protocol: m = 100 (or 1000)
BATCH_SIZE = 100            # protocol: n = 100
DATASET_SIZE = 100_000      # protocol: 10^5 uniform points
SWEEP_RUNS = 8              # protocol: 8 runs for mean/variance

TAU = 20.0
STEPS = 20_000
EVAL_EVERY = 100
PROBE_COUNT = 0             # stationarity probes per evaluation (0 disables)

TABLE_RESOLUTION = 4096     # mollifier table intervals
TABLE_RESOLUTION_MIN = 64

EVAL_GRID_N = 64            # tensor grid intervals per axis for d <= 3
EVAL_MC_POINTS = 10_000     # evaluation MC size for d >= 4
GRID_MAX_DIMENSION = 3
EVAL_GRID_N_3D = 24         # d = 3 grid; 65^3 points do not fit the chunked kernels

CHUNK_SIZE = 4096           # points per evaluation chunk
W2_MAX_PARTICLES = 512

REFERENCE_N = 256
REFERENCE_N_MAX = 512
REFERENCE_N_MIN = 8
REFERENCE_TOL = 1e-8

INIT_MAX_ATTEMPTS = 5

ENV_PREFIX = "SPECTRALFLOW_"
