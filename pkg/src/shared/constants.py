"""
Shared constants and defaults across services
"""

# Surrogate distillation
DISTILLATION_DEFAULTS = {
    'ALPHA': 0.5,
    'BETA': 0.5,
    'ALPHA_QUERY_PHASE': 0.1,  # value quoted for the query-attack study
    'LR': 0.05,
    'SMOKE_LR': 0.005,
    'EPOCHS': 30,
    'BATCH_SIZE': 32,
}

OUTPUT_MODES = ['score', 'hard', 'label']
SERVING_MODES = ['score', 'hard', 'none']
FEEDBACK_MODES = ['score', 'hard']

# Adam
ADAM_DEFAULTS = {
    'BETA1': 0.9,
    'BETA2': 0.999,
    'EPS': 1e-8,
}

# Attacks
ATTACK_METHODS = ['pgd', 'simba-ods', 'gfcs', 'rgf', 'p-rgf', 'ods-rgf']
QUERY_BUDGET = 100
UNBOUNDED_QUERY_BUDGET = 25
UNBOUNDED_L2_STEP = 0.1
PGD_ITERATIONS = 20
PGD_LINF_EPS = 8 / 255
RGF_DEFAULTS = {
    'SAMPLES': 16,
    'SIGMA': 1e-3,
    'PRIOR_WEIGHT': 0.5,
}
ODS_MAX_RESAMPLES = 10

# Shape estimation
SHAPE_KMAX = 512
COVARIANCE_BLOCK_LIMIT = 4096
MATERIALIZED_ORACLE_LIMIT = 2048

# Experiment grids
BATCH_SIZE_GRID = [2, 8, 16, 64, 256, 512]
L2_EPS_GRID = [0.25, 0.5, 1.0, 1.5]
QUERY_BUDGET_GRID = [5, 10, 25, 50, 100]
EXPERIMENT_IDS = [
    'sr-vs-queries', 'eps-table', 'unbounded', 'split-matrix',
    'cleanacc-corr', 'shape-batch', 'pgd-transfer',
]

# Desk-scale dataset sizes
DATASET_SIZES = {
    'TRAIN': 2000,
    'SURROGATE_TRAIN': 1000,
    'ATTACK_EVAL': 1000,
}
DISTILLATION_QUERIES = 200

# Full-scale reference results printed next to desk-scale runs
REFERENCE_ROWS = {
    'eps-table': 'ResNet56, eps=1.0, score: SR 0.967 (w/) vs 0.696 (w/o)',
    'unbounded': 'VGG16/GFCS FD+Score SR 0.98, AP 0.53 vs Score SR 0.81, AP 0.92',
}
