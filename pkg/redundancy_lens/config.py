"""Default configuration.

Runtime knobs come from the environment; command-line flags override them.
"""

import os

DEFAULT_SEED = int(os.environ.get("LENS_SEED", "0"))
DEFAULT_WORKERS = int(os.environ.get("LENS_WORKERS", "1"))
DEFAULT_LOG_LEVEL = os.environ.get("LENS_LOG_LEVEL", "WARNING")
DEFAULT_PROGRESS = os.environ.get("LENS_PROGRESS", "0") == "1"

# Toy model scale
DEFAULT_LAYERS = 8
DEFAULT_D_MODEL = 64
DEFAULT_N_HEADS = 4
DEFAULT_D_FF = 256
DEFAULT_VOCAB = 512
DEFAULT_FFN_KIND = "vanilla"
DEFAULT_ACTIVATION = "relu"
INIT_STD = 0.02

# Reduction hyperparameters
DEFAULT_ATTENTION_RANGE = 256
DEFAULT_K_FRACTION = 0.2
DEFAULT_PROBE_FRACTION = 0.1
SEARCH_PROBE_FRACTION = 1.0
DEFAULT_ALPHA = 2.0

# FastV-style pruning: after layer 2, drop 30% of the visual tokens
DEFAULT_PRUNE_LAYER = 2
DEFAULT_KEEP_RATIO = 0.7

# Demo pipeline
DEMO_SEED = 1234
DEMO_ITEMS = 8
DEMO_SUBSETS = ("chart", "doc", "ocr", "scene")
DEMO_TEXT_PREFIX = 4
DEMO_VISUAL = 48
DEMO_TEXT_SUFFIX = 12
DEMO_ATTENTION_RANGE = 4
