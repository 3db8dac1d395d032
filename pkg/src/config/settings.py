"""
Configuration settings for the flowdistill scene-flow distillation toolkit.
"""

import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Project paths
PROJECT_ROOT = Path(__file__).parent.parent.parent
CACHE_DIR = Path(os.getenv("FLOWDISTILL_CACHE_DIR", str(PROJECT_ROOT / ".flowdistill_cache")))

# Logging
LOG_LEVEL = os.getenv("FLOWDISTILL_LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

TOOL_VERSION = "0.1.0"

# Config files
CONFIG_VERSION = 1

# Binary formats (little-endian)
SCENE_MAGIC = b"ZFSS"
SCENE_VERSION = 1
LABEL_MAGIC = b"ZFFL"
LABEL_VERSION = 1
CHECKPOINT_MAGIC = b"ZFCK"
CHECKPOINT_VERSION = 1

# Frame timing (10 Hz lidar)
DT_SECONDS = 0.1

# Full-scale geometry
TRAIN_HALF_EXTENT = 51.2
EVAL_HALF_EXTENT = 35.0
PILLAR_SIZE = 0.2

# Desk-scale geometry, eval crop scaled by the same 70 / 102.4 ratio
DESK_HALF_EXTENT = 12.8
DESK_EVAL_HALF_EXTENT = DESK_HALF_EXTENT * EVAL_HALF_EXTENT / TRAIN_HALF_EXTENT

# Teacher defaults
TEACHER_CONFIG = {
    "mlp_widths": (3, 64, 64, 64, 3),
    "activation": "relu",
    "max_iters": 1000,
    "lr": 1e-3,
    "early_stop_patience": 50,
    "early_stop_min_delta": 1e-4,
}
CHAMFER_TRUNCATION_RADIUS = 2.0

# Student training (full-scale values)
STUDENT_LR = 2e-6
STUDENT_BATCH_SIZE = 64
STUDENT_EPOCHS = 50

# Evaluation thresholds
DYNAMIC_SPEED_THRESHOLD = 0.5  # m/s
BACKGROUND_WEIGHT = 0.1
SPEED_WEIGHT_LOW = 0.4   # m/s
SPEED_WEIGHT_HIGH = 1.0  # m/s

# Pipeline failure policy
MAX_LABEL_FAILURE_FRACTION = 0.01

# Progress reporting granularity
PROGRESS_STEP_PERCENT = 5
