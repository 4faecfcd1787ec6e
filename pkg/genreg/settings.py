import os
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()

BASE_DIR = Path(__file__).resolve().parent.parent

# ====================================================================================
# ENV
# ====================================================================================

ENV = os.environ.get("ENV", "dev")  # dev | prod
IS_PROD = ENV == "prod"

# ====================================================================================
# BASIC SETTINGS
# ====================================================================================

SECRET_KEY = os.environ.get("SECRET_KEY", "dev-secret-key-change-in-prod")
DEBUG = os.environ.get("DEBUG", "True") == "True"

ALLOWED_HOSTS = []

# ====================================================================================
# INSTALLED APPS
# ====================================================================================

INSTALLED_APPS = [
    # Local Apps
    "autodiff",
    "datasets",
    "generative",
    "operators",
    "solvers",
    "evaluation",
    "main",
]

# No database: every artifact lives on disk under GENREG_OUT.
DATABASES = {}

# ====================================================================================
# I18N
# ====================================================================================

LANGUAGE_CODE = "en-us"
TIME_ZONE = "UTC"
USE_I18N = False
USE_TZ = True

# ====================================================================================
# EXPERIMENT OUTPUT
# ====================================================================================

GENREG_OUT = Path(os.environ.get("GENREG_OUT", BASE_DIR / "runs"))
GENREG_JOBS = int(os.environ.get("GENREG_JOBS", "1"))
GENREG_DEFAULT_SEED = int(os.environ.get("GENREG_DEFAULT_SEED", "0"))

# Directory holding the MNIST IDX files (train-images-idx3-ubyte, ...)
GENREG_MNIST_DIR = Path(os.environ.get("GENREG_MNIST_DIR", BASE_DIR / "data" / "mnist"))

# ====================================================================================
# SOLVERS
# ====================================================================================

# Assert the descent property of the backtracking solvers on every run.
GENREG_CHECK_DESCENT = os.environ.get("GENREG_CHECK_DESCENT", str(not IS_PROD)) == "True"

# ====================================================================================
# LOGGING
# ====================================================================================

GENREG_LOG_LEVEL = os.environ.get("GENREG_LOG_LEVEL", "INFO" if IS_PROD else "DEBUG")

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{asctime} {levelname} {name} {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "verbose",
        },
    },
    "root": {
        "handlers": ["console"],
        "level": "WARNING",
    },
    "loggers": {
        app: {"handlers": ["console"], "level": GENREG_LOG_LEVEL, "propagate": False}
        for app in ("genreg", "autodiff", "datasets", "generative", "operators", "solvers", "evaluation", "main")
    },
}

# ====================================================================================
# DEFAULTS
# ====================================================================================

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"
