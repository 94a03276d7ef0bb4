# Django settings for the okfeb project.
import os
from pathlib import Path
from urllib.parse import urlparse
from dotenv import load_dotenv

# .env at the repo root (dev/local)
load_dotenv()

BASE_DIR = Path(__file__).resolve().parent.parent

# -------------------------
# Core
# -------------------------
SECRET_KEY = os.environ.get("DJANGO_SECRET_KEY", "dev-insecure-key")
DEBUG = os.environ.get("DJANGO_DEBUG", "False").lower() == "true"
ALLOWED_HOSTS = []

LANGUAGE_CODE = "en-us"
TIME_ZONE = os.environ.get("DJANGO_TIME_ZONE", "UTC")
USE_I18N = False
USE_TZ = True

# -------------------------
# Apps
# -------------------------
INSTALLED_APPS = [
    "django.contrib.contenttypes",

    # Project apps
    "commons",
    "kernels",
    "subspace",
    "budget",
    "approx",
    "learners",
    "datasets",
    "runs",
]

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# -------------------------
# Database (run history)
# -------------------------
# DATABASE_URL set -> use it, otherwise SQLite
DATABASE_URL = os.environ.get("DATABASE_URL", "").strip()

if DATABASE_URL:
    parsed = urlparse(DATABASE_URL)
    ENGINE_MAP = {
        "postgres": "django.db.backends.postgresql",
        "postgresql": "django.db.backends.postgresql",
        "psql": "django.db.backends.postgresql",
        "mysql": "django.db.backends.mysql",
        "mariadb": "django.db.backends.mysql",
        "sqlite": "django.db.backends.sqlite3",
    }
    ENGINE = ENGINE_MAP.get(parsed.scheme, "django.db.backends.sqlite3")
    DATABASES = {
        "default": {
            "ENGINE": ENGINE,
            "NAME": parsed.path.lstrip("/"),
            "USER": parsed.username,
            "PASSWORD": parsed.password,
            "HOST": parsed.hostname,
            "PORT": parsed.port or "",
        }
    }
else:
    DATABASES = {
        "default": {
            "ENGINE": "django.db.backends.sqlite3",
            "NAME": BASE_DIR / "db.sqlite3",
        }
    }

# -------------------------
# Feature extraction runs
# -------------------------
# OKFEB_SEED wins over --seed on every command
OKFEB_SEED = os.environ.get("OKFEB_SEED", "").strip() or None
OKFEB_BOUND_CHECK_CAP = int(os.environ.get("OKFEB_BOUND_CHECK_CAP", "2000"))
OKFEB_DEFAULT_TARGET_RATE = float(os.environ.get("OKFEB_DEFAULT_TARGET_RATE", "0.5"))
OKFEB_CENSOR_WINDOW = int(os.environ.get("OKFEB_CENSOR_WINDOW", "100"))
OKFEB_USE_ASYNC = os.environ.get("OKFEB_USE_ASYNC", "0") == "1"

# -------------------------
# Celery / Redis (only for recorded async runs)
# -------------------------
REDIS_URL = os.environ.get("REDIS_URL", "redis://localhost:6379")
CELERY_BROKER_URL = REDIS_URL
CELERY_RESULT_BACKEND = REDIS_URL

# -------------------------
# Logging (stderr; metrics never go through here)
# -------------------------
OKFEB_LOG_LEVEL = os.environ.get("OKFEB_LOG_LEVEL", "WARNING").upper()

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {"format": "%(levelname)s %(name)s: %(message)s"},
    },
    "handlers": {
        "console": {"class": "logging.StreamHandler", "formatter": "plain"},
    },
    "loggers": {
        "django": {"handlers": ["console"], "level": "WARNING"},
        **{
            app: {"handlers": ["console"], "level": OKFEB_LOG_LEVEL, "propagate": True}
            for app in ("commons", "kernels", "subspace", "budget", "approx", "learners", "datasets", "runs")
        },
    },
}
