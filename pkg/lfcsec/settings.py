import os
from pathlib import Path

import dj_database_url
from dj_database_url import ParseError
from django.core.exceptions import ImproperlyConfigured
from dotenv import load_dotenv

BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv(BASE_DIR / ".env")

SECRET_KEY = os.getenv("SECRET_KEY", "django-insecure-workbench-local")
DEBUG = os.getenv("DEBUG", "1") == "1"
ALLOWED_HOSTS: list[str] = os.getenv("ALLOWED_HOSTS", "localhost 127.0.0.1").split()

INSTALLED_APPS = [
    "workbench.apps.WorkbenchConfig",
]

DATABASE_URL = os.getenv("DATABASE_URL")
if DATABASE_URL:
    try:
        DATABASES = {
            "default": dj_database_url.parse(
                DATABASE_URL,
                conn_max_age=600,
                ssl_require=os.getenv("DB_SSL_REQUIRE", "0") == "1",
            )
        }
    except ParseError as exc:
        raise ImproperlyConfigured(
            "Invalid DATABASE_URL. Ensure it is a full database URL and password characters are URL-encoded."
        ) from exc
else:
    DATABASES = {
        "default": dj_database_url.parse(f"sqlite:///{BASE_DIR / 'workbench.sqlite3'}")
    }

LANGUAGE_CODE = "en-us"
TIME_ZONE = "UTC"
USE_I18N = False
USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

WORKBENCH_OUTPUT_ROOT = Path(os.getenv("WORKBENCH_OUTPUT_ROOT", str(BASE_DIR / "runs")))
WORKBENCH_RUN_REGISTRY = os.getenv("WORKBENCH_RUN_REGISTRY", "0") == "1"
WORKBENCH_WORKERS = int(os.getenv("WORKBENCH_WORKERS", "1"))
WORKBENCH_LOG_LEVEL = os.getenv("WORKBENCH_LOG_LEVEL", "INFO").upper()

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "keyvalue": {
            "format": "ts=%(asctime)s level=%(levelname)s logger=%(name)s msg=%(message)s",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "keyvalue",
        },
    },
    "loggers": {
        "workbench": {
            "handlers": ["console"],
            "level": WORKBENCH_LOG_LEVEL,
            "propagate": False,
        },
    },
}
