"""
Django settings for MSAccel project.
"""

from pathlib import Path
import secrets
from decouple import config, Csv
from dotenv import load_dotenv

load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = config('SECRET_KEY', default=''.join(secrets.token_urlsafe(50)))

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []

# Application definition

INSTALLED_APPS = [
    # Third Party Apps
    'rest_framework',

    # Local Apps
    'objectives',
    'linalg',
    'oracles',
    'accel',
    'baselines',
    'dataset',
    'harness',
]

# Batch library, no persistence
DATABASES = {}

# Reference optima are cached on disk, keyed by objective content hash
MSACCEL_CACHE = config('MSACCEL_CACHE', default=str(BASE_DIR / '.msaccel_cache'))

CACHES = {
    'default': {
        'BACKEND': 'django.core.cache.backends.locmem.LocMemCache',
    },
    'reference_optima': {
        'BACKEND': 'django.core.cache.backends.filebased.FileBasedCache',
        'LOCATION': MSACCEL_CACHE,
        'TIMEOUT': None,
    },
}

# Acceleration defaults (untuned values)
MSACCEL_ALPHA = config('MSACCEL_ALPHA', default=2.0, cast=float)
MSACCEL_SIGMA = config('MSACCEL_SIGMA', default=0.5, cast=float)
MSACCEL_LAMBDA0 = config('MSACCEL_LAMBDA0', default=0.1, cast=float)
MSACCEL_RHO = config('MSACCEL_RHO', default=4.0, cast=float)

# Numerical safeguards
MSACCEL_LAMBDA_NEWTON = config('MSACCEL_LAMBDA_NEWTON', default=1e-10, cast=float)
MSACCEL_LAMBDA_MAX = config('MSACCEL_LAMBDA_MAX', default=1e30, cast=float)
MSACCEL_BRACKET_MIN = config('MSACCEL_BRACKET_MIN', default=1e-30, cast=float)
MSACCEL_BRACKET_MAX = config('MSACCEL_BRACKET_MAX', default=1e30, cast=float)
MSACCEL_CR_TOLERANCE = config('MSACCEL_CR_TOLERANCE', default=1e-5, cast=float)

# H = MSACCEL_H_SCALE * H-bar for cubic-regularized oracles
MSACCEL_H_SCALE = config('MSACCEL_H_SCALE', default=0.1, cast=float)

# Reference optimum (Newton) stopping rule
MSACCEL_REFERENCE_GRAD_TOL = config('MSACCEL_REFERENCE_GRAD_TOL', default=1e-13, cast=float)
MSACCEL_REFERENCE_MAX_ITER = config('MSACCEL_REFERENCE_MAX_ITER', default=200, cast=int)

# GD / AGD step size grid
MSACCEL_STEP_GRID = config(
    'MSACCEL_STEP_GRID',
    default='3,10,30,100,300,1000,3000',
    cast=Csv(float),
)

MSACCEL_LOG_LEVEL = config('MSACCEL_LOG_LEVEL', default='INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '{asctime} {levelname} {name} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'loggers': {
        app: {
            'handlers': ['console'],
            'level': MSACCEL_LOG_LEVEL,
            'propagate': False,
        }
        for app in ('objectives', 'linalg', 'oracles', 'accel', 'baselines', 'dataset', 'harness')
    },
}

# Internationalization
LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'
