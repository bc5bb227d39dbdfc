import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', 'splitleak-insecure-local-only')
DEBUG = os.getenv('DEBUG', 'False') == 'True'
ALLOWED_HOSTS = []

# Application definition
INSTALLED_APPS = [
    'django.contrib.contenttypes',

    # Third party
    'rest_framework',

    'src.shared',

    # Services
    'src.services.autograd_service',
    'src.services.model_zoo_service',
    'src.services.wire_service',
    'src.services.shape_service',
    'src.services.surrogate_service',
    'src.services.attack_service',
    'src.services.experiments_service',
]

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {},
    },
]

# No models; sqlite keeps the test runner happy
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.getenv('DB_NAME', str(BASE_DIR / 'splitleak.sqlite3')),
    }
}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'
USE_TZ = True
TIME_ZONE = 'UTC'

# Numerics
SPLITLEAK_DTYPE = os.getenv('SPLITLEAK_DTYPE', 'float32')
SPLITLEAK_SEED = int(os.getenv('SPLITLEAK_SEED', 0))
SPLITLEAK_TORCH_THREADS = int(os.getenv('SPLITLEAK_TORCH_THREADS', 1))

# Wire
SPLITLEAK_SOCKET_TIMEOUT = float(os.getenv('SPLITLEAK_SOCKET_TIMEOUT', 10.0))
SPLITLEAK_SLOW_FRAME_SECONDS = float(os.getenv('SPLITLEAK_SLOW_FRAME_SECONDS', 2.0))

# Experiments
SPLITLEAK_OUTPUT_DIR = os.getenv('SPLITLEAK_OUTPUT_DIR', 'runs')
SPLITLEAK_RUN_SLOW = os.getenv('SPLITLEAK_RUN_SLOW', '0') == '1'

SPLITLEAK_LOG_LEVEL = os.getenv('SPLITLEAK_LOG_LEVEL', 'INFO')
SPLITLEAK_LOG_DIR = Path(os.getenv('SPLITLEAK_LOG_DIR', str(BASE_DIR / 'logs')))

# Simplified Logging Configuration
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '{levelname} {asctime} {name} {message}',
            'style': '{',
            'datefmt': '%Y-%m-%d %H:%M:%S',
        },
    },
    'handlers': {
        'console': {
            'level': SPLITLEAK_LOG_LEVEL,
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
        'file': {
            'level': 'INFO',
            'class': 'logging.FileHandler',
            'filename': SPLITLEAK_LOG_DIR / 'splitleak.log',
            'formatter': 'simple',
        },
        'error_file': {
            'level': 'ERROR',
            'class': 'logging.FileHandler',
            'filename': SPLITLEAK_LOG_DIR / 'errors.log',
            'formatter': 'simple',
        },
    },
    'loggers': {
        '': {  # root logger
            'handlers': ['console', 'file', 'error_file'],
            'level': 'WARNING',
            'propagate': False,
        },
        'src': {
            'handlers': ['console', 'file', 'error_file'],
            'level': SPLITLEAK_LOG_LEVEL,
            'propagate': False,
        },
        'wire_frames': {
            'handlers': ['file'],
            'level': 'INFO',
            'propagate': False,
        },
    }
}

# Ensure logs directory exists
os.makedirs(SPLITLEAK_LOG_DIR, exist_ok=True)
