import os
from typing import Dict, List, Any

def load_env_file(env_path: str = None) -> None:
    """Load environment variables from .env file"""
    if env_path is None:
        env_path = os.path.join(os.path.dirname(os.path.dirname(os.path.dirname(__file__))), '.env')

    if os.path.exists(env_path):
        with open(env_path, 'r', encoding='utf-8') as f:
            for line in f:
                line = line.strip()
                if line and not line.startswith('#') and '=' in line:
                    key, value = line.split('=', 1)
                    os.environ.setdefault(key.strip(), value.strip())

# Load .env file if it exists
load_env_file()

def _env_bool(name: str, default: str) -> bool:
    return os.environ.get(name, default).lower() == 'true'

class Config:
    PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', '..'))

    OUTPUT_FOLDER = os.environ.get('DELAYHJB_OUTPUT_FOLDER', os.path.join(PROJECT_ROOT, 'runs'))
    PROBLEMS_FOLDER = os.environ.get('DELAYHJB_PROBLEMS_FOLDER', os.path.join(PROJECT_ROOT, 'problems'))
    LOG_FOLDER = os.environ.get('DELAYHJB_LOG_FOLDER', os.path.join(PROJECT_ROOT, 'logs'))
    MAX_RUN_NAME_LENGTH = 100

    LOG_LEVEL = os.environ.get('DELAYHJB_LOG_LEVEL', 'INFO')
    LOG_FORMAT = os.environ.get('DELAYHJB_LOG_FORMAT', '%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    LOG_TO_FILE = _env_bool('DELAYHJB_LOG_TO_FILE', 'True')

    # Reproducibility
    DEFAULT_SEED = int(os.environ.get('DELAYHJB_SEED', '20240611'))
    THREADS = int(os.environ.get('DELAYHJB_THREADS', '1'))

    # Value search
    VALUE_BUDGET = int(os.environ.get('DELAYHJB_VALUE_BUDGET', '20000'))
    VALUE_BEAM_WIDTH = int(os.environ.get('DELAYHJB_VALUE_BEAM_WIDTH', '8'))
    VALUE_REFINE_ROUNDS = int(os.environ.get('DELAYHJB_VALUE_REFINE_ROUNDS', '3'))
    VALUE_CHUNK_SIZE = int(os.environ.get('DELAYHJB_VALUE_CHUNK_SIZE', '32768'))

    # Directional derivatives: steps Δ·2^j, j < DIR_DERIV_STEPS; tail 0 means all quotients
    DIR_DERIV_STEPS = int(os.environ.get('DELAYHJB_DIR_DERIV_STEPS', '3'))
    DIR_DERIV_TAIL = int(os.environ.get('DELAYHJB_DIR_DERIV_TAIL', '0'))

    # Tolerances (zeta_tol = ZETA_TOL_SCALE * delta unless overridden)
    ZETA_TOL_SCALE = float(os.environ.get('DELAYHJB_ZETA_TOL_SCALE', '1.6'))
    MEMBERSHIP_TOLERANCE = float(os.environ.get('DELAYHJB_MEMBERSHIP_TOLERANCE', '1e-2'))
    DERIV_TOLERANCE = float(os.environ.get('DELAYHJB_DERIV_TOLERANCE', '5e-2'))
    VISCOSITY_TOLERANCE = float(os.environ.get('DELAYHJB_VISCOSITY_TOLERANCE', '5e-2'))
    TERMINAL_TOLERANCE = float(os.environ.get('DELAYHJB_TERMINAL_TOLERANCE', '1e-6'))
    H3_GRID_POINTS = int(os.environ.get('DELAYHJB_H3_GRID_POINTS', '41'))

    # Mean value inequality search
    MVI_POINTS_PER_AXIS = int(os.environ.get('DELAYHJB_MVI_POINTS_PER_AXIS', '5'))
    MVI_REFINE_ROUNDS = int(os.environ.get('DELAYHJB_MVI_REFINE_ROUNDS', '3'))
    MVI_SHRINK = float(os.environ.get('DELAYHJB_MVI_SHRINK', '4.0'))
    MVI_K_SEQUENCE = [float(k) for k in os.environ.get('DELAYHJB_MVI_K_SEQUENCE', '100,1000,10000').split(',')]

    # Characteristic families and probes
    FAMILY_COUNT = int(os.environ.get('DELAYHJB_FAMILY_COUNT', '8'))
    FAMILY_BLOCKS = int(os.environ.get('DELAYHJB_FAMILY_BLOCKS', '4'))
    IMPROVE_SWEEPS = int(os.environ.get('DELAYHJB_IMPROVE_SWEEPS', '2'))
    IMPROVE_BLOCKS = int(os.environ.get('DELAYHJB_IMPROVE_BLOCKS', '4'))
    S_PROBE_BOUND = float(os.environ.get('DELAYHJB_S_PROBE_BOUND', '3.0'))
    DIRECTION_SAMPLES = int(os.environ.get('DELAYHJB_DIRECTION_SAMPLES', '16'))

    # Feedback synthesis
    FEEDBACK_PARTITIONS = int(os.environ.get('DELAYHJB_FEEDBACK_PARTITIONS', '32'))
    FEEDBACK_SHIFT_SOURCE = os.environ.get('DELAYHJB_FEEDBACK_SHIFT_SOURCE', 'value-gradient')

    SHIFT_SOURCES = ('value-gradient', 'envelope', 'zero')

    @classmethod
    def as_dict(cls) -> Dict[str, Any]:
        return {k: getattr(cls, k) for k in dir(cls)
                if k.isupper() and not k.startswith('_') and k not in ('PROJECT_ROOT',)}

    @classmethod
    def validate_config(cls) -> List[str]:
        errors = []
        try:
            os.makedirs(cls.OUTPUT_FOLDER, exist_ok=True)
            test_file = os.path.join(cls.OUTPUT_FOLDER, '.config_test')
            with open(test_file, 'w') as f:
                f.write('test')
            os.remove(test_file)
        except Exception as e:
            errors.append(f"Cannot create or write to output folder '{cls.OUTPUT_FOLDER}': {e}")

        if not isinstance(cls.DEFAULT_SEED, int) or cls.DEFAULT_SEED < 0:
            errors.append(f"Invalid seed: {cls.DEFAULT_SEED}")

        if cls.THREADS < 1:
            errors.append(f"Invalid thread cap: {cls.THREADS}")

        positive_ints = ['VALUE_BUDGET', 'VALUE_BEAM_WIDTH', 'VALUE_CHUNK_SIZE', 'DIR_DERIV_STEPS',
                         'H3_GRID_POINTS', 'MVI_POINTS_PER_AXIS', 'FAMILY_BLOCKS', 'IMPROVE_BLOCKS',
                         'DIRECTION_SAMPLES', 'FEEDBACK_PARTITIONS']
        for name in positive_ints:
            if getattr(cls, name) < 1:
                errors.append(f"{name} must be a positive integer, got {getattr(cls, name)}")

        if cls.FAMILY_COUNT < 3:
            errors.append(f"FAMILY_COUNT must be at least 3, got {cls.FAMILY_COUNT}")

        for name in ['VALUE_REFINE_ROUNDS', 'DIR_DERIV_TAIL', 'MVI_REFINE_ROUNDS', 'IMPROVE_SWEEPS']:
            if getattr(cls, name) < 0:
                errors.append(f"{name} must be non-negative, got {getattr(cls, name)}")

        for name in ['ZETA_TOL_SCALE', 'MEMBERSHIP_TOLERANCE', 'DERIV_TOLERANCE',
                     'VISCOSITY_TOLERANCE', 'TERMINAL_TOLERANCE', 'S_PROBE_BOUND']:
            if getattr(cls, name) <= 0:
                errors.append(f"{name} must be positive, got {getattr(cls, name)}")

        if cls.MVI_SHRINK <= 1:
            errors.append(f"MVI_SHRINK must exceed 1, got {cls.MVI_SHRINK}")

        if not cls.MVI_K_SEQUENCE or any(k <= 0 for k in cls.MVI_K_SEQUENCE):
            errors.append(f"Invalid MVI k schedule: {cls.MVI_K_SEQUENCE}")

        if cls.FEEDBACK_SHIFT_SOURCE not in cls.SHIFT_SOURCES:
            errors.append(f"Unknown shift source '{cls.FEEDBACK_SHIFT_SOURCE}'")

        import logging
        if not isinstance(getattr(logging, cls.LOG_LEVEL.upper(), None), int):
            errors.append(f"Invalid log level: {cls.LOG_LEVEL}")

        return errors
