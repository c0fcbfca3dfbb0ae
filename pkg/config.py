import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables from the package directory
_package_dir = Path(__file__).parent
load_dotenv(_package_dir / ".env")

class Config:
    # Logging
    LOG_LEVEL = os.getenv("TTSOLVE_LOG", "info").lower()
    LOG_DIR = os.getenv("TTSOLVE_LOG_DIR", str(_package_dir / "logs"))

    # Kernel parallelism (1 keeps traces reproducible)
    THREADS = int(os.getenv("TTSOLVE_THREADS", "1"))

    # Dense kernels
    TSQR_BLOCK_FACTOR = 4          # leaf height = factor * columns
    CACHE_LINE_DOUBLES = 8
    THRASH_STRIDE = 128
    PAD_THRESHOLD = 64             # pad LocalOp temporaries from this fused size on
    CHOLESKY_SHIFT_START = 1e-14   # times trace(G)
    CHOLESKY_SHIFT_MAX = 1e-8
    ORACLE_MAX_ENTRIES = 10**6

    # Fast building blocks
    APOSTERIORI_FACTOR = 10.0
    SINGULAR_DIAG_TOL = 1e-14
    FAST_ORTHO_MIN_DIAG_RATIO = 1e-6

    # Solver defaults
    DEFAULT_COND_ESTIMATE = 1e3
    DEFAULT_K_ENRICH = 4
    DEFAULT_SV_FLOOR = 1e-12
    RESIDUAL_CHECK_FACTOR = 0.1    # true residual truncated at factor * eps * ||B||

    # Reports
    SCHEMA_VERSION = 1

    # Acceptance-scale tests
    SLOW_TESTS = os.getenv("TTSOLVE_SLOW_TESTS", "false").lower() == "true"

    @classmethod
    def validate(cls):
        if cls.LOG_LEVEL not in ("error", "info", "debug"):
            raise ValueError(f"TTSOLVE_LOG must be one of error, info, debug (got '{cls.LOG_LEVEL}').")
        if cls.THREADS < 1:
            raise ValueError("TTSOLVE_THREADS must be at least 1.")
        if cls.TSQR_BLOCK_FACTOR < 1:
            raise ValueError("TSQR_BLOCK_FACTOR must be at least 1.")
