"""Optional numba acceleration.

Set ``CERTPGO_DISABLE_NUMBA=1`` to force the pure-numpy kernels, e.g. when
debugging or when numba is unavailable for the running interpreter.
"""

import os


def _noop_jit(*args, **kwargs):
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(f):
        return f

    return wrap


def _env_disabled() -> bool:
    return os.environ.get("CERTPGO_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")


def _have_numba() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


HAVE_NUMBA = _have_numba()
USE_NUMBA = HAVE_NUMBA and not _env_disabled()

if HAVE_NUMBA:
    from numba import njit
else:
    njit = _noop_jit
