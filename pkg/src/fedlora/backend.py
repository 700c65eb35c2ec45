"""Kernel-backend selection.

The per-batch training kernels exist twice: a Cython extension
(``fedlora._kernels``) and a pure numpy fallback (``fedlora._kernels_py``)
with identical signatures. The compiled one is used when importable;
``FEDLORA_BACKEND=py`` forces the fallback, ``FEDLORA_BACKEND=c`` makes a
missing extension an error (useful in benchmarks and CI).
"""

from __future__ import annotations

import os

from . import _kernels_py

try:
    from . import _kernels  # type: ignore[attr-defined]

    HAVE_COMPILED = True
except ImportError:
    _kernels = None  # type: ignore[assignment]
    HAVE_COMPILED = False

_forced = os.environ.get("FEDLORA_BACKEND", "").strip().lower()
if _forced == "py":
    _impl = _kernels_py
elif _forced == "c":
    if not HAVE_COMPILED:
        raise ImportError(
            "FEDLORA_BACKEND=c but the compiled extension is not built; "
            "run `pip install -e . --no-build-isolation`"
        )
    _impl = _kernels
elif _forced:
    raise ValueError(f"unknown FEDLORA_BACKEND={_forced!r} (use 'c' or 'py')")
else:
    _impl = _kernels if HAVE_COMPILED else _kernels_py

ACT_TANH = _kernels_py.ACT_TANH
ACT_RELU = _kernels_py.ACT_RELU
ACT_LINEAR = _kernels_py.ACT_LINEAR

ce_loss_and_grads = _impl.ce_loss_and_grads
adamw_update = _impl.adamw_update


def backend_name() -> str:
    return "compiled" if _impl is _kernels else "python"


def get_backend(name: str):
    """Explicit backend module by name, independent of the import-time pick."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if not HAVE_COMPILED:
            raise ImportError("compiled kernels are not available")
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
