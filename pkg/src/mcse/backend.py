"""Kernel backend selection.

The compiled extension (``mcse._kernel_cy``) is preferred when it imported
successfully; otherwise the pure-numpy kernel is used. Set ``MCSE_KERNEL`` to
``python`` or ``compiled`` to force a choice (forcing ``compiled`` raises if
the extension is missing).
"""

from __future__ import annotations

import os

from . import _kernel as _python_kernel

try:
    from . import _kernel_cy as _compiled_kernel
except ImportError:
    _compiled_kernel = None


def available_backends() -> dict[str, object]:
    out = {"python": _python_kernel}
    if _compiled_kernel is not None:
        out["compiled"] = _compiled_kernel
    return out


def get_backend(name: str | None = None):
    """Resolve a kernel module by name; ``None`` picks the default (compiled
    when built, else python), honoring the ``MCSE_KERNEL`` env var."""
    if name is None:
        name = os.environ.get("MCSE_KERNEL", "").strip().lower() or None
    if name is None:
        return _compiled_kernel if _compiled_kernel is not None else _python_kernel
    backends = available_backends()
    if name not in backends:
        raise ValueError(
            f"unknown or unavailable kernel backend {name!r}; "
            f"available: {sorted(backends)}")
    return backends[name]


def backend_name(backend=None) -> str:
    backend = backend if backend is not None else get_backend()
    return backend.BACKEND_NAME
