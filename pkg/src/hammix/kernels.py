"""Kernel backend selection.

The compiled Cython kernels are used when the extension built; otherwise
the pure-numpy kernels take over. Override with HAMMIX_KERNELS=c|py.
Both backends produce identical results and identical search statistics.
"""

from __future__ import annotations

import os

from . import _pykernels

try:
    from . import _ckernels  # type: ignore[attr-defined]

    HAVE_COMPILED = True
except ImportError:
    _ckernels = None
    HAVE_COMPILED = False


def get_backend(name: str | None = None):
    """Resolve a kernels module by name ('c'/'py'); None picks the default."""
    if name is None:
        name = os.environ.get("HAMMIX_KERNELS", "").strip().lower() or "auto"
    if name in ("py", "python", "pure"):
        return _pykernels
    if name in ("c", "compiled", "ext"):
        if not HAVE_COMPILED:
            raise RuntimeError("compiled kernels requested but the extension is not built")
        return _ckernels
    if name == "auto":
        return _ckernels if HAVE_COMPILED else _pykernels
    raise ValueError(f"unknown kernel backend {name!r}")


def backend_name() -> str:
    return get_backend().BACKEND


# Re-export the default backend's primitive ops for direct use.
def hamming_one_to_many(q_words, bank_words):
    return get_backend().hamming_one_to_many(q_words, bank_words)


def linear_scan_radius(q_words, bank_words, k):
    return get_backend().linear_scan_radius(q_words, bank_words, k)


def linear_scan_knn(q_words, bank_words, k_nn):
    return get_backend().linear_scan_knn(q_words, bank_words, k_nn)
