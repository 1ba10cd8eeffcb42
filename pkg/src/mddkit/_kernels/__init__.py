"""Kernel backend selection.

The compiled extension is preferred when it imports cleanly; otherwise
the pure numpy twins take over. Set MDDKIT_BACKEND=pure or =fast to pin
a backend explicitly (pinning "fast" without the built extension is an
error rather than a silent downgrade).
"""

from __future__ import annotations

import os

from . import pure

_requested = os.environ.get("MDDKIT_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "pure", "fast"):
    raise ValueError(f"MDDKIT_BACKEND must be auto, pure, or fast; got {_requested!r}")

_impl = pure
BACKEND = "pure"
if _requested in ("auto", "fast"):
    try:
        from . import _fast as _fast_mod
    except ImportError:
        if _requested == "fast":
            raise ImportError(
                "MDDKIT_BACKEND=fast but the compiled extension is not built; "
                "reinstall the package or use MDDKIT_BACKEND=pure"
            )
    else:
        _impl = _fast_mod
        BACKEND = "fast"


def load(name: str):
    """Return a specific backend module by name ('pure' or 'fast')."""
    if name == "pure":
        return pure
    if name == "fast":
        from . import _fast as fast_mod

        return fast_mod
    raise ValueError(f"unknown backend {name!r}")


ctc_forward_backward = _impl.ctc_forward_backward
nw_coupling = _impl.nw_coupling
seg_dp_extend = _impl.seg_dp_extend
