"""Select the dynamics kernel at import time.

The compiled ``_kernel`` extension is used when it imports; otherwise the
pure-Python ``_fallback``. Set ``HIERTRAJ_BACKEND=python`` to force the
fallback (``compiled`` makes a missing extension an error).
"""

import os

from . import _fallback

_choice = os.environ.get("HIERTRAJ_BACKEND", "auto").lower()

if _choice == "python":
    impl = _fallback
    NAME = "python"
else:
    try:
        from . import _kernel as impl
        NAME = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise
        impl = _fallback
        NAME = "python"

fallback = _fallback

__all__ = ["impl", "fallback", "NAME"]
