"""Backend selection for the hot rollout kernel.

Prefers the compiled extension; falls back to the numpy implementation when
the extension is missing or FEDLQR_FORCE_PY=1 is set.  `BACKEND` reports
which one is active.
"""

from __future__ import annotations

import os

if os.environ.get("FEDLQR_FORCE_PY"):
    from fedlqr._rollout_py import rollout_cost_batch

    BACKEND = "python"
else:
    try:
        from fedlqr._rollout import rollout_cost_batch  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        from fedlqr._rollout_py import rollout_cost_batch  # type: ignore[no-redef]

        BACKEND = "python"

__all__ = ["rollout_cost_batch", "BACKEND"]
