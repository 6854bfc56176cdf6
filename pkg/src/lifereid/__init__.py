"""Continual metric learning on synthetic identity domains.

A small MLP encoder is adapted to a stream of domains without labels:
pseudo-labels come from re-ranked density clustering of momentum features,
adaptation uses prototype and instance contrastive losses, and forgetting is
countered by consistency rehearsal against a frozen previous-step encoder
over a compact sample/prototype buffer.
"""

__version__ = "0.1.0"

from .config import RunConfig
from .pipeline import init_state, run_sequence, run_step

__all__ = ["RunConfig", "init_state", "run_sequence", "run_step", "__version__"]
