"""Warning categories used to flag degenerate-but-recoverable situations.

Operations that can continue with a well-defined fallback (zero vectors,
all-background masks, deterministic tie-breaks) emit one of these warnings
instead of raising, so pipelines keep running while tests and callers can
still detect the condition with ``warnings`` filters.
"""

from __future__ import annotations

import warnings


class DegenerateInputWarning(UserWarning):
    """Input was degenerate (uniform image, empty pixel subset, ...) and a
    documented fallback value was returned."""


class TieBreakWarning(UserWarning):
    """A tie between equally valid choices was resolved deterministically
    (lowest index first)."""


class EarlyStopWarning(UserWarning):
    """An iterative solver stopped before its nominal target (for example a
    rank-deficient subproblem) and returned the best result so far."""


def warn(category: type[Warning], message: str) -> None:
    """Emit ``message`` with the package's stacklevel convention."""
    warnings.warn(message, category, stacklevel=3)
