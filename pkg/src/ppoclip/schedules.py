"""Clipping-range schedules.

Each schedule maps training progress ``t`` (environment steps consumed)
out of ``total`` to a clipping range:

* ``constant``     eps0
* ``linear``       eps0 * (total - t) / total
* ``exponential``  eps0 * alpha ** (100 * t / total)
"""
from dataclasses import dataclass

from .exceptions import UsageError

KINDS = ("constant", "linear", "exponential")
_ALIASES = {"exp": "exponential", "lin": "linear", "const": "constant"}


def canonical_kind(kind):
    kind = _ALIASES.get(kind, kind)
    if kind not in KINDS:
        raise UsageError(f"unknown clip schedule {kind!r}; expected one of constant, linear, exp")
    return kind


@dataclass(frozen=True)
class ClipSchedule:
    kind: str = "constant"
    eps0: float = 0.2
    alpha: float = 0.99

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_kind(self.kind))
        if not self.eps0 > 0:
            raise UsageError(f"eps0 must be positive, got {self.eps0}")
        if not 0 < self.alpha < 1:
            raise UsageError(f"alpha must lie in (0, 1), got {self.alpha}")

    def __call__(self, t, total):
        return epsilon_at(self, t, total)


def epsilon_at(schedule, t, total):
    """Clipping range after ``t`` of ``total`` timesteps."""
    if total <= 0:
        raise UsageError(f"total timesteps must be positive, got {total}")
    if t < 0:
        raise UsageError(f"timestep must be non-negative, got {t}")
    progress = t / total
    if schedule.kind == "constant":
        eps = schedule.eps0
    elif schedule.kind == "linear":
        eps = (total - t) / total * schedule.eps0
    else:
        eps = schedule.alpha ** (100.0 * progress) * schedule.eps0
    return max(eps, 0.0)
