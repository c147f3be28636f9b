"""Exponential-decay fits for error sweeps.

Every experiment ends in the same shape of data: an error measured
against a radius or distance, expected to fall off like C exp(-mu l)
until it hits a numerical floor.  fit_decay does the least-squares fit
on the log of the points above the floor; DecayRecord packages the fit
with the raw points, the constants the run was performed under, and
the reference rate the fitted one should be compared against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import InsufficientData

# Below this the measured errors are double-precision noise, not signal.
NOISE_FLOOR = 1e-12


def fit_decay(points, floor=NOISE_FLOOR):
    """Fit e ~ C exp(-mu l) to (l, e) pairs above the noise floor.

    Returns (mu_hat, c_hat, r_squared).  Points at or below the floor
    are dropped before fitting; fewer than three survivors raises
    InsufficientData.  mu_hat is clamped at zero so a flat or rising
    tail reads as "no decay" rather than a negative rate.
    """
    pts = [(float(l), float(e)) for l, e in points]
    usable = [(l, e) for l, e in pts if e > floor]
    if len(usable) < 3:
        raise InsufficientData(
            f"{len(usable)} points above the noise floor {floor:g}, need 3"
        )
    ls = np.array([l for l, _ in usable])
    logs = np.log([e for _, e in usable])
    slope, intercept = np.polyfit(ls, logs, 1)
    fitted = slope * ls + intercept
    ss_res = float(((logs - fitted) ** 2).sum())
    ss_tot = float(((logs - logs.mean()) ** 2).sum())
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res < 1e-20 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    r2 = float(min(1.0, max(0.0, r2)))
    mu_hat = float(max(0.0, -slope))
    return mu_hat, float(np.exp(intercept)), r2


@dataclass
class DecayRecord:
    """One decay measurement: points, fit, floor bookkeeping, context.

    mu_hat/prefactor/r_squared are None when too few points cleared the
    floor for a fit; the failure is recorded as a warning instead of an
    exception so sweeps with a short range still produce a record.
    """

    points: tuple
    mu_hat: float | None
    prefactor: float | None
    r_squared: float | None
    floor: float
    n_dropped: int
    reference_rate: float | None = None
    constants: dict = field(default_factory=dict)
    warnings: tuple = ()

    @classmethod
    def measure(cls, points, floor=NOISE_FLOOR, reference_rate=None,
                constants=None, warnings=()):
        pts = tuple((float(l), float(e)) for l, e in points)
        dropped = sum(1 for _, e in pts if e <= floor)
        warns = list(warnings)
        try:
            mu_hat, c_hat, r2 = fit_decay(pts, floor=floor)
        except InsufficientData as exc:
            mu_hat = c_hat = r2 = None
            warns.append(f"no fit: {exc}")
        return cls(
            points=pts,
            mu_hat=mu_hat,
            prefactor=c_hat,
            r_squared=r2,
            floor=float(floor),
            n_dropped=dropped,
            reference_rate=None if reference_rate is None else float(reference_rate),
            constants=dict(constants or {}),
            warnings=tuple(warns),
        )

    def to_dict(self):
        return {
            "points": [[l, e] for l, e in self.points],
            "mu_hat": self.mu_hat,
            "prefactor": self.prefactor,
            "r_squared": self.r_squared,
            "floor": self.floor,
            "n_dropped": self.n_dropped,
            "reference_rate": self.reference_rate,
            "constants": dict(self.constants),
            "warnings": list(self.warnings),
        }
