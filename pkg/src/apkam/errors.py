"""Exception types raised across the package."""
from __future__ import annotations


class ApKamError(Exception):
    """Base class for all package errors."""


# series algebra
class NoCoveringSet(ApKamError):
    pass


class DomainExceeded(ApKamError):
    pass


class BasisMismatch(ApKamError):
    pass


class ProjectionResidualExceeded(ApKamError):
    pass


class NotMonotone(ApKamError):
    pass


class ResonantBasis(ApKamError):
    """An integer relation was found among the stored frequencies."""


# diophantine
class DomainError(ApKamError):
    pass


class ResonanceFound(ApKamError):
    def __init__(self, report, message: str | None = None):
        self.report = report
        super().__init__(message or f"resonance witness k={report.argmin_k} j={report.argmin_j}")


# homological
class NonzeroMean(ApKamError):
    pass


class DivisorUnderflow(ApKamError):
    def __init__(self, k, divisor: float):
        self.k = k
        self.divisor = divisor
        super().__init__(f"|e^(i<k,w>a) - 1| = {divisor:.3e} below floor at k={k}")


class ParityViolation(ApKamError):
    pass


# kam
class SmallnessViolated(ApKamError):
    pass


class FixedPointDiverged(ApKamError):
    pass


class DomainEscape(ApKamError):
    pass


class ScheduleExhausted(ApKamError):
    def __init__(self, curve, trace, message: str = "schedule exhausted"):
        self.curve = curve
        self.trace = trace
        super().__init__(message)


# small twist
class NoAdmissibleBeta(ApKamError):
    def __init__(self, best_beta: float, best_margin: float):
        self.best_beta = best_beta
        self.best_margin = best_margin
        super().__init__(f"no admissible beta; best margin {best_margin:.3e} at beta={best_beta!r}")


class ResonantModeEncountered(ApKamError):
    pass


class HypothesisViolated(ApKamError):
    pass


# oscillator
class StepSizeUnderflow(ApKamError):
    pass


class ThetaNotMonotone(ApKamError):
    pass


class QuadratureFailure(ApKamError):
    pass


class AnnulusEscape(ApKamError):
    pass


class ResonantForcing(ApKamError):
    pass


class MarginZero(ApKamError):
    pass


# cli
class ConfigInvalid(ApKamError):
    pass


class SchemaMismatch(ApKamError):
    pass
