"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so the CLI can emit
structured error objects without string matching.
"""

from __future__ import annotations


class SaddlepermError(Exception):
    code = "error"

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = context

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self), "context": self.context}


class DomainError(SaddlepermError, ValueError):
    code = "domain_error"


class NotPositiveDefinite(SaddlepermError, ValueError):
    code = "not_positive_definite"


class DegenerateScores(SaddlepermError, ValueError):
    code = "degenerate_scores"


class SingularCovariance(SaddlepermError, ValueError):
    code = "singular_covariance"


class OverflowGuard(SaddlepermError, ArithmeticError):
    """A tilt is so large that an exponent argument exceeds 700."""

    code = "overflow_guard"


class NoConvergence(SaddlepermError, ArithmeticError):
    """Newton iteration did not converge; the target is (numerically) on or
    outside the boundary of the mean domain."""

    code = "no_convergence"


class LevelUnreachable(SaddlepermError, ArithmeticError):
    code = "level_unreachable"


class DegenerateDirection(SaddlepermError, ArithmeticError):
    code = "degenerate_direction"


class NonpositiveG(SaddlepermError, ArithmeticError):
    code = "nonpositive_G"


class TooLarge(SaddlepermError, ValueError):
    code = "too_large"


class MalformedCsv(SaddlepermError, ValueError):
    code = "malformed_csv"


class MixedArity(SaddlepermError, ValueError):
    code = "mixed_arity"
