"""Exception types raised across the package."""


class PwcipError(Exception):
    """Base class for all package errors."""


class ValidationFailure(PwcipError):
    def __init__(self, condition, location=None, value=None):
        self.condition = condition
        self.location = location
        self.value = value
        msg = f"medium check '{condition}' failed"
        if location is not None:
            msg += f" at {tuple(float(c) for c in location)}"
        if value is not None:
            msg += f" (value {value:.6g})"
        super().__init__(msg)


class StepFailure(PwcipError):
    """Eikonal defect along a ray exceeded tolerance."""


class RegularityViolation(PwcipError):
    """Shooting inversion failed: no convergence or near-singular Jacobian."""

    def __init__(self, message, location=None):
        self.location = location
        super().__init__(message)


class BlowupDetected(PwcipError):
    """Riccati curvature exceeded the caustic cap."""

    def __init__(self, message, location=None):
        self.location = location
        super().__init__(message)


class DomainMismatch(PwcipError):
    pass


class CFLViolation(PwcipError):
    pass


class BudgetExceeded(PwcipError):
    pass


class HorizonTooShort(PwcipError):
    pass


class FloorViolation(PwcipError):
    """w(., 0) dropped below the amplitude floor A0."""


class NonDecrease(PwcipError):
    def __init__(self, message, trace=None):
        self.trace = trace
        super().__init__(message)


class ConfigError(PwcipError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")
