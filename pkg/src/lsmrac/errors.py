"""Exception types shared across the package."""


class LsmracError(Exception):
    """Base class for all library errors."""


class SingularMinor(LsmracError):
    """A leading principal minor is (numerically) zero, so the triangular
    factorization does not exist. ``index`` is 1-based."""

    def __init__(self, index: int, value: float = 0.0):
        self.index = int(index)
        self.value = float(value)
        super().__init__(f"leading principal minor {self.index} is singular "
                         f"(scaled value {self.value:.3e})")


class NonPositiveDplus(LsmracError):
    """A requested positive-diagonal scaling matrix has a non-positive entry."""


class SearchExhausted(LsmracError):
    """The doubling search for a certified scaling exponent hit its cap."""


class NonFiniteState(LsmracError):
    """An integration step produced NaN or infinity."""


class Diverged(LsmracError):
    """A closed-loop run left the configured state envelope.

    Carries the failure time and the partial trace recorded up to it.
    """

    def __init__(self, time: float, trace=None):
        self.time = float(time)
        self.trace = trace
        super().__init__(f"simulation diverged at t = {self.time:.6g} s")


class NonSpdCovariance(LsmracError):
    """A covariance block failed its positive-definiteness check."""


class UnsupportedPlantFamily(LsmracError):
    """The closed-form matching oracle only covers first-order diagonal plants."""


class ScenarioError(LsmracError):
    """A scenario violates a structural or controller-design constraint."""


class ParseError(LsmracError):
    """A scenario file could not be parsed. ``line`` is 1-based, 0 = whole file."""

    def __init__(self, message: str, line: int = 0, key: str = ""):
        self.line = int(line)
        self.key = key
        loc = f" (line {line}" + (f", key '{key}'" if key else "") + ")" if line else \
              (f" (key '{key}')" if key else "")
        super().__init__(message + loc)
