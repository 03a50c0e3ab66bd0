"""
Exception types shared by every subpackage.

Verdict-style checks report failures in their return value; these exceptions
are reserved for inputs that make an operation meaningless.
"""

from typing import Optional


class CNLSError(Exception):
    """Base class for all toolkit errors"""


class InvalidTangentialSet(CNLSError, ValueError):
    """Tangential set is empty or has repeated sites"""


class AmbiguousResonance(CNLSError, ValueError):
    """A normal site has more than one resonance triplet (set not admissible)"""

    def __init__(self, message: str, site=None, witnesses=None):
        super().__init__(message)
        self.site = site
        self.witnesses = list(witnesses or [])


class TruncationOverflow(CNLSError, ArithmeticError):
    """A produced term references a site outside the truncation radius"""


class TruncationTooSmall(CNLSError, ValueError):
    """The truncation radius leaves no room for the requested sampling"""


class ZeroDivisor(CNLSError, ArithmeticError):
    """A selected homological term has a vanishing denominator"""


class InvalidConfig(CNLSError, ValueError):
    """Numerical parameters are outside the range an operation supports"""


class ConfigError(CNLSError, ValueError):
    """Run configuration could not be parsed or validated"""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        location = ""
        if key is not None:
            location = f" [key '{key}'" + (f", line {line}" if line is not None else "") + "]"
        super().__init__(f"{message}{location}")
        self.key = key
        self.line = line


class BlowUp(CNLSError, RuntimeError):
    """Time integration left the configured amplitude bound"""


class DegenerateFit(CNLSError, RuntimeError):
    """Phase of a tracked mode cannot be fitted reliably"""
