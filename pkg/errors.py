"""
Exception types shared by every pipeline stage
"""


class HsiSegError(Exception):
    """Base class for all toolkit errors"""


class InputError(HsiSegError, ValueError):
    """Malformed, missing or inconsistent input (files, parameters, label maps)"""


class DegenerateError(HsiSegError, ArithmeticError):
    """A result is numerically undefined for the given data"""
