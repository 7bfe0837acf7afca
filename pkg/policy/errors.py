"""
Error types raised across the policy stack.
The command layer maps every CDPError to a non-zero exit code.
"""

from typing import Optional


class CDPError(Exception):
    """Base class for all errors raised by this project."""


class ShapeError(CDPError, ValueError):
    """Operand shapes do not fit together."""


class ConfigError(CDPError, ValueError):
    """A configuration value is out of range or inconsistent."""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class GeometryError(ConfigError):
    """History / chunk / target lengths violate the chunking rules."""


class RangeError(CDPError, IndexError):
    """An index or length falls outside its allowed range."""


class ContractError(CDPError, RuntimeError):
    """A call violated the pre-conditions of an operation."""


class DegenerateRowError(CDPError, ArithmeticError):
    """An attention row has no visible column."""


class CheckpointError(CDPError):
    """Checkpoint file is malformed or does not match the live config."""


class EnvFault(CDPError):
    """The environment rejected an action."""

    def __init__(self, message: str, step: Optional[int] = None):
        self.step = step
        super().__init__(f"step {step}: {message}" if step is not None else message)


class DemoGenerationError(CDPError):
    """The scripted expert failed to produce any usable demonstration."""
