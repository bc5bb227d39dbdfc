"""
Shared utilities module for the split-inference simulator
"""

from .exceptions import (
    SplitLeakError,
    ShapeMismatch,
    InvalidConfig,
    IoFailure,
    ProtocolError,
    StageError,
)

__all__ = [
    'SplitLeakError',
    'ShapeMismatch',
    'InvalidConfig',
    'IoFailure',
    'ProtocolError',
    'StageError',
]
