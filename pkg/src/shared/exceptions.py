"""
Custom exception classes shared by every service
"""


class SplitLeakError(Exception):
    """Base exception for all custom exceptions"""
    default_detail = 'An error occurred'
    error_code = 'SPLITLEAK_ERROR'

    def __init__(self, message=None, details=None):
        self.message = message or self.default_detail
        self.details = details or {}
        super().__init__(self.message)


# Tensor engine

class ShapeMismatch(SplitLeakError):
    """Operand shapes do not line up"""
    default_detail = 'Shape mismatch'
    error_code = 'SHAPE_MISMATCH'


class LabelOutOfRange(SplitLeakError):
    """Class label outside [0, K)"""
    default_detail = 'Label out of range'
    error_code = 'LABEL_OUT_OF_RANGE'


class NotADistribution(SplitLeakError):
    """Rows are not probability vectors"""
    default_detail = 'Input rows are not probability distributions'
    error_code = 'NOT_A_DISTRIBUTION'


class NonFinite(SplitLeakError):
    """NaN or Inf produced"""
    default_detail = 'Non-finite value encountered'
    error_code = 'NON_FINITE'


# Model zoo

class InvalidSpec(SplitLeakError):
    """Model spec does not shape-check"""
    default_detail = 'Invalid model spec'
    error_code = 'INVALID_SPEC'

    def __init__(self, message=None, layer_index=None, details=None):
        details = dict(details or {})
        if layer_index is not None:
            details['layer_index'] = layer_index
        self.layer_index = layer_index
        super().__init__(message, details)


class InvalidSplitPoint(SplitLeakError):
    """Split index not permitted"""
    default_detail = 'Invalid split point'
    error_code = 'INVALID_SPLIT_POINT'


class DatasetEmpty(SplitLeakError):
    """Dataset has no samples"""
    default_detail = 'Dataset is empty'
    error_code = 'DATASET_EMPTY'


class IoFailure(SplitLeakError):
    """File could not be read or written"""
    default_detail = 'I/O failure'
    error_code = 'IO_FAILURE'


class FormatVersionMismatch(SplitLeakError):
    """Unknown magic or format version"""
    default_detail = 'Unsupported file format or version'
    error_code = 'FORMAT_VERSION_MISMATCH'


class ChecksumMismatch(SplitLeakError):
    """CRC32 does not match"""
    default_detail = 'Checksum mismatch'
    error_code = 'CHECKSUM_MISMATCH'


# Wire protocol

class BadMagic(SplitLeakError):
    default_detail = 'Bad frame magic'
    error_code = 'BAD_MAGIC'


class UnsupportedVersion(SplitLeakError):
    default_detail = 'Unsupported frame version'
    error_code = 'UNSUPPORTED_VERSION'


class Truncated(SplitLeakError):
    default_detail = 'Truncated frame'
    error_code = 'TRUNCATED'


class UnknownType(SplitLeakError):
    default_detail = 'Unknown message type'
    error_code = 'UNKNOWN_TYPE'


class PayloadLengthMismatch(SplitLeakError):
    """Payload length disagrees with the configured shape"""
    default_detail = 'Payload length mismatch'
    error_code = 'PAYLOAD_LENGTH_MISMATCH'


class InconsistentDim(SplitLeakError):
    """Feature dimension changed mid-capture or captures misaligned"""
    default_detail = 'Inconsistent feature dimension'
    error_code = 'INCONSISTENT_DIM'


class ProtocolError(SplitLeakError):
    """Peer answered with an error frame or broke the protocol"""
    default_detail = 'Protocol error'
    error_code = 'PROTOCOL_ERROR'


class Timeout(SplitLeakError):
    default_detail = 'Timed out waiting for peer'
    error_code = 'TIMEOUT'


# Shape estimator

class TooFewSamples(SplitLeakError):
    default_detail = 'At least two samples are required'
    error_code = 'TOO_FEW_SAMPLES'


class DegenerateSignal(SplitLeakError):
    default_detail = 'Row-mean signal is identically zero'
    error_code = 'DEGENERATE_SIGNAL'


class NoPeakFound(SplitLeakError):
    default_detail = 'No interior peak among divisor lags'
    error_code = 'NO_PEAK_FOUND'


class NoValidFactorization(SplitLeakError):
    default_detail = 'No (C, H, W) factorization matches'
    error_code = 'NO_VALID_FACTORIZATION'


class BlockTooLarge(SplitLeakError):
    default_detail = 'Requested covariance block is too large'
    error_code = 'BLOCK_TOO_LARGE'


class StageError(SplitLeakError):
    """Component error labelled with the pipeline stage it came from"""
    default_detail = 'Pipeline stage failed'
    error_code = 'STAGE_ERROR'

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(
            f"{stage}: {cause.message if isinstance(cause, SplitLeakError) else cause}",
            {'stage': stage, 'cause': getattr(cause, 'error_code', type(cause).__name__)},
        )


# Surrogate builder

class MissingSupervision(SplitLeakError):
    default_detail = 'Supervision required by the output mode is missing'
    error_code = 'MISSING_SUPERVISION'


class ShapeEstimateMissing(SplitLeakError):
    default_detail = 'A shape estimate is required'
    error_code = 'SHAPE_ESTIMATE_MISSING'


class DivergedLoss(SplitLeakError):
    default_detail = 'Training loss became non-finite'
    error_code = 'DIVERGED_LOSS'


# Attacks

class DegenerateDirection(SplitLeakError):
    default_detail = 'Sampled direction is zero'
    error_code = 'DEGENERATE_DIRECTION'


class FeedbackUnavailable(SplitLeakError):
    default_detail = 'Attack needs score feedback'
    error_code = 'FEEDBACK_UNAVAILABLE'


class NonFiniteGradient(SplitLeakError):
    default_detail = 'Gradient is not finite'
    error_code = 'NON_FINITE_GRADIENT'


# Harness

class MalformedHeader(SplitLeakError):
    default_detail = 'Malformed dataset header'
    error_code = 'MALFORMED_HEADER'


class InvalidConfig(SplitLeakError):
    """Configuration failed validation"""
    default_detail = 'Invalid configuration'
    error_code = 'INVALID_CONFIG'
