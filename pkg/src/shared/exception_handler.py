"""
Exception handler that standardizes error documents across services
"""
import json
import logging
import traceback

from .exceptions import SplitLeakError

logger = logging.getLogger(__name__)


def format_error_document(exc, context=None):
    """
    Format any exception in a consistent structure:
    {
        'status': 'error',
        'message': 'Human readable error message',
        'error_code': 'ERROR_CODE',
        'details': {...},
    }
    """
    error_code = determine_error_code(exc)
    message = exc.message if isinstance(exc, SplitLeakError) else str(exc) or 'Internal error'
    document = {
        'status': 'error',
        'message': message,
        'error_code': error_code,
    }
    details = getattr(exc, 'details', None)
    if details:
        document['details'] = _jsonable(details)
    if context:
        log_exception(exc, document, context, include_traceback=error_code == 'INTERNAL_ERROR')
    return document


def encode_error_document(exc, context=None):
    """Error document as UTF-8 JSON, the payload of an error frame"""
    return json.dumps(format_error_document(exc, context), sort_keys=True).encode('utf-8')


def decode_error_document(payload):
    """Parse an error frame payload; tolerate garbage"""
    try:
        document = json.loads(payload.decode('utf-8'))
        if isinstance(document, dict):
            return document
    except (UnicodeDecodeError, json.JSONDecodeError):
        pass
    return {'status': 'error', 'message': 'Unparseable error payload', 'error_code': 'PROTOCOL_ERROR'}


def determine_error_code(exc):
    """
    Determine a machine-readable error code based on exception type
    """
    if isinstance(exc, SplitLeakError):
        return exc.error_code

    builtin_map = {
        'FileNotFoundError': 'IO_FAILURE',
        'PermissionError': 'IO_FAILURE',
        'ConnectionError': 'PROTOCOL_ERROR',
        'TimeoutError': 'TIMEOUT',
        'ValueError': 'BAD_REQUEST',
    }
    for klass in type(exc).__mro__:
        if klass.__name__ in builtin_map:
            return builtin_map[klass.__name__]
    return 'INTERNAL_ERROR'


def log_exception(exc, error_data, context, include_traceback=False):
    """
    Log exception with appropriate level and context
    """
    error_code = error_data.get('error_code', 'UNKNOWN')
    log_message = (
        f"Error - {error_code} | "
        f"{context.get('service', 'unknown')} session {context.get('session_id', '-')} | "
        f"Message: {error_data['message']}"
    )

    if error_code in ('INTERNAL_ERROR', 'IO_FAILURE', 'DIVERGED_LOSS'):
        logger.error(log_message)
        if include_traceback:
            logger.error(f"Traceback: {traceback.format_exc()}")
    elif error_code in ('PAYLOAD_LENGTH_MISMATCH', 'BAD_MAGIC', 'TRUNCATED', 'UNKNOWN_TYPE',
                        'UNSUPPORTED_VERSION', 'SHAPE_MISMATCH', 'PROTOCOL_ERROR'):
        logger.warning(log_message)
    else:
        logger.info(log_message)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)
