"""
Custom validators shared by serializers and commands
"""

import re

from .exceptions import InvalidConfig


def validate_endpoint(endpoint):
    """Validate 'host:port' format"""
    if not re.match(r'^[A-Za-z0-9_.\-]*:\d{1,5}$', endpoint or ''):
        raise InvalidConfig(f'Invalid endpoint {endpoint!r}, expected host:port')
    port = int(endpoint.rsplit(':', 1)[1])
    if not 0 <= port <= 65535:
        raise InvalidConfig(f'Port out of range in {endpoint!r}')


def validate_shape(shape, rank=3):
    """Validate a tuple of positive dimension sizes"""
    if len(shape) != rank or any(int(d) < 1 for d in shape):
        raise InvalidConfig(f'Expected {rank} positive dimensions, got {tuple(shape)}')
    return tuple(int(d) for d in shape)


def parse_shape(text):
    """Parse 'C,H,W' or 'CxHxW'"""
    parts = re.split(r'[,x]', text.strip())
    try:
        return validate_shape([int(p) for p in parts])
    except ValueError:
        raise InvalidConfig(f'Invalid shape {text!r}')


def parse_epsilon(text):
    """Parse an epsilon value: a float, 'a/b' fraction or 'inf'"""
    text = str(text).strip().lower()
    if text in ('inf', 'infinity', 'unbounded'):
        return float('inf')
    try:
        if '/' in text:
            num, den = text.split('/', 1)
            value = float(num) / float(den)
        else:
            value = float(text)
    except (ValueError, ZeroDivisionError):
        raise InvalidConfig(f'Invalid epsilon {text!r}')
    if value < 0:
        raise InvalidConfig('Epsilon must be non-negative')
    return value


def parse_norm(text):
    """Parse '2' or 'inf' into 2 or float('inf')"""
    text = str(text).strip().lower()
    if text in ('2', 'l2'):
        return 2
    if text in ('inf', 'linf'):
        return float('inf')
    raise InvalidConfig(f'Unsupported norm {text!r}')


def run_serializer(serializer_class, data):
    """Validate with a DRF serializer; field errors surface as InvalidConfig"""
    serializer = serializer_class(data=data)
    if not serializer.is_valid():
        raise InvalidConfig(
            f'Invalid {serializer_class.__name__.replace("Serializer", "")}',
            {'errors': {field: [str(e) for e in errs] for field, errs in serializer.errors.items()}},
        )
    return serializer.validated_data
