"""
CSV exports of the autocorrelation profile and covariance blocks
"""
import csv
import logging

from src.shared.exceptions import InvalidConfig, IoFailure

logger = logging.getLogger(__name__)

PROFILE_COLUMNS = ['k', 'R', 'R_norm']


def write_profile_csv(profile, path):
    """One row per lag k = 1..k_max"""
    try:
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(PROFILE_COLUMNS)
            for k, value, norm in profile.rows():
                writer.writerow([k, repr(value), repr(norm)])
    except OSError as e:
        raise IoFailure(f"Cannot write profile {path}: {e}")
    logger.info(f"Wrote autocorrelation profile ({profile.k_max} lags) to {path}")


def write_heatmap_csv(block, path):
    """Dense covariance block, one matrix row per line"""
    try:
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            for row in block:
                writer.writerow([repr(float(v)) for v in row])
    except OSError as e:
        raise IoFailure(f"Cannot write heatmap {path}: {e}")
    logger.info(f"Wrote {block.shape[0]}x{block.shape[1]} covariance block to {path}")


def parse_block(text):
    """'i0:i1' -> (i0, i1)"""
    try:
        start, stop = (int(part) for part in text.split(':'))
    except ValueError:
        raise InvalidConfig(f"Block must look like i0:i1, got {text!r}")
    return start, stop
