"""
Per-sample attack results as CSV
"""
import csv
import logging

from src.shared.exceptions import IoFailure

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ['sample_id', 'success', 'queries', 'l2_delta', 'linf_delta', 'initially_correct']


def result_rows(results):
    for r in results:
        yield [r.sample_id, int(r.success), r.queries, repr(float(r.l2)), repr(float(r.linf)), int(r.initially_correct)]


def write_results_csv(results, path):
    try:
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(RESULT_COLUMNS)
            writer.writerows(result_rows(results))
    except OSError as e:
        raise IoFailure(f"Cannot write attack results {path}: {e}")
    logger.info(f"Wrote {len(results)} attack results to {path}")
