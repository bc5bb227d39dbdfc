"""
Report emission: CSV tables, SVG charts, PPM image dumps and the run manifest
"""
import csv
import io
import json
import logging
import math
import os
import platform
from dataclasses import dataclass, field
from importlib import metadata

import numpy as np
from PIL import Image

from src.shared.exceptions import InvalidConfig, IoFailure, NonFinite
from src.shared.utils import sha256_file

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'
CONFIG_NAME = 'run.cfg'
PACKAGES = ['django', 'djangorestframework', 'torch', 'numpy', 'scipy', 'scikit-learn', 'pillow']


@dataclass
class Table:
    """A CSV artifact: exact column order, one dict per row"""
    name: str
    columns: list
    rows: list = field(default_factory=list)

    def add(self, **row):
        if list(row) != list(self.columns):
            raise InvalidConfig(f"{self.name}: row keys {list(row)} do not match columns {self.columns}")
        self.rows.append(row)

    def column(self, key):
        return [row[key] for row in self.rows]


@dataclass
class ExperimentReport:
    experiment: str
    tables: list = field(default_factory=list)
    charts: dict = field(default_factory=dict)
    images: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def table(self, name):
        return next(t for t in self.tables if t.name == name)


def format_cell(value):
    """None is absent (empty cell); floats use the shortest round-tripping repr"""
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            raise NonFinite(f"Report value {value} is not finite")
        return repr(value)
    return str(value)


def table_text(table):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\r\n')
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([format_cell(row[c]) for c in table.columns])
    return buffer.getvalue()


def _write(path, text):
    try:
        with open(path, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
    except OSError as e:
        raise IoFailure(f"Cannot write {path}: {e}")


def image_grid(panels, scale=4):
    """Side-by-side [C, H, W] panels in [0, 1] -> uint8 HWC array, nearest-neighbour upscaled"""
    strips = []
    for panel in panels:
        array = np.asarray(panel, dtype=np.float64)
        if array.shape[0] == 1:
            array = np.repeat(array, 3, axis=0)
        array = np.clip(array.transpose(1, 2, 0), 0.0, 1.0)
        strips.append(np.kron(array, np.ones((scale, scale, 1))))
        strips.append(np.ones((strips[-1].shape[0], scale, 3)))
    return np.round(np.concatenate(strips[:-1], axis=1) * 255).astype(np.uint8)


def write_ppm(path, pixels):
    """Binary P6"""
    try:
        Image.fromarray(pixels).save(path, format='PPM')
    except OSError as e:
        raise IoFailure(f"Cannot write image dump {path}: {e}")


def package_versions():
    versions = {'python': platform.python_version()}
    for name in PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    return versions


def write_reports(report, out_dir, cfg):
    """
    Emit every artifact of a report into out_dir, then the manifest with the
    full config and the sha256 of each artifact. Nothing is written unless the
    report has at least one table.
    """
    if not report.tables:
        raise InvalidConfig(f"{report.experiment} produced no tables")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise IoFailure(f"Cannot create output directory {out_dir}: {e}")

    written = []
    for table in report.tables:
        path = os.path.join(out_dir, f"{table.name}.csv")
        _write(path, table_text(table))
        written.append(path)
    for name, svg in report.charts.items():
        path = os.path.join(out_dir, f"{name}.svg")
        _write(path, svg)
        written.append(path)
    for name, pixels in report.images.items():
        path = os.path.join(out_dir, f"{name}.ppm")
        write_ppm(path, pixels)
        written.append(path)
    config_path = os.path.join(out_dir, CONFIG_NAME)
    _write(config_path, cfg.to_config_text())
    written.append(config_path)

    manifest = {
        'experiment': report.experiment,
        'config': cfg.to_dict(),
        'seeds': {'seed': cfg.seed},
        'packages': package_versions(),
        'summary': report.summary,
        'artifacts': {os.path.basename(p): sha256_file(p) for p in written},
    }
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    _write(manifest_path, json.dumps(manifest, indent=2, sort_keys=True) + '\n')
    logger.info(f"{report.experiment}: wrote {len(written)} artifacts and {MANIFEST_NAME} to {out_dir}")
    return [*written, manifest_path]
