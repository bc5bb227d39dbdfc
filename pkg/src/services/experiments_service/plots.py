"""
SVG charts rendered from Django templates. Geometry is computed here; the
templates only place the precomputed coordinates.
"""
import math

from django.template.loader import render_to_string

WIDTH = 520
HEIGHT = 340
LEFT, RIGHT, TOP, BOTTOM = 56, 150, 36, 44
TICK = 4
PALETTE = ['#1f77b4', '#d62728', '#2ca02c', '#ff7f0e', '#9467bd', '#8c564b', '#e377c2', '#7f7f7f', '#17becf', '#bcbd22']


def _fmt(value):
    return f"{value:.4g}"


def _coord(value):
    return round(value, 2)


class _Frame:
    """Maps data coordinates into the plotting area"""

    def __init__(self, x_range, y_range, log_x=False):
        self.log_x = log_x
        self.x_lo, self.x_hi = self._span(*(map(self._x, x_range)))
        self.y_lo, self.y_hi = self._span(*y_range)
        self.left, self.right = LEFT, WIDTH - RIGHT
        self.top, self.bottom = TOP, HEIGHT - BOTTOM

    @staticmethod
    def _span(lo, hi):
        return (lo - 0.5, hi + 0.5) if hi <= lo else (lo, hi)

    def _x(self, value):
        return math.log10(value) if self.log_x else value

    def x(self, value):
        t = (self._x(value) - self.x_lo) / (self.x_hi - self.x_lo)
        return _coord(self.left + t * (self.right - self.left))

    def y(self, value):
        t = (value - self.y_lo) / (self.y_hi - self.y_lo)
        return _coord(self.bottom - t * (self.bottom - self.top))

    def context(self, title, x_label, y_label, x_ticks, y_ticks):
        return {
            'width': WIDTH,
            'height': HEIGHT,
            'title': title,
            'title_x': WIDTH // 2,
            'left': self.left,
            'right': self.right,
            'top': self.top,
            'bottom': self.bottom,
            'x_label': x_label,
            'x_label_x': _coord((self.left + self.right) / 2),
            'x_label_y': HEIGHT - 8,
            'y_label': y_label,
            'y_label_y': _coord((self.top + self.bottom) / 2),
            'x_ticks': [
                {'pos': self.x(v), 'end': self.bottom + TICK, 'label_pos': self.bottom + 16, 'label': _fmt(v)}
                for v in x_ticks
            ],
            'y_ticks': [
                {'pos': self.y(v), 'end': self.left - TICK, 'label_pos': self.left - 6, 'label': _fmt(v)}
                for v in y_ticks
            ],
        }


def _linear_ticks(lo, hi, count=5):
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def line_plot(title, series, x_label, y_label, y_range=(0.0, 1.0), log_x=False):
    """series: {name: [(x, y), ...]}; points with y None are skipped"""
    xs = sorted({x for points in series.values() for x, _ in points}) or [0.0, 1.0]
    frame = _Frame((xs[0], xs[-1]), y_range, log_x=log_x)
    context = frame.context(title, x_label, y_label, xs if len(xs) <= 12 else _linear_ticks(xs[0], xs[-1]),
                            _linear_ticks(*y_range))
    context['series'] = []
    for i, (name, points) in enumerate(series.items()):
        kept = [(frame.x(x), frame.y(y)) for x, y in points if y is not None]
        context['series'].append({
            'name': name,
            'color': PALETTE[i % len(PALETTE)],
            'points': ' '.join(f"{x},{y}" for x, y in kept),
            'markers': [{'x': x, 'y': y} for x, y in kept],
            'legend_x': WIDTH - RIGHT + 10,
            'legend_y': TOP + 14 * (i + 1),
        })
    return render_to_string('experiments_service/line_plot.svg', context)


def scatter_plot(title, points, x_label, y_label, notes=(), x_range=(0.0, 1.0), y_range=(0.0, 1.0)):
    """points: [(x, y, group, label)]; one colour per group"""
    frame = _Frame(x_range, y_range)
    context = frame.context(title, x_label, y_label, _linear_ticks(*x_range), _linear_ticks(*y_range))
    groups = list(dict.fromkeys(group for _, _, group, _ in points))
    colors = {group: PALETTE[i % len(PALETTE)] for i, group in enumerate(groups)}
    context['points'] = [
        {'x': frame.x(x), 'y': frame.y(y), 'color': colors[group], 'label': label}
        for x, y, group, label in points
        if x is not None and y is not None
    ]
    context['notes'] = [
        {'x': WIDTH - RIGHT + 10, 'y': TOP + 14 * (i + 1), 'color': colors.get(group, 'black'), 'text': text}
        for i, (group, text) in enumerate(notes)
    ]
    return render_to_string('experiments_service/scatter_plot.svg', context)


def _diverging(value, limit):
    """White at zero, red for positive, blue for negative"""
    if value is None:
        return '#dddddd'
    t = min(abs(value) / limit, 1.0) if limit > 0 else 0.0
    fade = int(round(255 * (1 - t)))
    return f"#ff{fade:02x}{fade:02x}" if value >= 0 else f"#{fade:02x}{fade:02x}ff"


def heat_grid(title, row_labels, col_labels, values, x_label, y_label, cell_size=44):
    """values[r][c]; None cells are grey"""
    left, top = LEFT + 20, TOP + 24
    limit = max((abs(v) for row in values for v in row if v is not None), default=0.0)
    cells = []
    for r, row in enumerate(values):
        for c, value in enumerate(row):
            x, y = left + c * cell_size, top + r * cell_size
            cells.append({
                'x': x,
                'y': y,
                'color': _diverging(value, limit),
                'text_x': x + cell_size / 2,
                'text_y': y + cell_size / 2,
                'label': '' if value is None else f"{value:+.2f}",
            })
    width = max(WIDTH, left + cell_size * len(col_labels) + 20)
    height = max(HEIGHT, top + cell_size * len(row_labels) + 40)
    context = {
        'width': width,
        'height': height,
        'title': title,
        'title_x': width // 2,
        'cells': cells,
        'cell_size': cell_size,
        'col_labels': [
            {'pos': left + (c + 0.5) * cell_size, 'offset': top - 6, 'text': label} for c, label in enumerate(col_labels)
        ],
        'row_labels': [
            {'pos': top + (r + 0.5) * cell_size, 'offset': left - 6, 'text': label} for r, label in enumerate(row_labels)
        ],
        'x_label': x_label,
        'x_label_x': left + cell_size * len(col_labels) / 2,
        'x_label_y': top + cell_size * len(row_labels) + 20,
        'y_label': y_label,
        'y_label_y': top + cell_size * len(row_labels) / 2,
    }
    return render_to_string('experiments_service/heat_grid.svg', context)
