"""Mean +- sample standard deviation over seeds, per grid point."""
from __future__ import annotations

import csv
import io
import math
from collections import defaultdict


def _num(v):
    try:
        return float(v)
    except ValueError:
        return None


def summarize(text):
    """Parse an experiment CSV; returns ``(keys, metrics, rows)``.

    ``rows`` maps each grid point (values of the columns before ``seed``) to
    ``{metric: (mean, std, n)}``. Non-numeric metrics keep their most common
    value with std ``None``.
    """
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if "seed" not in header:
        raise ValueError("CSV has no seed column")
    cut = header.index("seed")
    keys, metrics = header[:cut], header[cut + 1:]
    groups = defaultdict(list)
    for row in reader:
        if row:
            groups[tuple(row[:cut])].append(row[cut + 1:])
    out = {}
    for point, rows in groups.items():
        stats = {}
        for j, m in enumerate(metrics):
            vals = [r[j] for r in rows]
            nums = [_num(v) for v in vals]
            if all(x is not None for x in nums):
                n = len(nums)
                mean = math.fsum(nums) / n
                std = math.sqrt(math.fsum((x - mean) ** 2 for x in nums) / (n - 1)) if n > 1 else 0.0
                stats[m] = (mean, std, n)
            else:
                stats[m] = (max(set(vals), key=lambda v: (vals.count(v), v)), None, len(vals))
        out[point] = stats
    return keys, metrics, dict(sorted(out.items(), key=lambda kv: [_sortkey(v) for v in kv[0]]))


def _sortkey(v):
    x = _num(v)
    return (0, x, "") if x is not None else (1, 0.0, v)


def render(text):
    keys, metrics, rows = summarize(text)
    head = keys + ["n"] + metrics
    lines = ["\t".join(head)]
    for point, stats in rows.items():
        n = next(iter(stats.values()))[2] if stats else 0
        cells = list(point) + [str(n)]
        for m in metrics:
            mean, std, _ = stats[m]
            cells.append(str(mean) if std is None else f"{mean:.6g} ± {std:.3g}")
        lines.append("\t".join(cells))
    return "\n".join(lines)


def report(path):
    with open(path) as f:
        return render(f.read())
