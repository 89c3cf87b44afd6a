"""Experiment drivers: one CSV row per grid point and seed.

Every CSV starts with the grid axes of its kind, then ``seed``, then the
metric columns; :mod:`report` relies on that order.
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .. import data, zoo
from ..errors import ConfigError
from ..faults import FaultConfig
from ..layer_select import select_layers
from ..nn.model import quantize_model
from ..protocol.transport import SimLink
from ..runtime import Device, evaluate, retrain
from ..runtime.config import STAGES
from ..tmr import TmrPolicy, Variant, tmr_forward
from .config import Config

log = logging.getLogger(__name__)


def _floats(s):
    return [float(v) for v in s]


def _ints(s):
    return [int(v) for v in s]


def _strs(s):
    return [str(v) for v in s]


@dataclass(frozen=True)
class Kind:
    axes: dict  # axis -> (converter, default values)
    metrics: tuple
    doc: str


KINDS = {
    "ber_sweep": Kind({"ber": (_floats, ["0", "1e-6", "1e-5", "1e-4", "1e-3"]),
                       "tmr": (_strs, ["none"])},
                      ("top1", "top5", "n"),
                      "accuracy of the unretrained model under faults (UR-F / UR-C curves)"),
    "retrain": Kind({"ber": (_floats, ["1e-4", "3e-4"])},
                    ("acc_before", "acc_after", "gain", "clean_after", "iterations",
                     "bytes_up", "bytes_down", "seconds"),
                    "accuracy before and after remote retraining at each ber"),
    "matched_vs_unmatched": Kind({"train_ber": (_floats, ["1e-6", "3e-4"]),
                                  "eval_ber": (_floats, ["1e-6", "3e-4"])},
                                 ("acc_retrained", "acc_unretrained", "matched"),
                                 "models retrained at one ber, evaluated at another"),
    "time_decomposition": Kind({"profile": (_strs, ["wpan", "hspa"]),
                                "ber": (_floats, ["1e-6", "1e-4"]),
                                "scheme": (_strs, ["raw", "increment"])},
                               STAGES + ("total", "bytes_up", "bytes_down", "iterations"),
                               "mean per-iteration stage times, raw vs increment uplink"),
    "threshold_study": Kind({"threshold": (_floats, ["0.5", "0.6", "0.8"]),
                             "ber": (_floats, ["1e-5", "1e-4"])},
                            ("acc_after", "packet_bytes", "raw_bytes", "compression",
                             "sparse_layers", "seconds_per_iter"),
                            "similarity threshold vs accuracy and transmitted bytes"),
    "batch_sweep": Kind({"batch_size": (_ints, ["2", "4", "8", "16"]),
                         "ber": (_floats, ["3e-4"])},
                        ("acc_before", "acc_after", "iterations"),
                        "retrained accuracy across batch sizes"),
    "epoch_sweep": Kind({"epochs": (_ints, ["1", "2", "3"]),
                         "ber": (_floats, ["3e-4"])},
                        ("acc_before", "acc_after", "iterations"),
                        "retrained accuracy across epoch counts"),
    "tmr_compare": Kind({"tmr": (_strs, ["lw", "nw"]),
                         "ber": (_floats, ["1e-5", "1e-4", "1e-3"])},
                        ("final_similarity", "mean_similarity"),
                        "voted-vs-faulty output similarity of LW-TMR and NW-TMR"),
    "select_layers": Kind({"r_max": (_floats, ["0.2", "0.5"]),
                           "ber": (_floats, ["3e-4"])},
                          ("plan", "r", "accuracy", "evaluations"),
                          "greedy critical-layer protection under an overhead budget"),
}


def parse_grid(kind, text):
    """``axis=v1,v2;axis=...`` -> ordered {axis: [values]} with kind defaults filled in."""
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; choose from {sorted(KINDS)}")
    axes = KINDS[kind].axes
    given = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        if "=" not in part:
            raise ConfigError(f"grid entry {part!r} is not axis=values")
        axis, values = (p.strip() for p in part.split("=", 1))
        if axis not in axes:
            raise ConfigError(f"grid key {axis!r} not valid for {kind}; expected {sorted(axes)}")
        given[axis] = [v.strip() for v in values.split(",") if v.strip()]
        if not given[axis]:
            raise ConfigError(f"grid axis {axis!r} is empty")
    grid = {}
    for axis, (conv, default) in axes.items():
        try:
            grid[axis] = conv(given.get(axis, default))
        except ValueError as exc:
            raise ConfigError(f"bad value on grid axis {axis!r}: {exc}") from None
    return grid


def columns(kind):
    return list(KINDS[kind].axes) + ["seed"] + list(KINDS[kind].metrics)


class Context:
    """Datasets and the pretrained start model, loaded once per run."""

    def __init__(self, cfg: Config, train=None, test=None, fmodel=None):
        self.cfg = cfg
        if train is None or test is None:
            train, test = data.ensure_digits(cfg.data_root())
        self.train, self.test = train, test
        self.fmodel = fmodel or zoo.pretrained(cfg["model.name"], train,
                                               epochs=cfg["model.pretrain_epochs"])
        self.qmodel = quantize_model(self.fmodel)

    def eval(self, qm, ber, seed, policy=TmrPolicy()):
        cfg = self.cfg
        fc = cfg.fault(ber, seed=10_000 + seed)
        return evaluate(qm, self.test, fc, policy, n=cfg["eval.n"],
                        batch_size=cfg["eval.batch_size"], stream=seed)

    def retrain(self, ber, seed, **over):
        tc = self.cfg.training(ber=ber, seed=seed, **over)
        dev = Device(self.train, tc)
        link = SimLink(dev, tc.channel())
        return retrain(self.fmodel, link, tc, dev), tc


def _seeds(cfg):
    return range(cfg["run.seed"], cfg["run.seed"] + cfg["experiment.seeds"])


def _mean_timing(its):
    if not its:
        return {s: 0.0 for s in STAGES + ("total", "bytes_up", "bytes_down")}
    rows = [it.timing.as_dict() for it in its]
    return {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}


def _ber_sweep(ctx, point, seed):
    r = ctx.eval(ctx.qmodel, point["ber"], seed, TmrPolicy(Variant(point["tmr"])))
    return {"top1": r["top1"], "top5": r["top5"], "n": r["n"]}


def _retrain(ctx, point, seed):
    res, _ = ctx.retrain(point["ber"], seed)
    before = ctx.eval(ctx.qmodel, point["ber"], seed)["top1"]
    after = ctx.eval(res.qmodel, point["ber"], seed)["top1"]
    return {"acc_before": before, "acc_after": after, "gain": after - before,
            "clean_after": ctx.eval(res.qmodel, 0.0, seed)["top1"],
            "iterations": len(res.iterations),
            "bytes_up": sum(i.timing.bytes_up for i in res.iterations) + res.setup.bytes_up,
            "bytes_down": sum(i.timing.bytes_down for i in res.iterations) + res.setup.bytes_down,
            "seconds": sum(i.timing.total for i in res.iterations)}


def _stage_row(ctx, point, seed):
    cfg = ctx.cfg
    over = {"profile": point["profile"],
            "max_batches": cfg["train.max_batches"] or 8}
    if point["scheme"] == "raw":
        over["tmr"] = TmrPolicy(Variant.NONE)
    elif point["scheme"] != "increment":
        raise ConfigError(f"scheme must be raw or increment, got {point['scheme']!r}")
    res, _ = ctx.retrain(point["ber"], seed, **over)
    row = _mean_timing(res.iterations)
    row["iterations"] = len(res.iterations)
    return row


def _threshold(ctx, point, seed):
    res, _ = ctx.retrain(point["ber"], seed, threshold=point["threshold"])
    its = res.iterations
    packet = sum(i.packet_bytes for i in its)
    raw = sum(i.raw_bytes for i in its)
    return {"acc_after": ctx.eval(res.qmodel, point["ber"], seed)["top1"],
            "packet_bytes": packet, "raw_bytes": raw,
            "compression": 1.0 - packet / raw if raw else 0.0,
            "sparse_layers": float(np.mean([i.n_sparse for i in its])) if its else 0.0,
            "seconds_per_iter": float(np.mean([i.timing.total for i in its])) if its else 0.0}


def _sweep_field(name):
    def run(ctx, point, seed):
        res, _ = ctx.retrain(point["ber"], seed, **{name: point[name]})
        return {"acc_before": ctx.eval(ctx.qmodel, point["ber"], seed)["top1"],
                "acc_after": ctx.eval(res.qmodel, point["ber"], seed)["top1"],
                "iterations": len(res.iterations)}
    return run


def tmr_similarity(qm, test, variant, fault: FaultConfig, seed, n=64):
    """Voted-vs-faulty similarity of one TMR capture on ``n`` test samples."""
    rng = np.random.default_rng([seed, 0x51])
    idx = rng.choice(len(test), size=min(n, len(test)), replace=False)
    cap = tmr_forward(qm, data.to_input(test.images[idx]), fault,
                      TmrPolicy(Variant(variant)), execution=seed)
    return cap.similarity[-1], float(np.mean(cap.similarity))


def _tmr_compare(ctx, point, seed):
    final, mean = tmr_similarity(ctx.qmodel, ctx.test, point["tmr"],
                                 ctx.cfg.fault(point["ber"], seed), seed)
    return {"final_similarity": final, "mean_similarity": mean}


def _select(ctx, point, seed):
    cfg = ctx.cfg
    plan = select_layers(ctx.qmodel, ctx.test, cfg.fault(point["ber"], seed), point["r_max"],
                         cfg["select.n_eval"], cfg["select.max_layers"], stream=seed)
    return {"plan": plan.to_text(), "r": plan.r, "accuracy": plan.accuracy,
            "evaluations": plan.evaluations}


RUNNERS = {
    "ber_sweep": _ber_sweep,
    "retrain": _retrain,
    "time_decomposition": _stage_row,
    "threshold_study": _threshold,
    "batch_sweep": _sweep_field("batch_size"),
    "epoch_sweep": _sweep_field("epochs"),
    "tmr_compare": _tmr_compare,
    "select_layers": _select,
}


def _matched(ctx, point, seed, eval_bers):
    tb = point["train_ber"]
    res, _ = ctx.retrain(tb, seed)
    return [{"train_ber": tb, "eval_ber": eb, "seed": seed,
             "acc_retrained": ctx.eval(res.qmodel, eb, seed)["top1"],
             "acc_unretrained": ctx.eval(ctx.qmodel, eb, seed)["top1"],
             "matched": int(tb == eb)} for eb in eval_bers]


def _task(ctx, kind, point, seed, grid):
    log.info("%s %s seed=%d", kind, point, seed)
    if kind == "matched_vs_unmatched":
        return _matched(ctx, point, seed, grid["eval_ber"])
    row = dict(point, seed=seed)
    row.update(RUNNERS[kind](ctx, point, seed))
    return [row]


_WORKER_CTX = None


def _init_worker(ctx):
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _worker_task(args):
    return _task(_WORKER_CTX, *args)


def run_rows(kind, cfg: Config, grid=None, ctx=None, jobs=None):
    """Run every grid point x seed; returns the list of row dicts.

    With ``jobs > 1`` the tasks run in worker processes, each holding its own
    copy of the context; rows come back in grid order, so the output does
    not depend on the job count.
    """
    grid = parse_grid(kind, cfg["experiment.grid"]) if grid is None else grid
    ctx = ctx or Context(cfg)
    jobs = cfg["experiment.jobs"] if jobs is None else jobs
    axes = {"train_ber": grid["train_ber"]} if kind == "matched_vs_unmatched" else grid
    tasks = [(kind, dict(zip(axes, values)), seed, grid)
             for values in itertools.product(*axes.values()) for seed in _seeds(cfg)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(ctx,)) as pool:
            chunks = list(pool.map(_worker_task, tasks))
    else:
        chunks = [_task(ctx, *t) for t in tasks]
    return [row for chunk in chunks for row in chunk]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(kind, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = columns(kind)
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in cols])
    return buf.getvalue()


def run_experiment(kind, cfg: Config, out=None, grid=None, ctx=None):
    """Validate the grid, run it, and write the CSV to ``out`` (overwriting)."""
    grid = parse_grid(kind, cfg["experiment.grid"]) if grid is None else grid
    text = rows_to_csv(kind, run_rows(kind, cfg, grid, ctx))
    if out is not None:
        with open(out, "w", newline="") as f:
            f.write(text)
    return text
