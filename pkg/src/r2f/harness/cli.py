"""``r2f`` command line. Exit codes: 0 success, 2 usage error, 3 runtime failure."""
from __future__ import annotations

import argparse
import csv
import logging
import os
import socket
import sys
import threading
import time

import numpy as np

from .. import data, zoo
from ..codec import Encoding, choose_encoding
from ..errors import ConfigError, R2FError
from ..layer_select import select_layers
from ..nn.model import quantize_model
from ..nn.serialize import model_from_bytes, model_to_bytes
from ..protocol.channel import DOWNLINK, PROFILES, UPLINK, profile, transmit_time
from ..protocol.transport import FramedSocket, SimLink, SocketLink, TokenBucket, connect, listen, serve_device
from ..runtime import Device, evaluate, retrain
from ..tmr import tmr_forward
from . import experiments, report
from .config import describe, load_config

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
log = logging.getLogger("r2f")

# flag -> config key
SHORTCUTS = {"seed": "run.seed", "profile": "channel.profile", "ber": "fault.ber",
             "threshold": "codec.threshold", "tmr": "tmr.variant", "rmax": "select.r_max",
             "jobs": "experiment.jobs"}


def build_config(args):
    cfg = load_config(args.config)
    for flag, key in SHORTCUTS.items():
        v = getattr(args, flag, None)
        if v is not None:
            cfg.set(key, v)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        cfg.set(*(p.strip() for p in item.split("=", 1)))
    return cfg


def _datasets(cfg):
    return data.ensure_digits(cfg.data_root())


def _start_model(cfg, train):
    return zoo.pretrained(cfg["model.name"], train, epochs=cfg["model.pretrain_epochs"])


def _write_rows(path, rows):
    if not rows:
        return
    out = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.DictWriter(out, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if path:
            out.close()


def _summary(res, ctx_eval):
    its = res.iterations
    total = sum(i.timing.total for i in its)
    print(f"iterations={len(its)} dropped={res.dropped} final_loss={its[-1].loss if its else float('nan'):.4f}")
    print(f"modeled_seconds={total:.3f} bytes_up={sum(i.timing.bytes_up for i in its)} "
          f"bytes_down={sum(i.timing.bytes_down for i in its)}")
    print(ctx_eval)


def cmd_train(args, cfg):
    train, test = _datasets(cfg)
    fm = _start_model(cfg, train)
    tc = cfg.training()
    dev = Device(train, tc)
    res = retrain(fm, SimLink(dev, tc.channel()), tc, dev)
    if args.model_out:
        with open(args.model_out, "wb") as f:
            f.write(model_to_bytes(res.qmodel))
    _write_rows(args.out, [it.row() for it in res.iterations])
    acc = evaluate(res.qmodel, test, cfg.fault(), n=cfg["eval.n"], batch_size=cfg["eval.batch_size"])
    _summary(res, f"top1={acc['top1']:.4f} top5={acc['top5']:.4f} at ber={cfg['fault.ber']:g}")
    return EXIT_OK


def _load_model(path, cfg, train):
    if path:
        with open(path, "rb") as f:
            return model_from_bytes(f.read())
    return quantize_model(_start_model(cfg, train))


def cmd_eval(args, cfg):
    train, test = _datasets(cfg)
    qm = _load_model(args.model, cfg, train)
    acc = evaluate(qm, test, cfg.fault(), cfg.tmr(), n=cfg["eval.n"], batch_size=cfg["eval.batch_size"])
    print(f"top1={acc['top1']:.4f} top5={acc['top5']:.4f} n={acc['n']} ber={cfg['fault.ber']:g} "
          f"tmr={cfg['tmr.variant']}")
    return EXIT_OK


def cmd_sweep(args, cfg):
    kind = args.kind or cfg["experiment.kind"]
    grid = experiments.parse_grid(kind, cfg["experiment.grid"])  # usage errors before any work
    text = experiments.run_experiment(kind, cfg, args.out, grid)
    if not args.out:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_select(args, cfg):
    train, test = _datasets(cfg)
    qm = _load_model(args.model, cfg, train)
    plan = select_layers(qm, test, cfg.fault(), cfg["select.r_max"], cfg["select.n_eval"],
                         cfg["select.max_layers"])
    line = plan.to_text()
    print(line)
    print(f"# accuracy={plan.accuracy} evaluations={plan.evaluations} "
          f"extra_compute={plan.extra_compute_pct:.1f}%")
    if args.out:
        with open(args.out, "w") as f:
            f.write(line + "\n")
    return EXIT_OK


def _socket_rate(ch, nbytes):
    """Push ``nbytes`` through a throttled localhost socket pair; returns seconds."""
    a, b = socket.socketpair()
    sender = FramedSocket(a, TokenBucket(ch.rate(UPLINK) / 8.0))
    payload = bytes(nbytes)
    got = []

    def drain():
        n = 0
        while n < nbytes:
            chunk = b.recv(1 << 16)
            if not chunk:
                break
            n += len(chunk)
        got.append(n)

    t = threading.Thread(target=drain)
    t0 = time.monotonic()
    t.start()
    sender.send_bytes(payload)
    t.join()
    dt = time.monotonic() - t0
    a.close()
    b.close()
    return dt


def cmd_bench_channel(args, cfg):
    print("profile\tuplink_bps\tdownlink_bps\tup_seconds\tdown_seconds")
    for name in PROFILES:
        ch = profile(name, cfg["channel.latency_s"])
        print(f"{name}\t{ch.uplink_bps:g}\t{ch.downlink_bps:g}\t"
              f"{transmit_time(args.bytes, UPLINK, ch):.4f}\t{transmit_time(args.bytes, DOWNLINK, ch):.4f}")
    if args.socket:
        ch = cfg.training().channel()
        dt = _socket_rate(ch, args.bytes)
        target = 8 * args.bytes / ch.uplink_bps
        print(f"# socket {ch.name}: {args.bytes} bytes in {dt:.3f}s (modeled {target:.3f}s, "
              f"achieved {8 * args.bytes / dt:.0f} bps)")
    return EXIT_OK


def cmd_codec_stats(args, cfg):
    train, test = _datasets(cfg)
    qm = quantize_model(_start_model(cfg, train))
    tc = cfg.training()
    x = data.to_input(test.images[:tc.batch_size])
    cap = tmr_forward(qm, x, tc.fault, tc.tmr, 0, tc.designated)
    print("layer\tkind\tsimilarity\tencoding\traw_bytes\tpacket_bytes")
    raw_total = sent_total = 0
    for i, layer in enumerate(qm.layers):
        pkt = choose_encoding(cap, i, tc.threshold, compressor=tc.make_compressor())
        raw = cap.copy0[i].size
        raw_total += raw
        sent_total += len(pkt.payload)
        print(f"{i}\t{layer.kind.name}\t{cap.similarity[i]:.4f}\t{Encoding(pkt.encoding).name}\t{raw}\t{len(pkt.payload)}")
    print(f"# payload reduction {1 - sent_total / raw_total:.4f} at ber={tc.fault.ber:g}")
    return EXIT_OK


def cmd_report(args, cfg):
    print(report.report(args.csv))
    return EXIT_OK


def cmd_serve(args, cfg):
    train, test = _datasets(cfg)
    fm = _start_model(cfg, train)
    tc = cfg.training()
    srv = listen(cfg["net.bind"])
    log.info("listening on %s", srv.getsockname())
    conn, peer = srv.accept()
    log.info("device connected from %s", peer)
    link = SocketLink(conn, tc.channel(), throttle=cfg["net.throttle"])
    try:
        res = retrain(fm, link, tc)
    finally:
        link.close()
        srv.close()
    if args.out:
        with open(args.out, "wb") as f:
            f.write(model_to_bytes(res.qmodel))
    acc = evaluate(res.qmodel, test, cfg.fault(), n=cfg["eval.n"], batch_size=cfg["eval.batch_size"])
    _summary(res, f"top1={acc['top1']:.4f} top5={acc['top5']:.4f}")
    return EXIT_OK


def cmd_connect(args, cfg):
    train, _ = _datasets(cfg)
    tc = cfg.training()
    sock = connect(cfg["net.connect"])
    serve_device(Device(train, tc), sock, tc.channel(), throttle=cfg["net.throttle"])
    return EXIT_OK


def cmd_config(args, cfg):
    print(describe())
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--out", help="output path")
    common.add_argument("--seed", type=int)
    common.add_argument("--profile", choices=sorted(PROFILES))
    common.add_argument("--ber", type=float)
    common.add_argument("--threshold", type=float)
    common.add_argument("--tmr", choices=["none", "nw", "lw"])
    common.add_argument("--rmax", type=float)
    common.add_argument("--jobs", type=int, help="worker processes for sweep")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="r2f", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("train", parents=[common], help="retrain over the simulated channel")
    s.add_argument("--model-out", help="write the final quantized model here")
    s.set_defaults(func=cmd_train)
    s = sub.add_parser("eval", parents=[common], help="faulty accuracy of a model")
    s.add_argument("--model", help="quantized model file (default: pretrained start model)")
    s.set_defaults(func=cmd_eval)
    s = sub.add_parser("sweep", parents=[common], help="run an experiment grid to CSV")
    s.add_argument("--kind", choices=sorted(experiments.KINDS))
    s.set_defaults(func=cmd_sweep)
    s = sub.add_parser("select", parents=[common], help="greedy critical-layer protection plan")
    s.add_argument("--model")
    s.set_defaults(func=cmd_select)
    s = sub.add_parser("bench-channel", parents=[common], help="transmit times per profile")
    s.add_argument("--bytes", type=int, default=100_000)
    s.add_argument("--socket", action="store_true", help="also measure a throttled localhost socket")
    s.set_defaults(func=cmd_bench_channel)
    s = sub.add_parser("codec-stats", parents=[common], help="per-layer similarity and packet sizes")
    s.set_defaults(func=cmd_codec_stats)
    s = sub.add_parser("report", parents=[common], help="mean ± std summary of an experiment CSV")
    s.add_argument("csv")
    s.set_defaults(func=cmd_report)
    s = sub.add_parser("serve", parents=[common], help="server side of a socket session")
    s.set_defaults(func=cmd_serve)
    s = sub.add_parser("connect", parents=[common], help="device side of a socket session")
    s.set_defaults(func=cmd_connect)
    s = sub.add_parser("config", parents=[common], help="print every key with its default")
    s.set_defaults(func=cmd_config)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = build_config(args)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"r2f: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (R2FError, OSError) as exc:
        print(f"r2f: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
