import os
import random
import re

import pytest

from r2f.errors import ConfigError
from r2f.harness import experiments, report
from r2f.harness.cli import main
from r2f.harness.config import KEYS, defaults, describe, load_config, parse_config

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


@pytest.fixture(scope="module")
def ctx(digits, tiny_float):
    cfg = parse_config("eval.n = 20\nexperiment.seeds = 2\n")
    return experiments.Context(cfg, *digits, fmodel=tiny_float)


def _cfg(text):
    return parse_config("eval.n = 20\n" + text)


def test_empty_config_has_documented_defaults(tmp_path):
    path = tmp_path / "empty.cfg"
    path.write_text("")
    cfg = load_config(str(path))
    tc = cfg.training()
    assert tc.batch_size == 16 and tc.epochs == 1 and tc.threshold == 0.6
    assert cfg == defaults()
    text = describe()
    assert all(k in text for k in KEYS)


def test_config_parsing():
    cfg = parse_config("# comment\nfault.ber = 1e-5   # trailing\n\ntmr.protected_layers=1,3\n")
    assert cfg["fault.ber"] == 1e-5
    assert cfg.tmr().protected_layers == frozenset({1, 3})
    with pytest.raises(ConfigError, match="foo"):
        parse_config("foo=1")
    with pytest.raises(ConfigError):
        parse_config("train.batch_size = many")
    with pytest.raises(ConfigError):
        parse_config("just a line")
    with pytest.raises(ConfigError):
        load_config("/nonexistent/r2f.cfg")


def test_training_seed_overrides():
    cfg = parse_config("run.seed = 4\nfault.seed = 9\nfault.ber = 1e-4")
    assert cfg.training().seed == 4 and cfg.training().fault.seed == 9
    t = cfg.training(seed=7, ber=1e-3)
    assert t.seed == 7 and t.fault.seed == 7 and t.fault.ber == 1e-3


def test_parse_grid():
    g = experiments.parse_grid("ber_sweep", "ber=0,1e-6")
    assert g == {"ber": [0.0, 1e-6], "tmr": ["none"]}
    for bad in ("foo=1", "ber=", "ber=x", "nonsense"):
        with pytest.raises(ConfigError):
            experiments.parse_grid("ber_sweep", bad)
    with pytest.raises(ConfigError):
        experiments.parse_grid("no_such_kind", "")


def test_ber_sweep_rows(ctx):
    cfg = _cfg("experiment.seeds = 3\nexperiment.grid = ber=0,1e-6,1e-5,1e-4")
    rows = experiments.run_rows("ber_sweep", cfg, ctx=ctx)
    assert len(rows) == 12
    text = experiments.rows_to_csv("ber_sweep", rows)
    assert text.splitlines()[0] == "ber,tmr,seed,top1,top5,n"


def test_csv_is_reproducible(ctx, tmp_path):
    cfg = _cfg("experiment.seeds = 2\nexperiment.grid = ber=1e-4,1e-3")
    out = tmp_path / "a.csv"
    a = experiments.run_experiment("ber_sweep", cfg, str(out), ctx=ctx)
    b = experiments.run_experiment("ber_sweep", cfg, str(out), ctx=ctx)
    assert a == b == out.read_text()


def test_parallel_jobs_match_sequential(ctx):
    cfg = _cfg("experiment.seeds = 2\nexperiment.grid = ber=1e-4,1e-3")
    seq = experiments.run_rows("ber_sweep", cfg, ctx=ctx, jobs=1)
    par = experiments.run_rows("ber_sweep", cfg, ctx=ctx, jobs=2)
    assert experiments.rows_to_csv("ber_sweep", seq) == experiments.rows_to_csv("ber_sweep", par)
    with pytest.raises(ConfigError):
        parse_config("experiment.jobs = 0")


def test_time_decomposition_rate_ratio(ctx):
    cfg = _cfg("experiment.seeds = 1\ntrain.max_batches = 2\n"
               "experiment.grid = profile=wpan,hspa;ber=1e-4;scheme=increment")
    rows = experiments.run_rows("time_decomposition", cfg, ctx=ctx)
    wpan, hspa = rows
    assert wpan["bytes_up"] == hspa["bytes_up"] > 0
    assert wpan["uplink"] / hspa["uplink"] == pytest.approx(5.76e6 / 800e3)
    assert set(experiments.columns("time_decomposition")) <= set(wpan)


def test_matched_rows(ctx):
    cfg = _cfg("experiment.seeds = 1\ntrain.max_batches = 2\n"
               "experiment.grid = train_ber=1e-6,3e-4;eval_ber=1e-6,3e-4")
    rows = experiments.run_rows("matched_vs_unmatched", cfg, ctx=ctx)
    assert len(rows) == 4
    assert [r["matched"] for r in rows] == [1, 0, 0, 1]


@pytest.mark.parametrize("kind,grid", [
    ("retrain", "ber=1e-4"),
    ("threshold_study", "threshold=0.6;ber=1e-4"),
    ("batch_sweep", "batch_size=4;ber=1e-4"),
    ("epoch_sweep", "epochs=1;ber=1e-4"),
    ("tmr_compare", "tmr=lw,nw;ber=1e-4"),
    ("select_layers", "r_max=0.2;ber=1e-3"),
])
def test_every_kind_runs(ctx, kind, grid):
    cfg = _cfg(f"experiment.seeds = 1\ntrain.max_batches = 1\nselect.n_eval = 10\nexperiment.grid = {grid}")
    rows = experiments.run_rows(kind, cfg, ctx=ctx)
    text = experiments.rows_to_csv(kind, rows)
    assert text.splitlines()[0].split(",") == experiments.columns(kind)


def test_report_examples():
    one = report.summarize("ber,seed,top1\n0.1,0,0.9\n")[2]
    assert one[("0.1",)]["top1"] == (0.9, 0.0, 1)
    two = report.summarize("ber,seed,top1\n0.1,0,0.8\n0.1,1,0.9\n")[2]
    mean, std, n = two[("0.1",)]["top1"]
    assert mean == pytest.approx(0.85) and n == 2 and std == pytest.approx(0.0707107, rel=1e-5)
    lines = ["ber,seed,top1"] + [f"{b},{s},{0.5 + 0.01 * s + b}" for b in (0.1, 0.2) for s in range(5)]
    base = report.render("\n".join(lines))
    body = lines[1:]
    random.Random(0).shuffle(body)
    assert report.render("\n".join([lines[0]] + body)) == base
    with pytest.raises(ValueError):
        report.summarize("a,b\n1,2\n")


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["config"]) == 0
    assert "fault.ber" in capsys.readouterr().out
    assert main(["no-such-command"]) == 2
    assert main(["eval", "--set", "foo=1"]) == 2
    assert main(["eval", "--ber", "2.0"]) == 2
    assert main(["report", str(tmp_path / "missing.csv")]) == 3
    bad = tmp_path / "bad.r2fm"
    bad.write_bytes(b"nope")
    assert main(["eval", "--model", str(bad)]) == 3


def test_cli_bench_channel(capsys):
    assert main(["bench-channel", "--bytes", "100000"]) == 0
    out = capsys.readouterr().out
    wpan = next(line for line in out.splitlines() if line.startswith("wpan"))
    assert wpan.split("\t")[3] == "1.0000"


def test_cli_sweep_and_report(tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    code = main(["sweep", "--kind", "ber_sweep", "--out", str(out), "--set", "eval.n=10",
                 "--set", "experiment.seeds=2", "--set", "experiment.grid=ber=0,1e-3"])
    assert code == 0 and len(out.read_text().splitlines()) == 5
    assert main(["report", str(out)]) == 0
    assert "±" in capsys.readouterr().out


def test_readme_documents_every_kind():
    with open(os.path.join(ROOT, "README.md")) as f:
        text = f.read()
    for kind, spec in experiments.KINDS.items():
        assert re.search(rf"`{kind}`", text), kind
        assert spec.doc
