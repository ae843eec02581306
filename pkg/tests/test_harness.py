import csv
import math
from dataclasses import replace

import numpy as np
import pytest

from osp import learners as ln
from osp import structures as st
from osp.errors import ConfigError
from osp.harness import cli
from osp.harness.config import ExperimentConfig, load_config, load_sweep, sweep_axes
from osp.harness.runner import exploration_rate, rep_seeds, run, run_repetition, sweep
from osp.harness.verify import check_self_identity, corrupt_self, run_suites

BASIC = """
[experiment]
name = small
T = 200
repetitions = 2
seed = 5
comparators = zero,random

[stream]
kind = multiclass
K = 4
n_prime = 1

[feedback]
mode = bandit
q_policy = fixed
q = 0.2

[learner]
kind = ogd
B = 6
"""


def write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_load_config_and_kind_aliases(tmp_path):
    cfg = load_config(write(tmp_path, BASIC))
    assert cfg.name == "small" and cfg.T == 200 and cfg.K == 4
    assert cfg.stream == "multiclass" and cfg.learner == ln.KIND_OGD
    assert cfg.q == 0.2 and cfg.B == 6.0
    # round trip through the written form
    cfg.write(tmp_path / "back.ini")
    assert load_config(tmp_path / "back.ini") == cfg


@pytest.mark.parametrize("text", [
    BASIC + "\n[bogus]\nx = 1\n",
    BASIC.replace("K = 4", "K = four"),
    BASIC.replace("K = 4", "K = 4\ncolour = red"),
    BASIC.replace("q = 0.2", "q = 1.5"),
    BASIC.replace("q = 0.2", "q = 0.0\nestimator = pseudo_inverse"),
    BASIC.replace("kind = ogd", "kind = sgd"),
    BASIC.replace("mode = bandit", "mode = partial"),
    BASIC.replace("comparators = zero,random", "comparators = zero,oracle"),
    BASIC + "\n[delay]\nkind = fixed\nD = 3\n",
    BASIC.replace("kind = ogd", "kind = bold") + "\n[delay]\nkind = variable\ntau_max = 3\n",
])
def test_bad_config_rejected(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, text))


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/cfg.ini")


def test_sweep_expansion(tmp_path):
    p = write(tmp_path, BASIC + "\n[sweep]\nlearner.B = 2, 4\nfeedback.q = 0.1,0.3,0.5\n")
    configs = load_sweep(p)
    assert len(configs) == 6
    assert [(c.B, c.q) for c in configs] == [(b, q) for b in (2.0, 4.0) for q in (0.1, 0.3, 0.5)]
    assert len({c.name for c in configs}) == 6
    assert sweep_axes(p) == ["B", "q"]
    with pytest.raises(ConfigError):
        load_sweep(write(tmp_path, BASIC + "\n[sweep]\nB = 2,4\n", "bad.ini"))
    with pytest.raises(ConfigError):
        load_sweep(write(tmp_path, BASIC + "\n[sweep]\nfeedback.q = 0.1, 7\n", "bad2.ini"))


def test_sweep_outputs(tmp_path):
    p = write(tmp_path, BASIC.replace("T = 200", "T = 50") + "\n[sweep]\nlearner.B = 2, 4\n")
    rows = sweep(load_sweep(p), tmp_path / "out", sweep_axes(p))
    assert len(rows) == 4
    table = read_csv(tmp_path / "out" / "sweep.csv")
    assert table[0][:3] == ["config", "B", "repetition"]
    means = read_csv(tmp_path / "out" / "sweep_means.csv")
    assert len(means) == 3 and means[0][1] == "B"


def test_empty_sweep_is_not_an_error(tmp_path):
    p = write(tmp_path, BASIC)
    assert load_sweep(p) == []
    assert cli.main(["sweep", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    assert read_csv(tmp_path / "o" / "sweep.csv") == []


def test_zero_horizon(tmp_path):
    cfg = replace(load_config(write(tmp_path, BASIC)), T=0)
    res = run(cfg, tmp_path / "out")
    for rep in res.reps:
        assert rep.summary["cum_loss"] == 0.0 and len(rep.columns["loss"]) == 0
    rows = read_csv(tmp_path / "out" / "small" / "rep0_rounds.csv")
    assert len(rows) == 1  # header only


def test_replay_is_byte_identical(tmp_path):
    cfg = load_config(write(tmp_path, BASIC))
    run(cfg, tmp_path / "a")
    run(cfg, tmp_path / "b")
    for f in ("rep0_rounds.csv", "rep1_rounds.csv", "summary.csv", "plot.csv", "config.ini"):
        assert (tmp_path / "a" / "small" / f).read_bytes() == (tmp_path / "b" / "small" / f).read_bytes()
    other = replace(cfg, seed=6)
    run(other, tmp_path / "c")
    assert (tmp_path / "a" / "small" / "rep0_rounds.csv").read_bytes() != \
        (tmp_path / "c" / "small" / "rep0_rounds.csv").read_bytes()


def test_parallel_repetitions_match_serial(tmp_path):
    cfg = load_config(write(tmp_path, BASIC))
    serial = run(cfg, write=False)
    parallel = run(replace(cfg, threads=2), write=False)
    for a, b in zip(serial.reps, parallel.reps):
        assert np.array_equal(a.columns["loss"], b.columns["loss"])


def test_rep_seeds_distinct_and_stable():
    seeds = rep_seeds(11, 4)
    assert seeds == rep_seeds(11, 4)
    flat = [s for triple in seeds for s in triple]
    assert len(set(flat)) == len(flat)
    assert rep_seeds(11, 2) == seeds[:2]


def test_regret_columns_recompute(tmp_path):
    cfg = load_config(write(tmp_path, BASIC))
    res = run(cfg, tmp_path / "out")
    rows = read_csv(tmp_path / "out" / "small" / "rep1_rounds.csv")
    head, body = rows[0], np.array(rows[1:], dtype=float)
    col = {h: body[:, i] for i, h in enumerate(head)}
    assert np.array_equal(col["t"], np.arange(1, cfg.T + 1))
    assert np.allclose(col["cum_loss"], np.cumsum(col["loss"]), atol=1e-9)
    for name in ("zero", "random_best"):
        assert np.allclose(col[f"regret_{name}"], np.cumsum(col["loss"]) - np.cumsum(col[f"comp_{name}"]),
                           atol=1e-9)
    rep = res.reps[1]
    assert rep.summary["regret_best"] >= max(rep.summary["regret_zero"], rep.summary["regret_random_best"]) - 1e-12
    # the zero comparator has surrogate log K on every round (uniform prediction)
    assert np.allclose(col["comp_zero"], math.log(4))


def test_summary_files(tmp_path):
    cfg = load_config(write(tmp_path, BASIC))
    res = run(cfg, tmp_path / "out")
    rows = read_csv(tmp_path / "out" / "small" / "summary.csv")
    assert [r[1] for r in rows[1:]] == ["0", "1", "mean", "std"]
    j = rows[0].index("cum_loss")
    assert float(rows[3][j]) == pytest.approx(res.mean("cum_loss"))
    plot = read_csv(tmp_path / "out" / "small" / "plot.csv")
    assert len(plot) == 101 and plot[-1][0] == "200"
    timing = read_csv(tmp_path / "out" / "small" / "timing.csv")
    assert timing[0] == ["repetition", "seconds"] and len(timing) == 3


def test_expected_loss_assumption_checked_every_round(tmp_path):
    for stream, extra in (("multiclass", ""), ("multilabel", "d = 6\nm = 2\nn = 10\n")):
        text = BASIC.replace("kind = multiclass", f"kind = {stream}\n{extra}")
        res = run(load_config(write(tmp_path, text)), write=False)
        for rep in res.reps:
            a, q = rep.summary["a"], rep.summary["q"]
            c = rep.columns
            assert np.all(c["exp_loss"] <= (1 - a) * c["surrogate"] + q + 1e-9)


def test_theory_rate_preconditions():
    spec = st.multiclass(8)
    cfg = ExperimentConfig(T=100, K=8, B=10.0)
    with pytest.raises(ConfigError, match="T >= B"):
        exploration_rate(cfg, spec, 1.0)
    ok = replace(cfg, T=10_000)
    assert exploration_rate(ok, spec, 1.0) == pytest.approx(10 * math.sqrt(8 / 10_000))
    pi = replace(cfg, estimator="pseudo_inverse", T=10)
    with pytest.raises(ConfigError, match="exceeds 1"):
        exploration_rate(pi, spec, 5.0)
    q = exploration_rate(replace(pi, T=10**9), spec, 1.0)
    assert q == pytest.approx((4 * 64 * 100 / 10**9) ** (1 / 3))
    assert exploration_rate(replace(cfg, mode="full"), spec, 1.0) == 0.0


def test_full_information_odaftrl_run_structure(tmp_path):
    text = BASIC.replace("mode = bandit", "mode = full").replace("kind = ogd", "kind = odaftrl")
    text += "\n[delay]\nkind = fixed\nD = 3\n"
    res = run(load_config(write(tmp_path, text)), write=False)
    for rep in res.reps:
        od = rep.learner
        assert min(od.deltas) >= 0.0 and np.all(np.diff(od.lambdas) >= 0.0)
        assert rep.summary["dropped"] == 3 and rep.summary["delivered"] == 197
        assert np.all(np.diff(rep.columns["step"]) >= 0.0)


def test_keep_trajectory_certificate(tmp_path):
    cfg = load_config(write(tmp_path, BASIC))
    rep = run_repetition(cfg, 0, keep_trajectory=True)
    assert len(rep.iterates) == cfg.T
    lin = sum(float(np.vdot(G, W)) for G, W in zip(rep.grads, rep.iterates))
    assert lin == pytest.approx(rep.lin_sum, rel=1e-10, abs=1e-10)
    assert np.allclose(sum(rep.grads), rep.grad_sum)


def test_cli_run_and_gen_data(tmp_path, capsys):
    p = write(tmp_path, BASIC)
    assert cli.main(["run", "--config", str(p), "--out", str(tmp_path / "o"), "--seed", "9"]) == 0
    assert "cum_loss" in capsys.readouterr().out
    assert load_config(tmp_path / "o" / "small" / "config.ini").seed == 9
    assert cli.main(["gen-data", "--config", str(p), "--out", str(tmp_path / "d")]) == 0
    rows = read_csv(tmp_path / "d" / "small_stream.csv")
    assert len(rows) == 201 and rows[0][-1] == "y"


def test_cli_errors(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "missing.ini")]) == 1
    assert "error" in capsys.readouterr().err
    bad = write(tmp_path, BASIC.replace("T = 200", "T = -1"))
    assert cli.main(["run", "--config", str(bad)]) == 1
    with pytest.raises(SystemExit):
        cli.main(["verify", "--suite", "nosuch"])


def test_cli_verify_subset(capsys):
    assert cli.main(["verify", "--suite", "numerics", "--suite", "delay"]) == 0
    out = capsys.readouterr().out
    assert "[PASS] numerics." in out and "[FAIL]" not in out


def test_verify_negative_control():
    for spec in (st.multiclass(4), st.multilabel(4, 2), st.ranking(3)):
        assert check_self_identity(spec) <= 1e-12
        assert check_self_identity(corrupt_self(spec)) > 0.1
    with pytest.raises(KeyError):
        run_suites(["nosuch"])


def test_shipped_configs_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parent.parent / "configs"
    files = sorted(root.glob("*.ini"))
    assert len(files) >= 4
    for f in files:
        load_config(f)
        for cfg in load_sweep(f):
            assert cfg.name.startswith(load_config(f).name)
