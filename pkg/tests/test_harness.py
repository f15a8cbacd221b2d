"""Experiment harness: config parsing, round logs, runner, plots, CLI."""

import json
import os

import numpy as np
import pytest

from fedsel.fedtrain import RoundRecord
from fedsel.harness.cli import main
from fedsel.harness.config import ConfigError, load_config, parse_config
from fedsel.harness.plots import curves_from_rows, render_line_chart
from fedsel.harness.runner import (
    RoundLogError,
    final_window_means,
    read_round_csv,
    run_experiment,
    write_round_csv,
)
from fedsel.harness.verification import PLOT_HASHES, render_fixture_plots

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")

TINY = {
    "dataset": {
        "kind": "synthetic_alpha",
        "n_clients": 6,
        "samples_per_client": 40,
        "alpha": 1.0,
        "beta": 1.0,
        "dim": 8,
        "classes": 3,
    },
    "availability": {"kind": "scarce", "q": 0.6},
    "capacity": {"value": 2},
    "policy": "f3ast",
    "rounds": 12,
    "eval_every": 4,
    "seeds": [0],
    "local_steps": 2,
    "batch_size": 8,
}


def test_parse_config_collects_every_problem_at_once():
    with pytest.raises(ConfigError) as err:
        parse_config(
            {
                "availability": {"kind": "nope", "n_clients": 4},
                "policy": "bad",
                "beta": 2.0,
                "seeds": [1, 1],
                "capacity": {"value": -3},
                "rounds": "many",
                "bogus_key": 1,
            }
        )
    message = str(err.value)
    assert message.startswith("invalid config:")
    assert len(err.value.problems) == 7
    for fragment in (
        "bogus_key: unknown key",
        "availability.kind",
        "capacity.value",
        "policy: must be one of",
        "seeds: entries must be distinct",
        "beta: must be <= 1.0",
        "rounds: expected int",
    ):
        assert fragment in message


def test_parse_config_cross_field_rules():
    with pytest.raises(ConfigError) as err:
        parse_config({"availability": {"kind": "uneven"}, "policy": "fixed"})
    assert "fixed_table: required when policy is fixed" in str(err.value)
    assert "uneven derives its probabilities from dataset weights" in str(err.value)
    with pytest.raises(ConfigError):
        parse_config({"availability": {"kind": "scarce"}})  # n_clients unknown
    with pytest.raises(ConfigError):
        parse_config(
            {"availability": {"kind": "always", "n_clients": 3}, "poc_candidates": 4}
        )


def test_parse_config_defaults_and_burn_in():
    cfg = parse_config({"availability": {"kind": "two_client"}, "policy": "f3ast"})
    assert cfg.beta == 0.001 and cfg.r_min == 1e-4
    assert cfg.effective_burn_in() == 10_000
    assert parse_config(
        {"availability": {"kind": "two_client"}, "beta": 0.3}
    ).effective_burn_in() == 34


def test_load_config_wraps_io_and_json_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(bad))


def _sample_records():
    recs = []
    for t in range(6):
        rec = RoundRecord(
            round=t,
            skipped=t == 2,
            n_available=3,
            selected=() if t == 2 else (0, 2),
            rate_snapshot=np.array([0.25, 0.5, 0.25]) if t % 2 == 0 else None,
        )
        if t % 2 == 1:
            rec.per_sample_loss = 1.0 / (t + 1)
            rec.per_sample_acc = 0.5 + 0.05 * t
            rec.per_user_loss = 1.1 / (t + 1)
            rec.per_user_acc = 0.45 + 0.05 * t
        recs.append(rec)
    return recs


def test_round_csv_round_trip(tmp_path):
    path = str(tmp_path / "run.csv")
    write_round_csv(path, _sample_records(), "f3ast", 3)
    rows = read_round_csv(path)
    assert len(rows) == 6
    assert rows[2]["skipped"] and rows[2]["selected"] == ()
    assert rows[0]["policy"] == "f3ast" and rows[0]["seed"] == 3
    assert rows[0]["per_sample_loss"] is None
    assert rows[1]["per_sample_acc"] == pytest.approx(0.55)
    assert rows[0]["rate_snapshot"] == pytest.approx([0.25, 0.5, 0.25])
    assert rows[1]["rate_snapshot"] == ()


def test_round_csv_rejects_malformed_files(tmp_path):
    path = str(tmp_path / "bad.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("round,policy\n0,f3ast\n")
    with pytest.raises(RoundLogError):
        read_round_csv(path)


def test_final_window_means_math():
    rows = [
        {
            "round": t,
            "per_sample_loss": float(t),
            "per_sample_acc": 0.1 * t,
            "per_user_loss": float(t),
            "per_user_acc": 0.1 * t,
        }
        for t in range(10)
    ]
    out = final_window_means(rows, window=4)
    assert out["per_sample_loss"] == pytest.approx(7.5)
    assert out["n_window"] == 4 and out["last_round"] == 9
    with pytest.raises(RoundLogError):
        final_window_means([{"round": 0, "per_sample_loss": None}], window=3)


def test_run_experiment_writes_consistent_artifacts(tmp_path):
    cfg = parse_config({**TINY, "out_dir": str(tmp_path / "out")})
    result = run_experiment(cfg)
    csv_path = result["csv_paths"][0]
    assert os.path.exists(csv_path) and os.path.exists(result["summary_path"])
    with open(result["summary_path"], encoding="utf-8") as fh:
        on_disk = json.load(fh)
    assert on_disk == result["summary"]
    # the stored finals must be recomputable from the stored rows
    recomputed = final_window_means(read_round_csv(csv_path))
    assert on_disk["runs"][0]["final"] == recomputed
    assert "wall_clock_s" not in on_disk
    rows = read_round_csv(csv_path)
    assert len(rows) == cfg.rounds
    assert rows[-1]["per_sample_acc"] is not None  # final round always evaluated
    snapshots = [r for r in rows if r["rate_snapshot"]]
    assert snapshots, "rate policy should log rate snapshots on eval rounds"


def test_run_experiment_is_deterministic(tmp_path):
    blobs = []
    for name in ("a", "b"):
        cfg = parse_config({**TINY, "out_dir": str(tmp_path / name)})
        result = run_experiment(cfg)
        with open(result["csv_paths"][0], "rb") as fh:
            blobs.append(fh.read())
    assert blobs[0] == blobs[1]


def test_zero_round_run_writes_header_only_artifacts(tmp_path):
    cfg = parse_config({**TINY, "rounds": 0, "out_dir": str(tmp_path)})
    result = run_experiment(cfg)
    assert read_round_csv(result["csv_paths"][0]) == []
    summary = result["summary"]
    assert summary["rounds"] == 0
    assert summary["runs"][0]["final"] is None and summary["final_mean"] is None


def test_availability_stream_is_paired_across_policies(tmp_path):
    sequences = {}
    for policy in ("f3ast", "fedavg"):
        cfg = parse_config({**TINY, "policy": policy, "out_dir": str(tmp_path / policy)})
        result = run_experiment(cfg)
        rows = read_round_csv(result["csv_paths"][0])
        sequences[policy] = [r["n_available"] for r in rows]
    assert sequences["f3ast"] == sequences["fedavg"]


def test_rate_convergence_always_model_saturates(tmp_path):
    from fedsel.harness.runner import run_rate_convergence

    cfg = parse_config(
        {
            "availability": {"kind": "always", "n_clients": 4},
            "capacity": {"value": 5},
            "policy": "f3ast",
            "beta": 0.01,
            "rounds": 4000,
        }
    )
    report = run_rate_convergence(cfg)
    assert np.allclose(report["optimal_rate"], 1.0, atol=1e-9)
    assert report["sup_gap"] <= cfg.beta * 4


def test_rate_convergence_scarce_model_is_symmetric(tmp_path):
    from fedsel.harness.runner import run_rate_convergence

    cfg = parse_config(
        {
            "availability": {"kind": "scarce", "n_clients": 5, "q": 0.2},
            "capacity": {"value": 1},
            "policy": "f3ast",
            "beta": 0.01,
            "rounds": 6000,
        }
    )
    report = run_rate_convergence(cfg)
    optimal = np.asarray(report["optimal_rate"])
    assert optimal.max() - optimal.min() <= 1e-6
    assert optimal.sum() == pytest.approx(1.0 - 0.8**5, abs=1e-6)
    learned = np.asarray(report["average_rate"])
    assert learned.max() - learned.min() <= 0.02


def test_rate_convergence_refuses_nonenumerable_models():
    from fedsel.harness.runner import run_rate_convergence

    cfg = parse_config(
        {
            "availability": {"kind": "scarce", "n_clients": 20, "q": 0.2},
            "capacity": {"value": 2},
            "policy": "f3ast",
            "beta": 0.01,
            "rounds": 2000,
        }
    )
    with pytest.raises(ConfigError):
        run_rate_convergence(cfg)


def test_fixture_plots_match_the_committed_golden_file(tmp_path):
    svgs = render_fixture_plots(str(tmp_path))
    assert sorted(os.path.basename(p) for p in svgs) == sorted(PLOT_HASHES)
    fresh = next(p for p in svgs if p.endswith("per_sample_acc.svg"))
    with open(fresh, "rb") as fh:
        rendered = fh.read()
    with open(os.path.join(DATA_DIR, "golden_per_sample_acc.svg"), "rb") as fh:
        golden = fh.read()
    assert rendered == golden


def test_plots_skip_metrics_with_no_recorded_values(tmp_path, caplog):
    from fedsel.harness.plots import emit_plots

    path = tmp_path / "empty_seed0.csv"
    records = [
        RoundRecord(round=t, skipped=False, n_available=2, selected=(0,)) for t in range(3)
    ]
    write_round_csv(str(path), records, "f3ast", 0)
    with caplog.at_level("INFO", logger="fedsel.harness.plots"):
        written = emit_plots([str(path)], str(tmp_path / "plots"))
    assert written == []
    assert any("plot skipped" in rec.message for rec in caplog.records)


def test_curves_group_by_policy_and_average_seeds():
    rows = []
    for seed in (0, 1):
        for t in (0, 1):
            rows.append(
                {
                    "round": t,
                    "policy": "fedavg",
                    "seed": seed,
                    "per_sample_acc": 0.5 + 0.1 * seed + 0.2 * t,
                }
            )
    curves = curves_from_rows([rows], "per_sample_acc")
    assert len(curves) == 1
    label, xs, ys = curves[0]
    assert label == "fedavg" and xs == [0.0, 1.0]
    assert ys == pytest.approx([0.55, 0.75])
    svg = render_line_chart("t", "x", "y", curves)
    assert svg.startswith("<svg") and "fedavg" in svg


def test_cli_run_rates_oracle_plot_and_errors(tmp_path, capsys):
    config_path = tmp_path / "cfg.json"
    config_path.write_text(json.dumps({**TINY, "out_dir": str(tmp_path / "run_out")}))
    assert main(["run", "--config", str(config_path)]) == 0
    out = capsys.readouterr().out
    assert "per-sample acc" in out and "summary_f3ast.json" in out

    rates_cfg = tmp_path / "rates.json"
    rates_cfg.write_text(
        json.dumps(
            {
                "availability": {"kind": "two_client"},
                "policy": "f3ast",
                "beta": 0.01,
                "rounds": 4000,
                "rate_tolerance": 0.05,
                "out_dir": str(tmp_path / "rates_out"),
            }
        )
    )
    assert main(["rates", "--config", str(rates_cfg)]) == 0
    assert os.path.exists(tmp_path / "rates_out" / "rates_report.json")
    assert main(["oracle", "--config", str(rates_cfg)]) == 0

    csvs = [os.path.join(DATA_DIR, f"{p}_seed{s}.csv") for p in ("f3ast", "fedavg") for s in (0, 1)]
    plot_out = tmp_path / "plots"
    assert main(["plot", *csvs, "--out", str(plot_out)]) == 0
    assert (plot_out / "per_sample_acc.svg").exists()

    bad_cfg = tmp_path / "bad.json"
    bad_cfg.write_text(json.dumps({"policy": "bad"}))
    assert main(["run", "--config", str(bad_cfg)]) == 2
    assert "invalid config" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2


def test_cli_policy_override_swaps_the_policy(tmp_path, capsys):
    config_path = tmp_path / "cfg.json"
    config_path.write_text(json.dumps({**TINY, "out_dir": str(tmp_path / "out")}))
    assert main(["run", "--config", str(config_path), "--policy", "fedavg", "--seed", "1"]) == 0
    assert os.path.exists(tmp_path / "out" / "fedavg_seed1.csv")
