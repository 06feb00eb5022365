import csv
import io
import json
import warnings

import numpy as np
import pytest

from fedsim.analysis import fedavg_fixed_point, loglog_slope, theorem2_bound
from fedsim.availability import Alternating, validate_min_availability, write_custom_schedule
from fedsim.cli import main
from fedsim.core import RangeError, SchemaError
from fedsim.harness import (
    SUMMARY_COLUMNS,
    SweepSpec,
    build_problem,
    build_schedule,
    config_from_dict,
    config_to_dict,
    parse_config,
    rounds_to_target,
    run_experiment,
    run_sweep,
    summary_csv,
    sweep_from_dict,
    trace_digest,
)

EXAMPLE = {
    "algorithm": "fedavg",
    "clients": 10,
    "select_frac": 0.5,
    "local_iters": 1,
    "rounds": 100,
    "lr": 0.01,
    "seed": 1,
    "objective": {"kind": "quadratic", "means": [0, 1], "noise_sigma": 0},
    "availability": {"kind": "alternating", "t1": 2, "t2": 1},
}


def example1(algorithm="fedavg", rounds=600, lr=0.1, **kw):
    doc = {
        "algorithm": algorithm,
        "clients": 2,
        "select_frac": 0.5,
        "local_iters": 1,
        "rounds": rounds,
        "lr": lr,
        "seed": 0,
        "objective": {"kind": "quadratic", "means": [0, 1], "noise_sigma": 0},
        "availability": {"kind": "alternating", "t1": 2, "t2": 1},
    }
    doc.update(kw)
    return config_from_dict(doc)


class TestParseConfig:
    def test_example(self):
        cfg = parse_config(json.dumps(EXAMPLE))
        assert cfg.K == 5
        assert cfg.algorithm == "fedavg" and cfg.master_seed == 1

    def test_select_frac_range(self):
        with pytest.raises(RangeError):
            parse_config(json.dumps({**EXAMPLE, "select_frac": 1.5}))

    def test_fedprox_default_mu(self):
        assert parse_config(json.dumps({**EXAMPLE, "algorithm": "fedprox"})).prox_mu == 1.0

    def test_unknown_key(self):
        with pytest.raises(SchemaError):
            parse_config(json.dumps({**EXAMPLE, "momentum": 0.9}))

    def test_missing_key(self):
        doc = dict(EXAMPLE)
        del doc["rounds"]
        with pytest.raises(SchemaError):
            parse_config(json.dumps(doc))

    def test_unknown_objective_key(self):
        doc = {**EXAMPLE, "objective": {"kind": "quadratic", "means": [0, 1], "radius": 2}}
        with pytest.raises(SchemaError):
            parse_config(json.dumps(doc))

    def test_wrong_type(self):
        with pytest.raises(SchemaError):
            parse_config(json.dumps({**EXAMPLE, "clients": "ten"}))

    def test_bad_json(self):
        with pytest.raises(SchemaError):
            parse_config("{not json")

    def test_round_trip(self):
        cfg = parse_config(json.dumps(EXAMPLE))
        assert config_from_dict(config_to_dict(cfg)) == cfg


class TestBuild:
    def test_quadratic_means_blocks(self):
        problem = build_problem(config_from_dict(EXAMPLE))
        assert problem.means == (0.0,) * 5 + (1.0,) * 5

    def test_indivisible_means(self):
        with pytest.raises(RangeError):
            build_problem(config_from_dict({**EXAMPLE, "clients": 9}))

    def test_alternating_default_groups(self):
        cfg = config_from_dict(EXAMPLE)
        s = build_schedule(cfg, build_problem(cfg))
        assert s == Alternating(2, 1, frozenset(range(1, 6)), frozenset(range(6, 11)))

    def test_diurnal_groups_follow_labels(self):
        cfg = config_from_dict({
            **EXAMPLE, "clients": 20, "batch_size": 5,
            "objective": {"kind": "logistic", "total_samples": 400, "dim": 3},
            "availability": {"kind": "diurnal", "block_len": 4, "D": 2},
        })
        problem = build_problem(cfg)
        s = build_schedule(cfg, problem)
        labels = problem.client_labels()
        assert s.group_a == {i + 1 for i, lab in enumerate(labels) if lab < 2}
        assert len(s.group_a) == 4

    def test_custom_rows_size_mismatch(self):
        cfg = config_from_dict({**EXAMPLE, "clients": 2, "availability": {"kind": "custom", "rows": ["110", "011"]}})
        with pytest.raises(RangeError):
            build_schedule(cfg, build_problem(cfg))

    def test_custom_file(self, tmp_path):
        bm = np.array([[1, 0], [0, 1], [1, 1]], dtype=bool)
        write_custom_schedule(bm, tmp_path / "s.txt")
        cfg = config_from_dict({**EXAMPLE, "clients": 2, "rounds": 3, "availability": {"kind": "custom", "path": str(tmp_path / "s.txt")}})
        s = build_schedule(cfg, build_problem(cfg))
        assert [set(s.available(r)) for r in (1, 2, 3)] == [{1}, {2}, {1, 2}]

    def test_sleep_window_binary_skew(self):
        cfg = config_from_dict({
            **EXAMPLE, "clients": 12, "rounds": 48, "algorithm": "fedlaavg",
            "objective": {"kind": "logistic", "dim": 3, "total_samples": 600},
            "availability": {"kind": "sleep_window", "rounds_per_day": 24, "alpha": 0.1},
        })
        problem = build_problem(cfg)
        assert problem.num_classes == 2
        trace = run_experiment(cfg, write=False)
        assert trace.footer["schedule"]["declared_E"] == 17
        assert trace.footer["final_loss"] < trace.footer["initial_loss"]


class TestRunExperiment:
    def test_fedavg_settles_on_biased_fixed_point(self):
        trace = run_experiment(example1(), write=False)
        x = trace.footer["final_params"][0]
        assert abs(x - fedavg_fixed_point(0.0, 1.0, 2, 1, 0.1)) < 1e-9

    def test_fedlaavg_within_theorem2_bound(self):
        T = 1600
        trace = run_experiment(example1("fedlaavg", rounds=T, lr="inv_sqrt"), write=False)
        assert trace.footer["learning_rate"] == 1 / (2 * 40)
        B0 = 0.25  # f(0) - f(0.5)
        bound = theorem2_bound(T, 2, 1.0, B0)
        assert trace.footer["min_sq_error"] <= bound
        named = {r["bound_name"]: r for r in trace.bound_reports}
        assert named["theorem2_min_iterate"]["value"] == pytest.approx(bound, rel=1e-15)
        assert named["theorem2_min_iterate"]["satisfied"]

    def test_records_satisfy_invariants(self):
        cfg = config_from_dict({**EXAMPLE, "algorithm": "fedlaavg", "eval_every": 7})
        trace = run_experiment(cfg, write=False)
        assert [r.round for r in trace.records] == list(range(7, 101, 7))
        for r in trace.records:
            assert r.num_selected <= r.num_available
            assert r.iteration == r.round * cfg.local_iters
            assert r.grad_norm_sq >= 0

    def test_footer_validation_matches_independent_check(self):
        cfg = config_from_dict({**EXAMPLE, "algorithm": "fedlaavg"})
        trace = run_experiment(cfg, write=False)
        s = build_schedule(cfg, build_problem(cfg))
        independent = validate_min_availability(s, s.declared_E, cfg.rounds)
        assert trace.footer["schedule"]["validation_ok"] == (independent == [])

    def test_failing_validation_warns(self, monkeypatch):
        from fedsim import harness
        from fedsim.availability import Custom

        # client 2 is absent for three rounds in a row but E=2 is declared
        bm = np.array([[1, 1], [1, 0], [1, 0], [1, 0], [1, 1], [1, 1]], dtype=bool)
        monkeypatch.setattr(harness, "build_schedule", lambda config, problem: Custom(bm, declared_E=2))
        cfg = config_from_dict({**EXAMPLE, "clients": 2, "rounds": 6, "algorithm": "fedlaavg"})
        with pytest.warns(UserWarning, match="client 2"):
            trace = run_experiment(cfg, write=False)
        assert trace.footer["schedule"]["validation_ok"] is False
        assert trace.footer["schedule"]["violations"] == [[2, 2]]

    def test_determinism(self, tmp_path):
        cfg = config_from_dict({**EXAMPLE, "algorithm": "fedlaavg", "output": str(tmp_path / "a.jsonl"),
                                "objective": {"kind": "quadratic", "means": [0, 1], "noise_sigma": 1.0}})
        run_experiment(cfg)
        first_text = (tmp_path / "a.jsonl").read_text()
        first = trace_digest(tmp_path / "a.jsonl")
        run_experiment(config_from_dict(config_to_dict(cfg)))
        assert trace_digest(tmp_path / "a.jsonl") == first
        strip = lambda text: [{k: v for k, v in json.loads(ln).items() if k != "wall_ms"} for ln in text.splitlines()]
        assert strip((tmp_path / "a.jsonl").read_text()) == strip(first_text)

    def test_seed_change(self):
        noisy = {"kind": "quadratic", "means": [0, 1], "noise_sigma": 1.0}
        a = run_experiment(config_from_dict({**EXAMPLE, "algorithm": "fedlaavg", "objective": noisy}), write=False)
        b = run_experiment(config_from_dict({**EXAMPLE, "algorithm": "fedlaavg", "objective": noisy, "seed": 2}), write=False)
        assert a.footer["records_sha256"] != b.footer["records_sha256"]
        ca, cb = a.footer["config"], b.footer["config"]
        assert {k for k in ca if ca[k] != cb[k]} == {"seed"}

    def test_bounds_written_next_to_trace(self, tmp_path):
        cfg = example1("fedlaavg", rounds=100, lr="inv_sqrt", output=str(tmp_path / "t.jsonl"))
        run_experiment(cfg)
        reports = json.loads((tmp_path / "t.jsonl.bounds.json").read_text())
        assert {r["bound_name"] for r in reports} >= {"theorem2_min_iterate", "theorem2_average"}

    @pytest.mark.parametrize("algorithm", ["fedlaavg", "fedavg", "fedsgd", "fedprox", "seqsgd"])
    def test_every_algorithm_decreases_logistic_loss(self, algorithm):
        cfg = config_from_dict({
            "algorithm": algorithm, "clients": 10, "select_frac": 0.3, "local_iters": 1 if algorithm == "fedsgd" else 3,
            "rounds": 60, "lr": 0.05, "seed": 3,
            "objective": {"kind": "logistic", "dim": 4, "total_samples": 500},
            "availability": {"kind": "diurnal", "block_len": 5, "D": 5},
        })
        f = run_experiment(cfg, write=False).footer
        assert f["final_loss"] < f["initial_loss"]


class TestSweep:
    def test_T_axis_slope(self, tmp_path):
        spec = SweepSpec(example1("fedlaavg", rounds=100, lr="inv_sqrt"), "T", (100, 400, 1600))
        rows = run_sweep(spec, output=tmp_path / "s.csv", threads=1)
        assert [r["axis_value"] for r in rows] == [100, 400, 1600]
        slope = rows[0]["slope"]
        assert -1.1 <= slope <= -0.3
        text = (tmp_path / "s.csv").read_text()
        parsed = list(csv.DictReader(io.StringIO(text)))
        assert tuple(parsed[0]) == SUMMARY_COLUMNS and len(parsed) == 3
        assert float(parsed[2]["slope"]) == slope

    def test_algorithm_axis_rows(self):
        spec = SweepSpec(example1(rounds=30), "algorithm", ("fedavg", "fedlaavg", "fedsgd"), seeds=(0, 1), target_loss=0.3)
        rows = run_sweep(spec, threads=1)
        assert [(r["axis_value"], r["seed"]) for r in rows] == [
            ("fedavg", 0), ("fedavg", 1), ("fedlaavg", 0), ("fedlaavg", 1), ("fedsgd", 0), ("fedsgd", 1)
        ]
        assert all(r["slope"] is None for r in rows)

    def test_parallel_matches_serial(self, monkeypatch):
        monkeypatch.setenv("FEDSIM_THREADS", "2")
        spec = SweepSpec(example1("fedlaavg", rounds=50, lr=0.05), "beta", (0.5, 1.0))
        assert run_sweep(spec) == run_sweep(spec, threads=1)

    def test_fedprox_cell_gets_default_mu(self):
        spec = SweepSpec(example1(), "algorithm", ("fedavg", "fedprox"))
        assert spec.derive("fedprox", 0).prox_mu == 1.0
        assert spec.derive("fedavg", 0).prox_mu == 0.0

    def test_unknown_axis(self):
        with pytest.raises(SchemaError):
            SweepSpec(example1(), "momentum", (1, 2))

    def test_from_dict_alias(self):
        spec = sweep_from_dict({"base": config_to_dict(example1()), "axis": "β", "values": [0.5, 1.0], "seeds": [3]})
        assert spec.axis == "beta" and spec.derive(1.0, 3).K == 2

    def test_rounds_to_target(self):
        assert rounds_to_target([(1, 3.0), (2, 1.0), (3, 0.5)], 1.0) == 2
        assert rounds_to_target([(1, 3.0)], 1.0) is None
        assert rounds_to_target([(1, 3.0)], None) is None

    def test_summary_blank_cells(self):
        row = dict.fromkeys(SUMMARY_COLUMNS)
        row.update(axis_value=1, seed=0, final_loss=0.5, min_loss=0.25)
        assert summary_csv([row]).splitlines()[1] == "1,0,0.5,0.25,,"

    @pytest.mark.slow
    def test_fedlaavg_oscillates_less_than_fedavg(self):
        base = config_from_dict({
            "algorithm": "fedavg", "clients": 50, "select_frac": 0.1, "local_iters": 10, "rounds": 400,
            "lr": 0.05, "seed": 0, "objective": {"kind": "logistic"},
            "availability": {"kind": "diurnal", "block_len": 10, "D": 1},
        })
        from fedsim.harness import _cell

        spread = {}
        for alg in ("fedavg", "fedlaavg"):
            losses = [loss for _, loss in _cell(SweepSpec(base, "algorithm", (alg,)).derive(alg, 0))["losses"]]
            spread[alg] = float(np.std(losses[-100:]))
        assert spread["fedlaavg"] < spread["fedavg"]


class TestCli:
    def test_run(self, tmp_path, capsys):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({**EXAMPLE, "output": str(tmp_path / "t.jsonl")}))
        assert main(["--config", str(path)]) == 0
        assert "final_loss=" in capsys.readouterr().out
        assert (tmp_path / "t.jsonl").exists()

    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(EXAMPLE))
        out = tmp_path / "t.jsonl"
        assert main(["--config", str(path), "--rounds", "12", "--seed", "5", "--output", str(out)]) == 0
        footer = json.loads(out.read_text().splitlines()[-1])["footer"]
        assert footer["config"]["rounds"] == 12 and footer["seed"] == 5

    def test_flags_only(self, tmp_path):
        # the objective and availability sections cannot be given as flags
        assert main(["--algorithm", "fedavg", "--clients", "4"]) == 1

    def test_config_error(self, tmp_path, capsys):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({**EXAMPLE, "select_frac": 1.5}))
        assert main(["--config", str(path)]) == 1
        assert "configuration error" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["--config", str(tmp_path / "nope.json")]) == 1

    def test_runtime_error(self, tmp_path, capsys):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({**EXAMPLE, "lr": 5.0, "rounds": 2000}))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert main(["--config", str(path)]) == 2
        assert "run failed" in capsys.readouterr().err

    def test_sweep(self, tmp_path, capsys):
        (tmp_path / "base.json").write_text(json.dumps(EXAMPLE))
        (tmp_path / "sweep.json").write_text(json.dumps({"base": "base.json", "axis": "N", "values": [2, 4]}))
        assert main(["--sweep", str(tmp_path / "sweep.json"), "--rounds", "20"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == ",".join(SUMMARY_COLUMNS) and len(lines) == 3
