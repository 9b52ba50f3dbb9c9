import io
import json

import pytest

from lqcd_dd import records
from lqcd_dd.cli import EXIT_CONFIG, EXIT_NOCONV, EXIT_OK, main

FREE_4_GOLDEN = "f028f4fae2df77b24996b42cf158ce0770c66b21834ae3c19f764dfb86da4ce0"
SMALL = ["--dims", "4,4,8,8", "--seed", "5", "--rhs-seed", "6", "--n-schwarz", "4", "--n-mr", "3"]


def run(argv):
    buf = io.StringIO()
    code = main(argv, buf)
    return code, buf.getvalue()


def run_json(argv):
    code, text = run(argv + ["--json"])
    recs = [records.parse(line) for line in text.splitlines() if line.strip()]
    return code, recs


def test_generate_smoke(tmp_path):
    path = tmp_path / "g.qpl2"
    code, text = run(["generate", "--dims", "8,8,8,8", "--kind", "weak", "--eps", "0.1", "--seed", "1",
                      "-o", str(path)])
    assert code == EXIT_OK
    assert path.stat().st_size == 32 + 8 ** 4 * 4 * 18 * 8
    assert any(line.startswith("sha256 ") and len(line.split()[1]) == 64 for line in text.splitlines())


def test_generate_free_golden(tmp_path):
    code, recs = run_json(["generate", "--dims", "4,4,4,4", "--kind", "free", "-o", str(tmp_path / "f.qpl2")])
    assert code == EXIT_OK
    assert recs[0]["checksum"] == FREE_4_GOLDEN


def test_generate_deterministic(tmp_path):
    a = run_json(["generate", "--dims", "2,2,2,4", "--kind", "random", "--seed", "9",
                  "-o", str(tmp_path / "a.qpl2")])[1][0]["checksum"]
    b = run_json(["generate", "--dims", "2,2,2,4", "--kind", "random", "--seed", "9",
                  "-o", str(tmp_path / "b.qpl2")])[1][0]["checksum"]
    assert a == b
    assert (tmp_path / "a.qpl2").read_bytes() == (tmp_path / "b.qpl2").read_bytes()


@pytest.mark.parametrize("dims", ["0,4,4,4", "4,4,4", "a,b,c,d"])
def test_bad_dims_exit_2(tmp_path, dims):
    code, _ = run(["generate", "--dims", dims, "-o", str(tmp_path / "x.qpl2")])
    assert code == EXIT_CONFIG


def test_solve_small_converges():
    code, recs = run_json(["solve", *SMALL])
    assert code == EXIT_OK
    rec = recs[-1]
    assert rec["record"] == "solve" and rec["converged"]
    assert rec["true_residual"] < 1e-8
    assert rec["flops_per_site"] == 1848
    assert rec["flops"] > 0 and rec["model_efficiency"] >= 0
    assert rec["residual_history"][0] == 1.0


def test_solve_ranks_two_matches_one():
    _, one = run_json(["solve", *SMALL, "--ranks", "1"])
    code, two = run_json(["solve", *SMALL, "--ranks", "2"])
    assert code == EXIT_OK
    h1, h2 = one[-1]["residual_history"], two[-1]["residual_history"]
    assert len(h1) == len(h2)
    assert max(abs(a - b) for a, b in zip(h1, h2)) < 1e-5
    assert two[-1]["ranks"] == 2
    assert len(two[-1]["rank_stats"]) == 2


def test_solve_non_convergence_exit_3():
    code, recs = run_json(["solve", *SMALL, "--max-iter", "1", "--domain", "none"])
    assert code == EXIT_NOCONV
    assert recs[-1]["converged"] is False


def test_solve_invalid_configs_exit_2(tmp_path):
    assert run(["solve", *SMALL, "--domain", "3,4,4,4"])[0] == EXIT_CONFIG
    assert run(["solve", *SMALL, "--restart", "4", "--deflation", "4"])[0] == EXIT_CONFIG
    assert run(["solve", *SMALL, "--ranks", "3"])[0] == EXIT_CONFIG
    assert run(["solve", *SMALL, "--gauge", str(tmp_path / "missing.qpl2")])[0] == EXIT_CONFIG


def test_solve_reads_gauge_file(tmp_path):
    path = tmp_path / "g.qpl2"
    assert run(["generate", "--dims", "4,4,8,8", "--seed", "5", "-o", str(path)])[0] == EXIT_OK
    _, from_file = run_json(["solve", *SMALL, "--gauge", str(path)])
    _, generated = run_json(["solve", *SMALL])
    assert from_file[-1]["residual_history"] == generated[-1]["residual_history"]
    code, _ = run(["solve", "--dims", "4,4,4,4", "--gauge", str(path)])
    assert code == EXIT_CONFIG


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[solve]\nmax-iter = 1\ndomain = none\n")
    code, _ = run(["solve", *SMALL, "--config", str(cfg)])
    assert code == EXIT_NOCONV
    code, recs = run_json(["solve", *SMALL, "--config", str(cfg), "--max-iter", "500"])
    assert code == EXIT_OK
    assert recs[-1]["domain"] is None


def test_config_errors(tmp_path):
    bad_key = tmp_path / "a.ini"
    bad_key.write_text("[solve]\nn_schwartz = 3\n")
    assert run(["solve", *SMALL, "--config", str(bad_key)])[0] == EXIT_CONFIG
    bad_value = tmp_path / "b.ini"
    bad_value.write_text("[solve]\nouter-precision = quad\n")
    assert run(["solve", *SMALL, "--config", str(bad_value)])[0] == EXIT_CONFIG
    assert run(["solve", *SMALL, "--config", str(tmp_path / "none.ini")])[0] == EXIT_CONFIG


def test_records_file_and_error_record(tmp_path):
    out = tmp_path / "rec.jsonl"
    run(["plan", "--records", str(out)])
    code, _ = run(["plan", "--rank-grid", "3,4,8,8", "--records", str(out)])
    assert code == EXIT_CONFIG
    lines = [records.parse(line) for line in out.read_text().splitlines()]
    assert lines[0]["record"] == "plan"
    assert lines[-1] == {"record": "error", "schema": 1, "message": lines[-1]["message"],
                         "exit_code": EXIT_CONFIG}


def test_plan_default_example():
    code, text = run(["plan", "--nonuniform", "t"])
    assert code == EXIT_OK
    assert "128 = 28 + 28 + 28 + 28 + 16" in text
    assert "ranks 1024 -> 640" in text
    assert "load 53.3% -> 85.3%" in text
    _, recs = run_json(["plan", "--nonuniform", "t"])
    cmp = [r for r in recs if r["record"] == "compare"][0]
    assert cmp["rank_ratio"] == 0.625


def test_plan_single_rank():
    code, text = run(["plan", "--dims", "8,8,8,8", "--domain", "4,4,4,4", "--rank-grid", "1,1,1,1"])
    assert code == EXIT_OK
    assert text.strip() == "single rank: load 13.3%"


def test_plan_small_matches_direct_count():
    code, recs = run_json(["plan", "--dims", "8,8,8,16", "--domain", "4,4,4,4", "--rank-grid", "1,1,1,2",
                           "--cores", "4"])
    assert code == EXIT_OK
    rec = recs[0]
    assert rec["n_ranks"] == 2
    # 16 domains per rank on 4 cores: 2 full rounds
    assert rec["average_load"] == 1.0


def test_schedule_t_z():
    code, recs = run_json(["schedule", "--split", "tz", "--domain-grid", "2,2,4,8"])
    assert code == EXIT_OK
    sched = recs[0]
    assert sched["violations"] == []
    assert {s["name"]: s["overlap"] for s in sched["sends"]}["c"] == [[1, 1], [1, 2], [1, 3]]


def test_schedule_naive_reports_violations_and_idle():
    code, text = run(["schedule", "--variant", "naive"])
    assert code == EXIT_OK
    assert "violations: 1" in text
    _, recs = run_json(["schedule", "--variant", "naive", "--latency", "1e-3"])
    tl = [r for r in recs if r["record"] == "timeline"][0]
    assert tl["steady_idle"] > 0


def test_schedule_sweep_crosses_at_threshold():
    _, recs = run_json(["schedule", "--sweep", "9"])
    sweep = [r for r in recs if r["record"] == "sweep"]
    assert len(sweep) == 9
    thr = sweep[0]["threshold"]
    for r in sweep:
        if r["bandwidth"] >= thr * (1 + 1e-12):
            assert r["steady_idle"] == 0
        elif r["bandwidth"] < thr * 0.999:
            assert r["steady_idle"] > 0
    assert any(r["steady_idle"] == 0 for r in sweep) and any(r["steady_idle"] > 0 for r in sweep)


def test_schedule_bad_input():
    assert run(["schedule", "--split", "t", "--domain-grid", "1,1,1,2"])[0] == EXIT_CONFIG
    assert run(["schedule", "--costs", "1,2"])[0] == EXIT_CONFIG


def test_perfmodel_default_report():
    code, text = run(["perfmodel"])
    assert code == EXIT_OK
    assert "1208.3 Gflop/s (1.2 TFlop/s)" in text
    assert "limit 82% of peak" in text
    assert "56% of 39.6 = 22.2 Gflop/s/core" in text
    assert "456 kB all single, 312 kB gauge/clover half" in text
    assert "x 0.875, y 0.750" in text


def test_perfmodel_variants():
    _, text = run(["perfmodel", "--fma-fraction", "1", "--overhead", "1"])
    assert "limit 100% of peak" in text
    assert "100% of 39.6 = 39.6 Gflop/s/core" in text
    _, recs = run_json(["perfmodel", "--domain", "4,4,4,4"])
    assert recs[0]["working_set_kb"]["all-single"] == 228.0
    assert run(["perfmodel", "--cores", "0"])[0] == EXIT_CONFIG
    assert run(["perfmodel", "--fma-fraction", "2"])[0] == EXIT_CONFIG


def test_oracle_passes():
    code, recs = run_json(["oracle"])
    assert code == EXIT_OK
    assert len(recs) >= 5 and all(r["passed"] for r in recs)


def test_output_is_deterministic():
    a = run(["schedule", "--split", "t", "--domain-grid", "2,2,2,8"])
    b = run(["schedule", "--split", "t", "--domain-grid", "2,2,2,8"])
    assert a == b


def test_records_reject_malformed():
    with pytest.raises(records.RecordError):
        records.parse(json.dumps({"record": "solve", "schema": 1}))
    with pytest.raises(records.RecordError):
        records.parse(json.dumps({"record": "bogus", "schema": 1}))
    with pytest.raises(records.RecordError):
        records.parse(json.dumps({"record": "error", "schema": 2, "message": "", "exit_code": 2}))


def test_help_and_missing_command():
    assert run(["--help"])[0] == 0
    assert run([])[0] == EXIT_CONFIG


def test_solve_half_domain_storage_iteration_delta():
    _, single = run_json(["solve", *SMALL])
    code, half = run_json(["solve", *SMALL, "--half-domain-storage"])
    assert code == EXIT_OK
    assert half[-1]["storage"] == "half" and single[-1]["storage"] == "single"
    assert abs(half[-1]["iterations"] - single[-1]["iterations"]) <= 1


def test_solve_compare_unpreconditioned():
    code, recs = run_json(["solve", *SMALL, "--compare-unpreconditioned"])
    assert code == EXIT_OK
    rec = recs[-1]
    assert rec["iteration_ratio"] == rec["iterations"] / rec["unpreconditioned_iterations"]
    assert rec["iteration_ratio"] <= 1 / 3
