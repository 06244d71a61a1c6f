import csv
import subprocess
import sys

import pytest

from newtonmr.cli import (EXIT_BUDGET, EXIT_ERROR, EXIT_OK, TRACE_COLUMNS, ExperimentConfig,
                          build_parser, config_from_args, main, parse_hessian, read_config_file,
                          run_example_suite, run_experiment)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_pl_quadratic_default_run(tmp_path):
    out = tmp_path / "run"
    assert main(["--problem", "pl_quadratic", "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "trace.csv")
    assert rows[0] == TRACE_COLUMNS
    fs = [float(r[1]) for r in rows[1:]]
    assert all(b < a for a, b in zip(fs, fs[1:]))
    summary = dict(read_csv(out / "summary.csv")[1:])
    assert summary["reason"] == "first_order_optimal"


def test_budget_exit_code(tmp_path):
    code = main(["--problem", "pl_quadratic", "--hessian", "noisy:1.0", "--max-oracle", "10",
                 "--out", str(tmp_path)])
    assert code == EXIT_BUDGET


def test_same_seed_gives_identical_trace(tmp_path):
    args = ["--problem", "synthetic_blobs", "--n-samples", "300", "--dim", "10",
            "--hessian", "sub:0.2", "--seed", "5"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()


def test_trace_values_round_trip(tmp_path):
    main(["--problem", "pl_quadratic", "--dim", "5", "--out", str(tmp_path)])
    for row in read_csv(tmp_path / "trace.csv")[1:]:
        assert repr(float(row[1])) == repr(float(f"{float(row[1]):.17g}"))


def test_missing_dataset_is_error(tmp_path, capsys):
    code = main(["--problem", "logistic", "--dataset", str(tmp_path / "nope.svm"),
                 "--out", str(tmp_path)])
    assert code == EXIT_ERROR
    assert "dataset" in capsys.readouterr().err


def test_malformed_dataset_is_error(tmp_path):
    bad = tmp_path / "bad.svm"
    bad.write_text("1 1:0.5 1:2\n")
    assert main(["--problem", "nls", "--dataset", str(bad), "--out", str(tmp_path)]) == EXIT_ERROR


def test_dataset_run(tmp_path):
    data = tmp_path / "toy.svm"
    data.write_text("".join(f"{i % 10} 1:{(i % 7) / 7:.3f} 2:{(i % 3) - 1}\n" for i in range(40)))
    code = main(["--problem", "logistic", "--dataset", str(data), "--label-rule", "parity",
                 "--eps-g", "1e-6", "--reg", "0.1", "--out", str(tmp_path / "o")])
    assert code == EXIT_OK


def test_bad_flags_are_errors(tmp_path):
    assert main(["--problem", "cubic", "--out", str(tmp_path)]) == EXIT_ERROR
    assert main(["--hessian", "sub:1.5", "--out", str(tmp_path)]) == EXIT_ERROR
    assert main(["--eps-g", "0", "--out", str(tmp_path)]) == EXIT_ERROR
    with pytest.raises(ValueError):
        parse_hessian("dense")


def test_config_file_and_override(tmp_path):
    cfg_path = tmp_path / "exp.ini"
    cfg_path.write_text("[problem]\nproblem = pl_quadratic\ndim = 8\n\n[solver]\neta = 0.5\n"
                        "seed = 3\n")
    assert read_config_file(cfg_path)["dim"] == 8
    args = build_parser().parse_args(["--config", str(cfg_path), "--dim", "4"])
    cfg = config_from_args(args)
    assert (cfg.dim, cfg.eta, cfg.seed) == (4, 0.5, 3)
    out = tmp_path / "o"
    assert main(["--config", str(cfg_path), "--dim", "4", "--out", str(out)]) == EXIT_OK


def test_second_order_solver(tmp_path):
    cfg = ExperimentConfig(problem="pl_quadratic", solver="second", dim=6, eps_g=1e-6,
                           eps_h=0.1, out=str(tmp_path))
    assert run_experiment(cfg) == EXIT_OK
    assert dict(read_csv(tmp_path / "summary.csv")[1:])["reason"] == "second_order_optimal"


def test_example_suite_outputs(tmp_path):
    rep = run_example_suite(str(tmp_path))
    for name in ("lambda_min.csv", "npc_residual.csv", "report.txt"):
        assert (tmp_path / name).exists()
    assert read_csv(tmp_path / "lambda_min.csv")[0] == ["epsilon", "iteration", "lambda_min_Tt"]
    names = {name: ok for name, ok, _ in rep.checks}
    assert all(ok for n, ok in names.items() if n.startswith(("example3", "example2", "example4")))
    assert names["example1_zero_curvature[eps=mu]"]
    assert names["example1_no_npc[eps>mu]"]


def test_examples_flag_exit_code_tracks_report(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "newtonmr", "--examples", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    failed = [ln for ln in proc.stdout.splitlines() if ln.startswith("FAIL")]
    assert proc.returncode == (EXIT_ERROR if failed else EXIT_OK)
    assert (tmp_path / "report.txt").read_text().strip() == proc.stdout.strip()
