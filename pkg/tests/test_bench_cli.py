import csv

import pytest

from ftdense import bench, cli
from ftdense.bench import BenchRecord, BenchSpec, emit_csv, overhead_report, run
from ftdense.injector import FaultPlan

TIMING = {"mean_time", "median_time", "std_time", "mean_gflops", "std_gflops", "overhead"}


def record(routine="gemm", n=64, t=1.0, ft=False, **kw):
    base = dict(routine=routine, m=n, n=n, k=n, threads=1, ft=ft, reps=1, injected=0, corrected=0, mean_time=t,
                median_time=t, std_time=0.0, mean_gflops=2 * n**3 / t / 1e9, std_gflops=0.0, overhead=None,
                correct=True, flop_model="2mnk")
    base.update(kw)
    return BenchRecord(**base)


class TestSpec:
    @pytest.mark.parametrize("kw", [{"reps": 0}, {"sizes": []}, {"sizes": [0]}, {"routine": "syrk"},
                                    {"threads": 0}])
    def test_rejects(self, kw):
        args = {"routine": "gemm", "sizes": [8], **kw}
        with pytest.raises(ValueError):
            BenchSpec(**args)

    def test_flops(self):
        assert bench.flops("gemm", 2, 3, 4) == 48
        assert bench.flops("trsm", 3, 5, 0) == 45
        assert bench.flops("trsv", 0, 7, 0) == 49
        assert bench.flops("scal", 0, 9, 0) == 9


class TestRun:
    def test_gemm_gflops(self):
        (rec,) = run(BenchSpec("gemm", [256], reps=3))
        assert rec.correct is True and rec.overhead is None and len(rec.times) == 3
        assert rec.mean_gflops == pytest.approx(2 * 256**3 / rec.mean_time / 1e9)

    def test_paired_overhead(self):
        recs = run(BenchSpec("gemm", [64, 96], reps=2, ft=True))
        assert all(r.overhead is not None for r in recs)
        assert recs[0].correct is True and recs[1].correct is None

    def test_plan_campaign(self):
        plan = FaultPlan("scal", count=20, interval_k=100)
        (rec,) = run(BenchSpec("scal", [10**5], reps=2, ft=True, plan=plan))
        assert (rec.injected, rec.corrected) == (20, 20)

    def test_auto_spread(self):
        (rec,) = run(BenchSpec("gemv", [256], reps=1, ft=True, inject_count=20))
        assert (rec.injected, rec.corrected) == (20, 20)

    def test_oracle_mismatch(self, monkeypatch):
        monkeypatch.setattr(bench, "oracle_ratio", lambda *a: 3.0)
        with pytest.raises(bench.OracleMismatch, match="3x the allowed bound"):
            run(BenchSpec("dot", [100], reps=1))

    @pytest.mark.parametrize("routine", bench.ROUTINES)
    def test_every_routine_verifies(self, routine):
        (rec,) = run(BenchSpec(routine, [40], reps=1, ft=True))
        assert rec.correct


class TestCsv:
    def test_empty(self, tmp_path):
        emit_csv([], tmp_path / "e.csv")
        assert (tmp_path / "e.csv").read_text() == ",".join(bench.CSV_COLUMNS) + "\n"

    def test_one_record(self, tmp_path):
        r = record(mean_time=0.1 + 0.2)
        emit_csv([r], tmp_path / "o.csv")
        lines = (tmp_path / "o.csv").read_text().splitlines()
        assert len(lines) == 2
        row = dict(zip(lines[0].split(","), lines[1].split(",")))
        assert float(row["mean_time"]) == 0.1 + 0.2  # full round-trip precision
        assert row["overhead"] == "" and row["ft"] == "false"

    def test_deterministic_except_timing(self, tmp_path):
        def rows(path):
            run(BenchSpec("gemm", [32, 48], reps=1, ft=True, inject_count=1, seed=3, output=str(path)))
            with open(path) as fh:
                return [{k: v for k, v in r.items() if k not in TIMING} for r in csv.DictReader(fh)]

        assert rows(tmp_path / "a.csv") == rows(tmp_path / "b.csv")


class TestOverheadReport:
    def test_identical(self):
        rep = overhead_report([record(t=1.0)], [record(t=1.0, ft=True)], mv_gflops=1.0)
        assert rep["aggregate"] == 0.0 and rep["rows"][0]["overhead"] == 0.0

    def test_three_percent(self):
        rep = overhead_report([record(routine="dot", t=2.0)], [record(routine="dot", t=2.06, ft=True)])
        assert rep["rows"][0]["overhead"] == pytest.approx(0.03)

    def test_predicted_unfused_included(self):
        p = record(n=3840, t=1.0)
        rep = overhead_report([p], [record(n=3840, t=1.03, ft=True)], mv_gflops=p.mean_gflops / 35)
        row = rep["rows"][0]
        assert row["predicted_unfused"] == pytest.approx(26 * 35 / 3840)
        assert row["overhead"] < row["predicted_unfused"]

    def test_unmatched(self):
        with pytest.raises(ValueError):
            overhead_report([record(n=64)], [record(n=128, ft=True)])


class TestCli:
    def test_parse_sizes(self):
        assert cli.parse_sizes("256:1024:256") == [256, 512, 768, 1024]
        assert cli.parse_sizes("3,5") == [3, 5]
        for bad in ("a:b", "0", "4:1:0", ""):
            with pytest.raises(Exception):
                cli.parse_sizes(bad)

    def test_verify_ok(self, capsys):
        assert cli.main(["verify", "--routine", "trsv", "--sizes", "5,40"]) == 0
        assert capsys.readouterr().out.count(" ok") == 2

    def test_bench_csv(self, tmp_path):
        path = tmp_path / "r.csv"
        assert cli.main(["bench", "--routine", "dot", "--sizes", "1000:3000:1000", "--reps", "2", "--ft",
                         "--csv", str(path)]) == 0
        assert len(path.read_text().splitlines()) == 4

    def test_inject(self, tmp_path, capsys):
        log = tmp_path / "inj.log"
        assert cli.main(["inject", "--routine", "gemv", "--sizes", "256", "--log", str(log)]) == 0
        out = capsys.readouterr().out
        assert "injected=20 detected=20 corrected=20" in out and "bitwise equal to fault-free run: True" in out
        assert log.read_text().startswith("# seed=0")

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_unrecoverable_exit(self):
        assert cli.main(["inject", "--routine", "scal", "--sizes", "4096", "--kind", "sticky"]) == 3

    def test_detect_only_exit(self):
        assert cli.main(["inject", "--routine", "dot", "--sizes", "4096", "--lane-width", "4"]) == 3

    def test_oracle_exit(self, monkeypatch):
        monkeypatch.setattr(bench, "oracle_ratio", lambda *a: 5.0)
        assert cli.main(["verify", "--routine", "dot", "--sizes", "10"]) == 2

    @pytest.mark.parametrize("argv", [["bench", "--reps", "0"], ["bench", "--sizes", "x"], ["nope"], [],
                                      ["bench", "--mc", "10"], ["bench", "--inject-count", "3"]])
    def test_usage_exit(self, argv):
        assert cli.main(argv) == 4

    def test_environment_defaults(self, monkeypatch, capsys):
        monkeypatch.setenv("FTDENSE_ROUTINE", "nrm2")
        monkeypatch.setenv("FTDENSE_SIZES", "10,20")
        assert cli.main(["verify"]) == 0
        out = capsys.readouterr().out
        assert "nrm2 size=10" in out and "nrm2 size=20" in out
        # explicit flags win
        assert cli.main(["verify", "--sizes", "7"]) == 0
        assert "size=7" in capsys.readouterr().out

    def test_bad_environment_value(self, monkeypatch):
        monkeypatch.setenv("FTDENSE_REPS", "many")
        assert cli.main(["bench"]) == 4

    def test_config_flags(self):
        ns = cli.build_parser().parse_args(["bench", "--lane-width", "4", "--kc", "128", "--c-tol", "16"])
        cfg = cli.config_from(ns)
        assert (cfg.lanes, cfg.kc, cfg.c_tol, cfg.is_detect_only) == (4, 128, 16.0, True)
        ns = cli.build_parser().parse_args(["bench", "--detect-only"])
        assert cli.config_from(ns).is_detect_only


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "ftdense", "verify", "--routine", "scal", "--sizes", "33"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "ok" in res.stdout
