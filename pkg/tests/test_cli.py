import csv
import io
import json
import math
from importlib.resources import files

import jsonschema
import numpy as np
import pytest

from permabound.cli import main, parse_args, s1_minus_m1_argmax, to_csv, to_json

SCHEMAS = files("permabound") / "schemas"


def schema(name):
    return json.loads((SCHEMAS / f"{name}.schema.json").read_text())


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, _ = run(capsys, *argv)
    return code, json.loads(out)


@pytest.fixture
def third_j3(tmp_path):
    path = tmp_path / "j3.csv"
    path.write_text("\n".join(",".join(["0.3333333333333333"] * 3) for _ in range(3)) + "\n")
    return str(path)


class TestFormatting:
    def test_floats_17_digits(self):
        assert to_json(0.1) == "0.10000000000000001"
        assert json.loads(to_json({"x": 1 / 3}))["x"] == 1 / 3

    def test_special_floats(self):
        assert json.loads(to_json([math.nan, math.inf, -math.inf])) == ["nan", "inf", "-inf"]

    def test_numpy_and_nesting(self):
        obj = {"a": np.float64(2.5), "b": np.arange(3), "c": [{"d": None, "e": True}], "f": {}}
        assert json.loads(to_json(obj)) == {"a": 2.5, "b": [0, 1, 2], "c": [{"d": None, "e": True}], "f": {}}

    def test_unserialisable(self):
        with pytest.raises(TypeError):
            to_json(object())

    def test_csv_union_header(self):
        text = to_csv([{"a": 1, "b": 0.5}, {"a": 2, "c": math.inf, "d": False}])
        rows = list(csv.reader(io.StringIO(text)))
        assert rows == [["a", "b", "c", "d"], ["1", "0.5", "", ""], ["2", "", "inf", "false"]]
        assert to_csv([]) == ""


class TestArgs:
    def test_global_defaults(self, monkeypatch):
        monkeypatch.setenv("PERMABOUND_THREADS", "3")
        args = parse_args(["counterexample"])
        assert (args.seed, args.tol, args.max_iter, args.threads, args.format) == (0, 1e-8, 20000, 3, "json")

    def test_global_flags_either_side(self):
        assert parse_args(["--seed", "5", "sample"]).seed == 5
        assert parse_args(["sample", "--seed", "6"]).seed == 6

    def test_threads_flag_beats_env(self, monkeypatch):
        monkeypatch.setenv("PERMABOUND_THREADS", "3")
        assert parse_args(["sample", "--threads", "2"]).threads == 2

    def test_short_flag_not_ambiguous(self):
        args = parse_args(["almc", "--t", "0.25", "--tol", "1e-6"])
        assert (args.t, args.tol) == (0.25, 1e-6)


class TestBounds:
    def test_identity(self, tmp_path, capsys):
        path = tmp_path / "i5.json"
        path.write_text(json.dumps({"n": 5, "entries": np.eye(5).tolist()}))
        code, rep = run_json(capsys, "bounds", str(path))
        assert code == 0
        jsonschema.validate(rep, schema("bound_report"))
        for key in ("log_per_exact", "log_F", "log_max_cw", "log_lms"):
            assert rep[key] == pytest.approx(0.0, abs=1e-9)
        assert rep["matrix_id"] == "i5.json"

    def test_third_j3(self, third_j3, capsys):
        code, rep = run_json(capsys, "bounds", third_j3, "--id", "j3")
        assert code == 0 and rep["matrix_id"] == "j3"
        assert rep["log_per_exact"] == pytest.approx(math.log(2 / 9), abs=1e-12)
        assert rep["log_F"] == pytest.approx(6 * math.log(2 / 3), abs=1e-12)
        assert rep["log_F"] <= rep["log_max_cw"] + 1e-9 <= rep["log_per_exact"] + 2e-9

    def test_example2_ratio(self, tmp_path, capsys):
        from permabound.matcore import family_example2
        path = tmp_path / "p6.csv"
        np.savetxt(path, family_example2(3), delimiter=",")
        _, rep = run_json(capsys, "bounds", str(path))
        assert rep["log_per_exact"] - rep["log_F"] == pytest.approx(3 * math.log(2), abs=1e-10)

    def test_trace_and_csv(self, third_j3, tmp_path, capsys):
        trace = tmp_path / "trace.csv"
        code, out, _ = run(capsys, "bounds", third_j3, "--trace", str(trace), "--format", "csv")
        assert code == 0
        assert trace.read_text().splitlines()[0].startswith("iteration")
        rows = list(csv.DictReader(io.StringIO(out)))
        assert len(rows) == 1 and float(rows[0]["log_per_exact"]) == pytest.approx(math.log(2 / 9))

    def test_missing_file_exits_2(self, tmp_path, capsys):
        code, out, err = run(capsys, "bounds", str(tmp_path / "nope.csv"))
        assert code == 2 and out == "" and "error" in err

    def test_zero_permanent_exits_2(self, tmp_path, capsys):
        path = tmp_path / "z.csv"
        path.write_text("1,1\n0,0\n")
        code, _, err = run(capsys, "bounds", str(path))
        assert code == 2 and "ZeroPermanent" in err

    def test_out_file(self, third_j3, tmp_path, capsys):
        dest = tmp_path / "rep.json"
        code, out, _ = run(capsys, "bounds", third_j3, "--out", str(dest))
        assert code == 0 and out == ""
        assert json.loads(dest.read_text())["n"] == 3


class TestVerify:
    def test_small_run(self, capsys):
        code, rep = run_json(capsys, "verify", "--count", "12", "--n-max", "5", "--threads", "1")
        assert code == 0 and rep["violations"] == 0
        jsonschema.validate(rep, schema("verify_report"))
        assert set(rep["checks"]) >= {"per_ge_max_cw", "schrijver", "capacity_qj_ge_cpr"}
        assert all(c["checked"] == 12 for c in rep["checks"].values())

    def test_subset(self, capsys):
        _, rep = run_json(capsys, "verify", "--count", "5", "--inequality", "schrijver")
        assert list(rep["checks"]) == ["schrijver"]

    def test_reproducible_across_threads(self, capsys):
        argv = ["verify", "--count", "10", "--n-max", "6", "--seed", "7"]
        _, a, _ = run(capsys, *argv, "--threads", "1")
        _, b, _ = run(capsys, *argv, "--threads", "4")
        _, c, _ = run(capsys, *argv, "--threads", "1")
        assert a == b == c

    def test_n_max_limit(self, capsys):
        code, _, _ = run(capsys, "verify", "--n-max", "10")
        assert code == 2


class TestCounterexample:
    def test_default_range(self, capsys):
        code, rep = run_json(capsys, "counterexample")
        assert code == 0
        jsonschema.validate(rep, schema("counterexample_report"))
        assert rep["crossover_lms"] == 90
        by_n = {row["n"]: row for row in rep["table"]}
        assert not by_n[88]["lms_gt_per"] and by_n[90]["lms_gt_per"]
        assert abs(rep["grid_argmax_t"] - 0.721) <= 0.01
        assert rep["closed_form_max_abs_diff"] < 1e-9

    def test_argmax_grid(self):
        assert s1_minus_m1_argmax(0.01) == pytest.approx(0.72, abs=0.011)

    def test_short_range_no_crossover(self, capsys):
        _, rep = run_json(capsys, "counterexample", "--n-min", "3", "--n-max", "20")
        assert rep["crossover_lms"] is None and rep["table"][0]["n"] == 4


class TestAlmc:
    def test_enumerate_r2_n4(self, capsys):
        code, rep = run_json(capsys, "almc", "--r", "2", "--n", "4", "--n-list", "4,8,12,16")
        assert code == 0 and rep["violations"] == 0 and rep["matrices"] == 282
        assert rep["monotone"]
        jsonschema.validate(rep, schema("almc_report"))

    def test_r3_full_m(self, capsys):
        code, rep = run_json(capsys, "almc", "--r", "3", "--n", "3", "--m", "3")
        assert code == 0 and [row["m"] for row in rep["rows"]] == [3]

    def test_sample_mode(self, capsys):
        code, rep = run_json(capsys, "almc", "--mode", "sample", "--n", "6", "--samples", "50")
        assert code == 0 and rep["matrices"] == 50

    def test_cap_exceeded(self, capsys):
        code, _, err = run(capsys, "almc", "--n", "5", "--cap", "10")
        assert code == 2 and "CapExceeded" in err

    def test_bad_t(self, capsys):
        code, _, _ = run(capsys, "almc", "--t", "0.3", "--n-list", "4")
        assert code == 2


class TestRatioScan:
    def test_example2_exact(self, capsys):
        code, rep = run_json(capsys, "ratio-scan", "--family", "example2", "--n-max", "12")
        assert code == 0
        jsonschema.validate(rep, schema("ratio_scan_report"))
        for row in rep["table"]:
            assert row["rate"] == pytest.approx(0.5 * math.log(2), abs=1e-10)

    def test_uniform_rate_shrinks(self, capsys):
        _, rep = run_json(capsys, "ratio-scan", "--family", "uniform", "--n-min", "5", "--n-max", "200",
                          "--step", "65")
        rates = [row["rate"] for row in rep["table"]]
        assert all(a > b > 0 for a, b in zip(rates, rates[1:]))

    @pytest.mark.parametrize("family", ["example1", "regular"])
    def test_no_violations(self, family, capsys):
        code, rep = run_json(capsys, "ratio-scan", "--family", family, "--n-max", "9")
        assert code == 0 and rep["violations"] == 0 and rep["table"]


class TestProbe:
    def test_strong_on_regular(self, capsys):
        code, rep = run_json(capsys, "probe", "--conjecture", "strong", "--corpus", "regular",
                             "--count", "30")
        assert code == 0 and rep["negative"] == 0
        jsonschema.validate(rep, schema("probe_report"))
        assert sum(rep["histogram"]["counts"]) == 30

    def test_optimizational_on_dominant(self, capsys):
        _, rep = run_json(capsys, "probe", "--conjecture", "optimizational", "--corpus",
                          "diag_dominant", "--count", "20", "--n-max", "6")
        assert rep["negative"] == 0

    def test_sidak_k_family_reports_negatives(self, capsys):
        code, rep = run_json(capsys, "probe", "--conjecture", "sidak", "--corpus", "k_family",
                             "--n-min", "2", "--n-max", "12")
        # Conjecture failures never change the exit code.
        assert code == 0
        assert [row["n"] for row in rep["rows"]] == [2, 4, 6, 8, 10, 12]

    def test_lms_k_family_crossover(self, capsys):
        # Exact permanents of K_n stop at n = 20, well short of the n = 90 crossover.
        _, rep = run_json(capsys, "probe", "--conjecture", "lms", "--corpus", "k_family", "--n-max", "20")
        assert rep["first_negative_n"] is None and rep["min_slack"] > 0

    def test_cap_product(self, capsys):
        _, rep = run_json(capsys, "probe", "--conjecture", "cap_product", "--count", "10", "--n-max", "5")
        assert rep["count"] == 10


class TestSample:
    def test_hw_r1_perm(self, capsys):
        code, rep = run_json(capsys, "sample", "--model", "hw", "--r", "1", "--estimator", "perm",
                             "--samples", "200")
        assert code == 0 and rep["mean"] == 1.0
        jsonschema.validate(rep, schema("sample_report"))

    def test_reproducible(self, capsys):
        argv = ["sample", "--n", "12", "--samples", "5000", "--seed", "3"]
        _, a, _ = run(capsys, *argv, "--threads", "1")
        _, b, _ = run(capsys, *argv, "--threads", "6")
        assert a == b

    def test_dump(self, tmp_path, capsys):
        dump = tmp_path / "values.csv"
        run(capsys, "sample", "--samples", "20", "--dump", str(dump))
        assert len(dump.read_text().splitlines()) == 21

    def test_emd_needs_m(self, capsys):
        code, _, _ = run(capsys, "sample", "--estimator", "emd")
        assert code == 2

    def test_emd(self, capsys):
        code, rep = run_json(capsys, "sample", "--estimator", "emd", "--n", "6", "--m", "3",
                             "--samples", "100")
        assert code == 0 and rep["m"] == 3 and rep["mean"] > 0


class TestSchemas:
    @pytest.mark.parametrize("name", ["cw_result", "capacity_result", "mc_estimate"])
    def test_library_results_validate(self, name):
        from permabound.betheopt import capacity_qj, maximize_cw
        from permabound.randmodels import estimate_prob_boolean
        P = np.array([[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]])
        obj = {"cw_result": lambda: maximize_cw(P),
               "capacity_result": lambda: capacity_qj(P, 0),
               "mc_estimate": lambda: estimate_prob_boolean("bm", 2, 5, 50)}[name]()
        jsonschema.validate(json.loads(to_json(obj.to_dict())), schema(name))
