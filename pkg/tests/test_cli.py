"""Command-line surface: exit codes, file outputs, determinism."""

import csv
import json
import os

import numpy as np
import pytest

from detgain.cli import main, parse_tau_grid
from detgain.ingest import load_ground_truth, save_detections, save_ground_truth

from synthetic import make_dataset, noisy_dump, oracle_dump


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ds = make_dataset(30, seed=21)
    gt = str(root / "gt.json")
    teacher = str(root / "teacher.json")
    student = str(root / "student.json")
    save_ground_truth(ds, gt)
    save_detections(oracle_dump(ds, seed=22), teacher)
    save_detections(noisy_dump(ds, seed=23, drift=0.1), student)
    return {"root": root, "gt": gt, "teacher": teacher, "student": student}


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestParsing:
    def test_tau_grid_default_form(self):
        grid = parse_tau_grid("0.5:0.95:0.05")
        assert len(grid) == 10

    def test_tau_grid_single_value(self):
        grid = parse_tau_grid("0.5:0.5:0.05")
        assert grid.thresholds == (0.5,)

    def test_unknown_subcommand_exits_one(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 1

    def test_unknown_flag_exits_one(self):
        with pytest.raises(SystemExit) as exc:
            main(["verify-mc", "--bogus"])
        assert exc.value.code == 1

    def test_missing_required_flag_names_it(self, capsys, world):
        with pytest.raises(SystemExit) as exc:
            main(["score", "--teacher", world["teacher"], "--student", world["student"]])
        assert exc.value.code == 1
        assert "--gt" in capsys.readouterr().err

    def test_no_command_prints_usage(self, capsys):
        assert main([]) == 1


class TestScoreSelect:
    def test_score_writes_csv(self, world):
        out = str(world["root"] / "scores.csv")
        rc = main(["score", "--gt", world["gt"], "--teacher", world["teacher"],
                   "--student", world["student"], "--out", out, "--threads", "1"])
        assert rc == 0
        rows = read_csv(out)
        assert len(rows) == 30
        assert set(rows[0]) == {"image_id", "delta_teacher", "delta_student", "learnability"}
        for row in rows:
            assert float(row["learnability"]) == float(row["delta_teacher"]) - float(
                row["delta_student"]
            )

    def test_score_deterministic(self, world):
        out1 = str(world["root"] / "s1.csv")
        out2 = str(world["root"] / "s2.csv")
        args = ["score", "--gt", world["gt"], "--teacher", world["teacher"],
                "--student", world["student"]]
        assert main(args + ["--out", out1]) == 0
        assert main(args + ["--out", out2, "--threads", "2"]) == 0
        assert open(out1).read() == open(out2).read()

    def test_select_emits_jsonl(self, world):
        scores = str(world["root"] / "scores.csv")
        main(["score", "--gt", world["gt"], "--teacher", world["teacher"],
              "--student", world["student"], "--out", scores])
        out = str(world["root"] / "sel.jsonl")
        rc = main(["select", "--scores", scores, "--ratio", "0.2", "--superbatch", "10",
                   "--seed", "1", "--out", out])
        assert rc == 0
        lines = [json.loads(l) for l in open(out).read().splitlines()]
        assert len(lines) == 3  # one epoch of 30 images at B=10
        for rec in lines:
            assert set(rec) == {"iter", "superbatch", "selected"}
            assert len(rec["selected"]) == 2
            assert set(rec["selected"]) <= set(rec["superbatch"])

    def test_select_missing_file_exits_two(self, world):
        assert main(["select", "--scores", "/nonexistent.csv", "--ratio", "0.2",
                     "--superbatch", "10"]) == 2


class TestSimulate:
    def test_summary_and_trace(self, world, capsys):
        out = str(world["root"] / "trace.json")
        rc = main(["simulate", "--gt", world["gt"], "--teacher", world["teacher"],
                   "--student", world["student"], "--iters", "3", "--ratio", "0.5",
                   "--superbatch", "10", "--out", out])
        assert rc == 0
        assert "mean_learnability_selected" in capsys.readouterr().out
        trace = json.loads(open(out).read())
        assert len(trace["iterations"]) == 3
        assert trace["summary"]["selected_per_iteration"] == 5


class TestExactDelta:
    def test_prints_decimal(self, world, capsys):
        rc = main(["exact-delta", "--gt", world["gt"], "--dets", world["teacher"],
                   "--image-id", "1"])
        assert rc == 0
        value = float(capsys.readouterr().out.strip())
        assert np.isfinite(value)

    def test_unknown_image_exits_one(self, world):
        assert main(["exact-delta", "--gt", world["gt"], "--dets", world["teacher"],
                     "--image-id", "999"]) == 1


class TestVerifyMc:
    def test_text_table(self, capsys):
        rc = main(["verify-mc", "--tp", "--trials", "20", "--t", "50", "--f", "450",
                   "--t-gt", "60", "--seed", "0"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "TP insertion" in out and "max |deviation|" in out

    def test_json_output_deterministic(self, world):
        out1 = str(world["root"] / "mc1.json")
        out2 = str(world["root"] / "mc2.json")
        args = ["verify-mc", "--fp", "--trials", "10", "--t", "50", "--f", "450",
                "--t-gt", "60", "--seed", "3", "--format", "json"]
        assert main(args + ["--out", out1]) == 0
        assert main(args + ["--out", out2]) == 0
        assert open(out1).read() == open(out2).read()

    def test_beta_dist_flag(self, capsys):
        rc = main(["verify-mc", "--fp", "--dist", "beta:4,2,2,4", "--trials", "10",
                   "--t", "50", "--f", "450", "--t-gt", "60"])
        assert rc == 0
        assert "quadrature" in capsys.readouterr().out

    def test_bad_dist_exits_one(self):
        assert main(["verify-mc", "--dist", "gamma:1"]) == 1


class TestPriorPipeline:
    def test_fit_then_surrogate_then_score(self, world, capsys):
        priors_path = str(world["root"] / "priors.json")
        rc = main(["fit-prior", "--gt", world["gt"], "--dets", world["student"],
                   "--out", priors_path, "--min-samples", "5"])
        assert rc == 0
        rows = json.loads(open(priors_path).read())
        assert all(r["coeffs_tp"] is None for r in rows)

        sur_path = str(world["root"] / "sur.json")
        rc = main(["surrogate", "--priors", priors_path, "--out", sur_path])
        assert rc == 0
        rows = json.loads(open(sur_path).read())
        fitted = [r for r in rows if r["coeffs_tp"] is not None]
        assert fitted and all(len(r["coeffs_tp"]) == 7 for r in fitted)

        out = str(world["root"] / "scores_beta.csv")
        rc = main(["score", "--gt", world["gt"], "--teacher", world["teacher"],
                   "--student", world["student"], "--prior", "beta-table",
                   "--prior-table", sur_path, "--out", out])
        assert rc == 0
        assert len(read_csv(out)) == 30

        out_sur = str(world["root"] / "scores_sur.csv")
        rc = main(["score", "--gt", world["gt"], "--teacher", world["teacher"],
                   "--student", world["student"], "--prior", "surrogate",
                   "--prior-table", sur_path, "--out", out_sur])
        assert rc == 0
        assert len(read_csv(out_sur)) == 30

    def test_prior_mode_without_table_exits_one(self, world):
        assert main(["score", "--gt", world["gt"], "--teacher", world["teacher"],
                     "--student", world["student"], "--prior", "beta-table"]) == 1


class TestCorrupt:
    def test_p_zero_identity(self, world):
        out = str(world["root"] / "c0.json")
        rc = main(["corrupt", "--gt", world["gt"], "--p", "0", "--out", out, "--seed", "1"])
        assert rc == 0
        original = load_ground_truth(world["gt"])
        corrupted = load_ground_truth(out)
        assert corrupted.ground_truths == original.ground_truths

    def test_p_one_with_manifest(self, world):
        out = str(world["root"] / "c1.json")
        manifest = str(world["root"] / "m1.json")
        rc = main(["corrupt", "--gt", world["gt"], "--p", "1", "--out", out,
                   "--manifest", manifest, "--seed", "2"])
        assert rc == 0
        m = json.loads(open(manifest).read())
        assert len(m["modified"]) == 30

    def test_bad_probability_exits_one(self, world):
        assert main(["corrupt", "--gt", world["gt"], "--p", "2", "--out", "/tmp/x.json"]) == 1

    def test_deterministic(self, world):
        a = str(world["root"] / "ca.json")
        b = str(world["root"] / "cb.json")
        for out in (a, b):
            main(["corrupt", "--gt", world["gt"], "--p", "0.5", "--out", out, "--seed", "7"])
        assert open(a).read() == open(b).read()

    def test_report_to_stderr(self, world, capsys):
        out = str(world["root"] / "cr.json")
        main(["corrupt", "--gt", world["gt"], "--p", "0.5", "--out", out, "--seed", "3"])
        err = capsys.readouterr().err
        assert "selected_images" in err


class TestAtomicWrites:
    def test_no_partial_file_on_failure(self, world, tmp_path):
        # Writing into a missing directory fails before the target exists.
        target = str(tmp_path / "no" / "such" / "dir" / "out.csv")
        rc = main(["score", "--gt", world["gt"], "--teacher", world["teacher"],
                   "--student", world["student"], "--out", target])
        assert rc == 2
        assert not os.path.exists(target)

    def test_no_temp_residue(self, world):
        out = str(world["root"] / "resid.csv")
        main(["score", "--gt", world["gt"], "--teacher", world["teacher"],
              "--student", world["student"], "--out", out])
        leftovers = [f for f in os.listdir(world["root"]) if f.startswith(".detgain-")]
        assert leftovers == []


class TestParseErrors:
    def test_malformed_gt_exits_two(self, world, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{broken")
        assert main(["score", "--gt", str(bad), "--teacher", world["teacher"],
                     "--student", world["student"]]) == 2

    def test_missing_gt_file_exits_two(self, world):
        assert main(["score", "--gt", "/nonexistent/gt.json", "--teacher", world["teacher"],
                     "--student", world["student"]]) == 2
