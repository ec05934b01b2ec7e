import os

import numpy as np
import pytest

from fvfseg import pipeline
from fvfseg.cli import (
    EXIT_GENERIC,
    EXIT_INSTABILITY,
    EXIT_IO,
    EXIT_NO_CANDIDATE,
    EXIT_OK,
    main,
)
from fvfseg.mvol import read_volume
from fvfseg.phantom import ATLAS_FILES, MANIFEST_FILE, PATIENT_FILE, TRUTH_FILE

DIMS_FLAG = "48"


@pytest.fixture(scope="module")
def case_dir(tmp_path_factory):
    """One phantom case shared by the whole module, built through the CLI."""
    path = tmp_path_factory.mktemp("case")
    code = main(
        [
            "phantom",
            "--output-dir", str(path),
            "--dims", DIMS_FLAG,
            "--shape", "sphere",
            "--radii", "8",
            "--offset", "4",
            "--seed", "0",
            "--tumor-seed", "1",
        ]
    )
    assert code == EXIT_OK
    return path


@pytest.fixture(scope="module")
def pipeline_out(case_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe")
    code = main(
        [
            "pipeline",
            "--input", str(case_dir / PATIENT_FILE),
            "--atlas-dir", str(case_dir),
            "--output-dir", str(out),
            "--ground-truth", str(case_dir / TRUTH_FILE),
        ]
    )
    assert code == EXIT_OK
    return out


class TestPhantomCommand:
    def test_writes_complete_case(self, case_dir, capsys):
        expected = set(ATLAS_FILES.values()) | {PATIENT_FILE, TRUTH_FILE, MANIFEST_FILE}
        assert {p.name for p in case_dir.iterdir()} == expected

    def test_dims_triple_accepted(self, tmp_path):
        code = main(
            ["phantom", "--output-dir", str(tmp_path), "--dims", "48,48,40",
             "--radii", "6"]
        )
        assert code == EXIT_OK
        assert read_volume(tmp_path / PATIENT_FILE).dims == (48, 48, 40)

    def test_bad_dims_exit_one(self, tmp_path, capsys):
        code = main(["phantom", "--output-dir", str(tmp_path), "--dims", "48,48"])
        assert code == EXIT_GENERIC
        assert "error:" in capsys.readouterr().err

    def test_weak_offset_exit_one(self, tmp_path, capsys):
        code = main(
            ["phantom", "--output-dir", str(tmp_path), "--dims", DIMS_FLAG,
             "--offset", "1.5"]
        )
        assert code == EXIT_GENERIC
        assert "offset" in capsys.readouterr().err


class TestPipelineCommand:
    def test_report_lines_on_stdout(self, case_dir, pipeline_out, tmp_path, capsys):
        capsys.readouterr()  # drop fixture output
        out = tmp_path / "run"
        code = main(
            [
                "pipeline",
                "--input", str(case_dir / PATIENT_FILE),
                "--atlas-dir", str(case_dir),
                "--output-dir", str(out),
                "--ground-truth", str(case_dir / TRUTH_FILE),
            ]
        )
        assert code == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        keys = [line.split("=", 1)[0] for line in lines]
        assert keys == ["status", "tm", "iterations", "candidate_voxels", "runtime_seconds"]
        values = dict(line.split("=", 1) for line in lines)
        assert values["status"] == "ok"
        assert 0.0 <= float(values["tm"]) <= 1.0
        assert int(values["iterations"]) > 0
        assert int(values["candidate_voxels"]) > 0

    def test_writes_all_artifacts(self, pipeline_out):
        expected = {
            pipeline.MODEL_FILE,
            pipeline.GBBM_FILE,
            pipeline.CANDIDATE_FILE,
            pipeline.CANDIDATE_REPORT_FILE,
            pipeline.SEGMENTATION_FILE,
            pipeline.EVOLUTION_LOG_FILE,
            pipeline.REPORT_FILE,
        }
        assert {p.name for p in pipeline_out.iterdir()} == expected

    def test_report_file_deterministic_keys(self, pipeline_out):
        text = (pipeline_out / pipeline.REPORT_FILE).read_text()
        entries = dict(line.split("=", 1) for line in text.strip().splitlines())
        assert entries["status"] == "ok"
        assert float(entries["tm"]) > 0.0
        assert int(entries["iterations"]) > 0
        # wall time goes to stdout only; the file must rerun byte-identical
        assert "runtime_seconds" not in entries

    def test_missing_atlas_dir_exit_two(self, case_dir, tmp_path, capsys):
        missing = tmp_path / "nowhere"
        code = main(
            [
                "pipeline",
                "--input", str(case_dir / PATIENT_FILE),
                "--atlas-dir", str(missing),
                "--output-dir", str(tmp_path / "out"),
            ]
        )
        assert code == EXIT_IO
        assert "nowhere" in capsys.readouterr().err

    def test_control_case_exit_three_with_report(self, tmp_path, capsys):
        case = tmp_path / "control"
        assert (
            main(
                ["phantom", "--output-dir", str(case), "--dims", DIMS_FLAG,
                 "--offset", "0", "--tumor-seed", "3"]
            )
            == EXIT_OK
        )
        out = tmp_path / "out"
        code = main(
            [
                "pipeline",
                "--input", str(case / PATIENT_FILE),
                "--atlas-dir", str(case),
                "--output-dir", str(out),
                "--ground-truth", str(case / TRUTH_FILE),
            ]
        )
        assert code == EXIT_NO_CANDIDATE
        assert "error:" in capsys.readouterr().err
        report = dict(
            line.split("=", 1)
            for line in (out / pipeline.REPORT_FILE).read_text().strip().splitlines()
        )
        assert report["status"] == "no-candidate"
        assert report["candidate_voxels"] == "0"
        assert float(report["tm"]) == 0.0  # empty segmentation vs nonempty truth

    def test_unstable_dt_from_config_exit_four(self, case_dir, tmp_path, capsys):
        config = tmp_path / "run.cfg"
        config.write_text("# deliberately past the stability bound\ndt = 2.5\n")
        code = main(
            [
                "pipeline",
                "--config", str(config),
                "--input", str(case_dir / PATIENT_FILE),
                "--atlas-dir", str(case_dir),
                "--output-dir", str(tmp_path / "out"),
            ]
        )
        assert code == EXIT_INSTABILITY
        assert "iteration" in capsys.readouterr().err

    def test_unknown_config_key_exit_one(self, case_dir, tmp_path, capsys):
        config = tmp_path / "bad.cfg"
        config.write_text("psi = 153\nfrobnicate = 7\n")
        code = main(
            [
                "pipeline",
                "--config", str(config),
                "--input", str(case_dir / PATIENT_FILE),
                "--atlas-dir", str(case_dir),
                "--output-dir", str(tmp_path / "out"),
            ]
        )
        assert code == EXIT_GENERIC
        err = capsys.readouterr().err
        assert "frobnicate" in err and ":2:" in err

    def test_flag_overrides_config_file(self, case_dir, tmp_path):
        # psi in the file is impossibly high; the flag rescues the run
        config = tmp_path / "strict.cfg"
        config.write_text("psi = 100000\n")
        out = tmp_path / "out"
        args = [
            "pipeline",
            "--config", str(config),
            "--input", str(case_dir / PATIENT_FILE),
            "--atlas-dir", str(case_dir),
            "--output-dir", str(out),
        ]
        assert main(args) == EXIT_NO_CANDIDATE
        assert main(args + ["--psi", "153"]) == EXIT_OK


class TestStagedCommands:
    def test_stage_chain_reproduces_pipeline(self, case_dir, pipeline_out, tmp_path):
        """fit -> gbbm -> candidate -> segment must leave byte-identical
        artifacts to the one-shot pipeline run."""
        out = tmp_path / "staged"
        patient = str(case_dir / PATIENT_FILE)
        atlas = str(case_dir)
        common = ["--atlas-dir", atlas, "--output-dir", str(out)]

        assert main(["fit", "--input", patient] + common) == EXIT_OK
        assert (
            main(
                ["gbbm", "--input", patient, "--model",
                 str(out / pipeline.MODEL_FILE)] + common
            )
            == EXIT_OK
        )
        assert (
            main(
                ["candidate", "--input", str(out / pipeline.GBBM_FILE)] + common
            )
            == EXIT_OK
        )
        assert (
            main(
                ["segment", "--input", patient, "--output-dir", str(out),
                 "--candidate", str(out / pipeline.CANDIDATE_FILE)]
            )
            == EXIT_OK
        )

        for fname in (
            pipeline.MODEL_FILE,
            pipeline.GBBM_FILE,
            pipeline.CANDIDATE_FILE,
            pipeline.CANDIDATE_REPORT_FILE,
            pipeline.SEGMENTATION_FILE,
            pipeline.EVOLUTION_LOG_FILE,
        ):
            assert (out / fname).read_bytes() == (pipeline_out / fname).read_bytes(), fname

    def test_candidate_reports_voxel_count(self, case_dir, pipeline_out, tmp_path, capsys):
        capsys.readouterr()
        out = tmp_path / "cand"
        code = main(
            [
                "candidate",
                "--input", str(pipeline_out / pipeline.GBBM_FILE),
                "--atlas-dir", str(case_dir),
                "--output-dir", str(out),
            ]
        )
        assert code == EXIT_OK
        stdout = capsys.readouterr().out
        assert stdout.startswith("candidate_voxels=")
        assert int(stdout.split("=", 1)[1]) > 0


class TestEvaluateCommand:
    def test_prints_overlap_counts(self, case_dir, pipeline_out, capsys):
        capsys.readouterr()
        code = main(
            [
                "evaluate",
                "--input", str(pipeline_out / pipeline.SEGMENTATION_FILE),
                "--ground-truth", str(case_dir / TRUTH_FILE),
            ]
        )
        assert code == EXIT_OK
        entries = dict(
            line.split("=", 1) for line in capsys.readouterr().out.strip().splitlines()
        )
        assert set(entries) == {"tm", "n_input", "n_truth", "n_intersection"}
        seg = read_volume(pipeline_out / pipeline.SEGMENTATION_FILE)
        truth = read_volume(case_dir / TRUTH_FILE)
        assert int(entries["n_input"]) == seg.count()
        assert int(entries["n_truth"]) == truth.count()
        inter = int(np.logical_and(seg.data, truth.data).sum())
        assert int(entries["n_intersection"]) == inter
        union = seg.count() + truth.count() - inter
        assert float(entries["tm"]) == pytest.approx(inter / union)

    def test_perfect_self_overlap(self, case_dir, capsys):
        capsys.readouterr()
        truth = str(case_dir / TRUTH_FILE)
        assert main(["evaluate", "--input", truth, "--ground-truth", truth]) == EXIT_OK
        assert "tm=1\n" in capsys.readouterr().out

    def test_evaluate_scalar_input_exit_one(self, case_dir, capsys):
        code = main(
            [
                "evaluate",
                "--input", str(case_dir / PATIENT_FILE),
                "--ground-truth", str(case_dir / TRUTH_FILE),
            ]
        )
        assert code == EXIT_GENERIC
        assert "mask" in capsys.readouterr().err


class TestUsageErrors:
    def test_missing_required_flag_is_systemexit_two(self):
        with pytest.raises(SystemExit) as exc:
            main(["pipeline"])  # --input/--atlas-dir/--output-dir required
        assert exc.value.code == 2

    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            main(["transmogrify"])
        assert exc.value.code == 2

    def test_entry_point_module(self):
        import fvfseg.__main__  # noqa: F401  -- importable without side effects
