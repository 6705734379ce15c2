""" Tests for comer/cli.py """
import json
from pathlib import Path

import pytest
from comer.cli import CellResult, ablation_cells, ablation_rows, main
from comer.config import COVERAGE_MODES, RunConfig
from comer.constants import CorpusFiles, RunFiles

from .conftest import tiny_sections

# ===== Fixtures ===========================================


@pytest.fixture(name="config_file")
def _config_file(tmp_path) -> Path:
    """Fixture writing the tiny configuration to a TOML file."""
    file = tmp_path / "tiny.toml"
    RunConfig("toy", **tiny_sections()).write(file)
    return file


@pytest.fixture(name="corpus")
def _corpus(tmp_path, config_file) -> Path:
    """Fixture generating a tiny corpus through the command line."""
    directory = tmp_path / "corpus"
    assert main(["gen", "--config", str(config_file), "--out", str(directory)]) == 0
    return directory


@pytest.fixture(name="run_dir")
def _run_dir(tmp_path, config_file, corpus) -> Path:
    """Fixture training a tiny model through the command line."""
    directory = tmp_path / "run"
    args = ["train", "--config", str(config_file), "--data", str(corpus)]
    assert main([*args, "--out", str(directory)]) == 0
    return directory


# ===== Tests ==============================================


class TestGen:
    """Tests for the gen command."""

    @staticmethod
    def test_statistics(config_file, tmp_path, capsys):
        """The corpus is written and its statistics printed."""
        # Act
        code = main(
            ["gen", "--config", str(config_file), "--out", str(tmp_path / "c"), "--n", "5"]
        )

        # Assert
        assert code == 0
        stats = json.loads(capsys.readouterr().out)
        assert stats["count"] == 5
        assert len(list((tmp_path / "c" / CorpusFiles.images).glob("*.pgm"))) == 5
        assert len((tmp_path / "c" / CorpusFiles.labels).read_text().splitlines()) == 5

    @staticmethod
    def test_refuses_non_empty_directory(config_file, corpus, capsys):
        """Regenerating into a corpus needs --force."""
        # Arrange
        args = ["gen", "--config", str(config_file), "--out", str(corpus)]
        capsys.readouterr()

        # Act
        code = main(args)
        error = capsys.readouterr().err
        forced = main([*args, "--force"])

        # Assert
        assert code == 1
        assert error.startswith("comer-error usage-error: ")
        assert "--force" in error
        assert forced == 0

    @staticmethod
    def test_force_removes_stale_images(config_file, corpus):
        """A smaller corpus forced over a larger one leaves no images behind."""
        # Arrange
        args = ["gen", "--config", str(config_file), "--out", str(corpus), "--force"]

        # Act
        code = main([*args, "--n", "2"])

        # Assert
        assert code == 0
        assert len(list((corpus / CorpusFiles.images).glob("*.pgm"))) == 2

    @staticmethod
    def test_unwritable_output(config_file, tmp_path, capsys):
        """Operating system errors are reported on one line."""
        # Arrange
        blocker = tmp_path / "blocker"
        blocker.write_text("")

        # Act
        code = main(["gen", "--config", str(config_file), "--out", str(blocker / "c")])

        # Assert
        assert code == 1
        error = capsys.readouterr().err
        assert error.startswith("comer-error io-error: ")
        assert error.count("\n") == 1

    @staticmethod
    def test_same_seed_same_labels(config_file, tmp_path):
        """Two corpora from one seed have identical labels."""
        # Act
        for name in ("a", "b"):
            main(["gen", "--config", str(config_file), "--out", str(tmp_path / name)])

        # Assert
        first = (tmp_path / "a" / CorpusFiles.labels).read_bytes()
        assert first == (tmp_path / "b" / CorpusFiles.labels).read_bytes()


class TestTrainEval:
    """Tests for the train, eval and visualize commands."""

    @staticmethod
    def test_train_writes_run(run_dir):
        """Training leaves both checkpoints and the metrics log."""
        # Assert
        for name in (RunFiles.best, RunFiles.last, RunFiles.metrics):
            assert (run_dir / name).exists()

    @staticmethod
    def test_invalid_coverage(config_file, corpus, tmp_path, capsys):
        """An unknown coverage mode is a usage error naming the valid ones."""
        # Act
        code = main(
            [
                "train",
                "--config",
                str(config_file),
                "--coverage",
                "sideways",
                "--data",
                str(corpus),
                "--out",
                str(tmp_path / "run"),
            ]
        )

        # Assert
        assert code == 1
        error = capsys.readouterr().err
        assert error.startswith("comer-error usage-error: ")
        assert all(mode in error for mode in COVERAGE_MODES)
        assert not (tmp_path / "run").exists()

    @staticmethod
    def test_set_override(config_file, corpus, tmp_path):
        """--set overrides reach the written run configuration."""
        # Act
        code = main(
            [
                "train",
                "--config",
                str(config_file),
                "--set",
                "training.lr=0.01",
                "--coverage",
                "self",
                "--data",
                str(corpus),
                "--out",
                str(tmp_path / "run"),
            ]
        )

        # Assert
        assert code == 0
        written = RunConfig.from_toml(tmp_path / "run" / RunFiles.config)
        assert written.training.lr == 0.01
        assert written.model.coverage == "self"

    @staticmethod
    def test_eval(run_dir, corpus, tmp_path, capsys):
        """Evaluation prints and writes the report and the predictions."""
        # Arrange
        report_file = tmp_path / "report.json"
        predictions_file = tmp_path / "predictions.tsv"
        capsys.readouterr()

        # Act
        code = main(
            [
                "eval",
                "--checkpoint",
                str(run_dir / RunFiles.best),
                "--data",
                str(corpus),
                "--beam",
                "2",
                "--report",
                str(report_file),
                "--predictions",
                str(predictions_file),
            ]
        )

        # Assert
        assert code == 0
        report = json.loads(report_file.read_text())
        assert report["count"] == 12
        assert 0 <= report["exprate"] <= report["err_le_1"] <= 1
        assert len(predictions_file.read_text().splitlines()) == 12
        assert "length" in capsys.readouterr().out

    @staticmethod
    def test_eval_missing_checkpoint(corpus, tmp_path, capsys):
        """A missing checkpoint is reported on one line."""
        # Act
        code = main(
            ["eval", "--checkpoint", str(tmp_path / "nope.cmrt"), "--data", str(corpus)]
        )

        # Assert
        assert code == 1
        error = capsys.readouterr().err
        assert error.startswith("comer-error checkpoint-error: ")
        assert error.count("\n") == 1

    @staticmethod
    def test_train_missing_image(config_file, tmp_path, capsys):
        """A label naming an image that is not on disk is reported on one line."""
        # Arrange
        corpus = tmp_path / "broken"
        corpus.mkdir()
        (corpus / CorpusFiles.labels).write_text("s0\tx + 1\n", encoding="utf-8")
        args = ["train", "--config", str(config_file), "--data", str(corpus)]

        # Act
        code = main([*args, "--out", str(tmp_path / "run")])

        # Assert
        assert code == 1
        error = capsys.readouterr().err
        assert error.startswith("comer-error usage-error: Cannot read PGM file ")
        assert "s0.pgm" in error
        assert error.count("\n") == 1

    @staticmethod
    def test_visualize_missing_image(run_dir, tmp_path, capsys):
        """A missing image to visualize is reported on one line."""
        # Act
        code = main(
            [
                "visualize",
                "--checkpoint",
                str(run_dir / RunFiles.best),
                "--image",
                str(tmp_path / "nope.pgm"),
                "--out",
                str(tmp_path / "heatmaps"),
            ]
        )

        # Assert
        assert code == 1
        assert capsys.readouterr().err.startswith("comer-error usage-error: ")

    @staticmethod
    def test_visualize(run_dir, corpus, tmp_path):
        """Heatmaps of one corpus image are exported."""
        # Arrange
        image = sorted((corpus / CorpusFiles.images).glob("*.pgm"))[0]

        # Act
        code = main(
            [
                "visualize",
                "--checkpoint",
                str(run_dir / RunFiles.best),
                "--image",
                str(image),
                "--out",
                str(tmp_path / "heatmaps"),
                "--max-len",
                "3",
            ]
        )

        # Assert
        assert code == 0
        assert (tmp_path / "heatmaps" / "summary.json").exists()
        assert list((tmp_path / "heatmaps" / "step1").glob("*_mean.pgm"))


def test_bad_arguments(capsys):
    """Argument errors use the single-line error format and exit with 2."""
    # Act
    with pytest.raises(SystemExit) as exit_info:
        main(["train"])

    # Assert
    assert exit_info.value.code == 2
    assert capsys.readouterr().err.startswith("comer-error usage-error: ")


class TestAblation:
    """Tests for the ablation grid and its table."""

    @staticmethod
    def test_cells(tmp_path):
        """Every mode for every seed, each in its own directory."""
        # Act
        cells = ablation_cells(RunConfig(), tmp_path, None, tmp_path / "out", seeds=2)
        baseline = ablation_cells(
            RunConfig(),
            tmp_path,
            None,
            tmp_path / "out",
            seeds=2,
            unaugmented_baseline=True,
        )

        # Assert
        assert [(cell.mode, cell.seed) for cell in cells] == [
            (mode, seed) for mode in COVERAGE_MODES for seed in (0, 1)
        ]
        assert len({cell.out_dir for cell in cells}) == 8
        assert len(baseline) == 10
        assert not baseline[-1].augment
        assert baseline[-1].out_dir == tmp_path / "out" / "none-noaug" / "seed1"

    @staticmethod
    def test_rows():
        """Seed means with the difference to the baseline in points."""
        # Arrange
        results = [
            CellResult("none", 0, 0.5, 0.2),
            CellResult("none", 1, 0.6, None),
            CellResult("fusion", 0, 0.6, 0.3),
            CellResult("fusion", 1, 0.7234, 0.5),
        ]

        # Act
        rows = ablation_rows(results)

        # Assert
        assert [row["mode"] for row in rows] == ["none", "fusion"]
        assert rows[0]["exprate"] == "55.00"
        assert rows[0]["delta_vs_none"] == "-"
        assert rows[0]["long_exprate"] == "20.00"
        assert rows[1]["exprate"] == "66.17"
        assert rows[1]["delta_vs_none"] == "(+11.17)"
        assert rows[1]["long_delta_vs_none"] == "(+20.00)"
        assert rows[1]["seeds"] == 2

    @staticmethod
    def test_ablate_without_pandas(config_file, corpus, tmp_path, capsys, mocker):
        """Without pandas the ablation stops before training, with a one-line error."""
        # Arrange
        mocker.patch.dict("sys.modules", {"pandas": None})
        args = ["ablate", "--config", str(config_file), "--data", str(corpus)]

        # Act
        code = main([*args, "--out", str(tmp_path / "ablation")])

        # Assert
        assert code == 1
        error = capsys.readouterr().err
        assert error.startswith("comer-error usage-error: ")
        assert "'pandas' extra" in error
        assert not (tmp_path / "ablation").exists()

    @staticmethod
    @pytest.mark.slow
    def test_ablate_table(config_file, corpus, tmp_path, capsys):
        """One row per mode plus the unaugmented baseline, reproducible byte for byte."""
        # Arrange
        pytest.importorskip("pandas")
        tables = list()

        # Act
        for name in ("first", "second"):
            out = tmp_path / name
            code = main(
                [
                    "ablate",
                    "--config",
                    str(config_file),
                    "--data",
                    str(corpus),
                    "--out",
                    str(out),
                    "--seeds",
                    "1",
                    "--workers",
                    "1",
                    "--with-unaugmented-baseline",
                ]
            )
            assert code == 0
            tables.append((out / "ablation.tsv").read_bytes())

        # Assert
        assert tables[0] == tables[1]
        lines = tables[0].decode().splitlines()
        assert lines[0].split("\t")[:3] == ["mode", "exprate", "delta_vs_none"]
        modes = [line.split("\t")[0] for line in lines[1:]]
        assert modes == [*COVERAGE_MODES, "none (no aug)"]
