"""CLI contract: configs, artifacts, exit codes, plots."""

import json
import os

import numpy as np
import pytest

from nstlab import cli, fixtures, reporting
from nstlab.errors import ConfigError
from nstlab.network import save_weights


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    paths = fixtures.materialize(str(root / "imgs"), size=32)
    return root, paths


def write_config(root, name, payload):
    path = root / name
    path.write_text(json.dumps(payload, indent=2))
    return str(path)


def stylize_config(paths, **overrides):
    cfg = {
        "command": "stylize",
        "job": {"content": paths["content"][0], "style": paths["style"][0],
                "output": "out.png", "seed": 1},
        "network": {"id": "vgg-tiny"},
        "optimizer": {"kind": "lbfgs", "max_iterations": 6},
    }
    cfg.update(overrides)
    return cfg


class TestRunJob:
    def test_minimal_stylize_produces_artifacts(self, workspace):
        root, paths = workspace
        cfg_path = write_config(root, "job.json", stylize_config(paths))
        out_dir = str(root / "out1")
        code = cli.run_job(cfg_path, out_dir=out_dir)
        assert code == 0
        for artifact in ("out.png", "report.json", "report_loss.csv",
                         "report_loss.svg", "report_timings.json"):
            assert os.path.exists(os.path.join(out_dir, artifact)), artifact
        report = json.loads(open(os.path.join(out_dir, "report.json")).read())
        assert report["seed"] == 1
        assert report["job"]["optimizer"]["max_iterations"] == 6
        assert len(report["trace"]) == 6

    def test_reproducible_byte_for_byte(self, workspace):
        root, paths = workspace
        cfg_path = write_config(root, "job2.json", stylize_config(paths))
        blobs = []
        for d in ("rep1", "rep2"):
            out_dir = str(root / d)
            assert cli.run_job(cfg_path, out_dir=out_dir) == 0
            blobs.append((
                open(os.path.join(out_dir, "report.json"), "rb").read(),
                open(os.path.join(out_dir, "report_loss.csv"), "rb").read(),
                open(os.path.join(out_dir, "out.png"), "rb").read(),
            ))
        # reports embed the output directory; normalize it before comparing
        r1 = blobs[0][0].replace(b"rep1", b"repX")
        r2 = blobs[1][0].replace(b"rep2", b"repX")
        assert r1 == r2
        assert blobs[0][1] == blobs[1][1]
        assert blobs[0][2] == blobs[1][2]

    def test_seed_override_changes_noise_run(self, workspace):
        root, paths = workspace
        cfg = stylize_config(paths)
        cfg["job"]["init"] = "noise"
        cfg_path = write_config(root, "job3.json", cfg)
        d1, d2 = str(root / "s1"), str(root / "s2")
        cli.run_job(cfg_path, out_dir=d1, seed=10)
        cli.run_job(cfg_path, out_dir=d2, seed=11)
        png1 = open(os.path.join(d1, "out.png"), "rb").read()
        png2 = open(os.path.join(d2, "out.png"), "rb").read()
        assert png1 != png2

    def test_missing_style_is_validation_error(self, workspace, capsys):
        root, paths = workspace
        cfg = stylize_config(paths)
        del cfg["job"]["style"]
        cfg_path = write_config(root, "bad1.json", cfg)
        code = cli.main(["stylize", "--config", cfg_path, "--out-dir", str(root / "x")])
        assert code == 3
        err = capsys.readouterr().err
        assert "style" in err

    def test_invalid_json_is_config_error(self, workspace, capsys):
        root, _ = workspace
        bad = root / "broken.json"
        bad.write_text("{ not json")
        code = cli.main(["stylize", "--config", str(bad)])
        assert code == 2

    def test_missing_content_file_reported(self, workspace):
        root, paths = workspace
        cfg = stylize_config(paths)
        cfg["job"]["content"] = str(root / "ghost.png")
        cfg_path = write_config(root, "bad2.json", cfg)
        assert cli.run_job(cfg_path, out_dir=str(root / "y")) == 3
        assert cli.main(["stylize", "--config", cfg_path]) == 3

    def test_unknown_config_key_rejected(self, workspace, capsys):
        root, paths = workspace
        cfg = stylize_config(paths)
        cfg["optimizer"]["max_iters"] = 5
        cfg_path = write_config(root, "bad3.json", cfg)
        code = cli.main(["stylize", "--config", cfg_path])
        assert code == 3
        assert "max_iters" in capsys.readouterr().err

    def test_dry_run_echoes_defaults(self, workspace, capsys):
        root, paths = workspace
        cfg_path = write_config(root, "dry.json", stylize_config(paths))
        code = cli.main(["stylize", "--config", cfg_path, "--dry-run"])
        assert code == 0
        echo = json.loads(capsys.readouterr().out)
        assert echo["loss"]["alpha"] == 1.0
        assert echo["loss"]["content_tap"] == "relu2"
        assert echo["optimizer"]["learning_rate"] == 1.0
        assert echo["preprocess"]["preprocess.scale"] == "unit"

    def test_partial_style_weights_warn(self, workspace):
        root, paths = workspace
        cfg = stylize_config(paths)
        cfg["loss"] = {"style_taps": {"relu1": 5.0}}
        cfg_path = write_config(root, "warn.json", cfg)
        out_dir = str(root / "warned")
        assert cli.run_job(cfg_path, out_dir=out_dir) == 0
        report = json.loads(open(os.path.join(out_dir, "report.json")).read())
        assert any("defaulted" in w for w in report["warnings"])
        taps = dict((t, w) for t, w in report["job"]["loss"]["style_taps"])
        assert taps["relu1"] == 5.0 and taps["relu2"] == 1.0


class TestAdainCommand:
    def test_adain_runs(self, workspace):
        root, paths = workspace
        cfg = {
            "command": "adain",
            "job": {"content": paths["content"][0], "style": paths["style"][0],
                    "output": "adain.png", "alpha_interp": 0.5},
        }
        cfg_path = write_config(root, "adain.json", cfg)
        out_dir = str(root / "adain_out")
        assert cli.run_job(cfg_path, out_dir=out_dir) == 0
        report = json.loads(open(os.path.join(out_dir, "report.json")).read())
        assert report["job"]["alpha_interp"] == 0.5
        assert any("untrained" in w for w in report["warnings"])


class TestTrainToyCommand:
    def test_train_toy_fast(self, workspace):
        root, paths = workspace
        cfg = {
            "command": "train-toy",
            "job": {"kind": "fast", "corpus": paths["corpus"][:4],
                    "style": paths["style"][0], "steps": 3, "seed": 2,
                    "output": "toy.nstw"},
            "trainer": {"batch_size": 2},
        }
        cfg_path = write_config(root, "toy.json", cfg)
        out_dir = str(root / "toy_out")
        assert cli.run_job(cfg_path, out_dir=out_dir) == 0
        assert os.path.exists(os.path.join(out_dir, "toy.nstw"))
        report = json.loads(open(os.path.join(out_dir, "report.json")).read())
        assert len(report["trace"]) == 3


class TestCompareCommand:
    def test_compare_emits_reports_and_images(self, workspace):
        root, paths = workspace
        cfg = {
            "command": "compare",
            "job": {"content": paths["content"][0], "style": paths["style"][0],
                    "kinds": ["none", "softmax", "scale:0.001", "tanh"], "seed": 0},
            "optimizer": {"kind": "lbfgs", "max_iterations": 3},
        }
        cfg_path = write_config(root, "cmp.json", cfg)
        out_dir = str(root / "cmp_out")
        assert cli.run_job(cfg_path, out_dir=out_dir) == 0
        comparison = json.loads(open(os.path.join(out_dir, "comparison.json")).read())
        assert len(comparison["kinds"]) == 4
        assert os.path.exists(os.path.join(out_dir, "comparison.svg"))
        for entry in comparison["kinds"]:
            assert entry["error"] is None
            assert os.path.exists(entry["output"])


class TestValidateWeights:
    def test_valid_fixture_file(self, workspace, capsys):
        root, _ = workspace
        path = str(root / "rs.nstw")
        save_weights(fixtures.fixture_weights("resnet-small", seed=0), path)
        code = cli.main(["validate-weights", path, "--network", "resnet-small"])
        assert code == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["violations"] == []

    def test_corrupt_file_is_io_error(self, workspace, capsys):
        root, _ = workspace
        path = root / "junk.nstw"
        path.write_bytes(b"XXXX garbage")
        code = cli.main(["validate-weights", str(path)])
        assert code == 5

    def test_probe_prints_tap_stats(self, workspace, capsys):
        root, paths = workspace
        path = str(root / "tiny.nstw")
        save_weights(fixtures.fixture_weights("vgg-tiny", seed=0), path)
        code = cli.main(["validate-weights", path, "--network", "vgg-tiny",
                         "--probe", paths["content"][0]])
        assert code == 0
        summary = json.loads(capsys.readouterr().out)
        assert "relu3" in summary["probe"]
        assert summary["probe"]["relu3"]["l2"] > 0


class TestPlot:
    def test_single_row_csv(self, tmp_path):
        csv = tmp_path / "one.csv"
        csv.write_text("iter,total,content,style\n0,1.5,1.0,0.5\n")
        out = str(tmp_path / "one.svg")
        reporting.emit_plot(str(csv), out)
        assert os.path.getsize(out) > 0

    def test_deterministic_output(self, tmp_path):
        csv = tmp_path / "curve.csv"
        rows = ["iter,total,content,style"]
        rows += [f"{i},{400 - i},{200 - i / 2},{200 - i / 2}" for i in range(400)]
        csv.write_text("\n".join(rows) + "\n")
        out1, out2 = str(tmp_path / "a.svg"), str(tmp_path / "b.svg")
        reporting.emit_plot(str(csv), out1)
        reporting.emit_plot(str(csv), out2)
        assert open(out1, "rb").read() == open(out2, "rb").read()

    def test_malformed_row_names_line(self, tmp_path):
        csv = tmp_path / "bad.csv"
        csv.write_text("iter,total,content,style\n0,1.0,1.0,0.0\n1,oops,1.0,0.0\n")
        with pytest.raises(ConfigError, match="line 3"):
            reporting.emit_plot(str(csv), str(tmp_path / "x.svg"))

    def test_plot_command(self, tmp_path, capsys):
        csv = tmp_path / "c.csv"
        csv.write_text("iter,total,content,style\n0,2.0,1.0,1.0\n1,1.0,0.5,0.5\n")
        code = cli.main(["plot", str(csv), "--out", str(tmp_path / "c.svg")])
        assert code == 0
        assert os.path.exists(tmp_path / "c.svg")


class TestFixturesCommand:
    def test_materializes_images_and_weights(self, tmp_path, capsys):
        out = str(tmp_path / "fx")
        code = cli.main(["fixtures", "--out-dir", out, "--size", "16",
                         "--weights", "vgg-tiny"])
        assert code == 0
        assert os.path.exists(os.path.join(out, "corpus_0.png"))
        assert os.path.exists(os.path.join(out, "content_3.png"))
        assert os.path.exists(os.path.join(out, "vgg-tiny.nstw"))
