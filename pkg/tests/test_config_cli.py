"""Configuration parsing and the command-line pipeline."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from cine2mesh.cli import main
from cine2mesh.config import (
    ConfigError,
    apply_overrides,
    config_text,
    default_config,
    load_config,
    save_config,
)

SMOKE_OVERRIDES = [
    "--set", "run.views=lax+sax",
    "--set", "cohort.count=8",
    "--set", "cohort.n_frames=8",
    "--set", "cohort.detail=1",
    "--set", "cohort.n_modes=3",
    "--set", "cohort.pca_cohort=8",
    "--set", "cohort.train=4",
    "--set", "cohort.validation=2",
    "--set", "cohort.test=2",
    "--set", "dataset.image_size=16",
    "--set", "image_ae.epochs=2",
    "--set", "image_ae.conv_channels=2,3,4",
    "--set", "image_ae.hidden=8",
    "--set", "image_ae.latent_dim=6",
    "--set", "mesh_ae.epochs=2",
    "--set", "mesh_ae.gc_width=8",
    "--set", "mesh_ae.hidden=8",
    "--set", "mesh_ae.latent_dim=6",
    "--set", "ef.epochs=10",
    "--set", "mapping.max_epochs=2",
    "--set", "mapping.hidden=8",
    "--set", "eval.surface_samples=400",
]


class TestConfig:
    def test_defaults_round_trip(self, tmp_path):
        config = default_config()
        path = tmp_path / "run.ini"
        save_config(config, path)
        loaded = load_config(path)
        assert config_text(loaded) == config_text(config)

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[nonsense]\nx = 1\n")
        with pytest.raises(ConfigError, match="unknown config section"):
            load_config(path)

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[cohort]\nbananas = 7\n")
        with pytest.raises(ConfigError, match="unknown key"):
            load_config(path)

    def test_type_errors_reported(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[cohort]\ncount = many\n")
        with pytest.raises(ConfigError, match="integer"):
            load_config(path)

    def test_overrides(self):
        config = apply_overrides(default_config(), {"cohort.count": "12", "run.views": "lax"})
        assert config.cohort.count == 12
        assert config.run.views == ("lax",)

    def test_bad_override_rejected(self):
        with pytest.raises(ConfigError):
            apply_overrides(default_config(), {"cohort.bananas": "1"})

    def test_config_text_contains_all_sections(self):
        text = config_text(default_config())
        for section in ("run", "cohort", "dataset", "image_ae", "mesh_ae", "ef", "mapping", "eval"):
            assert f"[{section}]" in text


class TestCliBasics:
    def test_usage_error_exit_code_1(self, capsys):
        assert main(["synth"]) == 1  # missing --run-dir
        assert "error" in capsys.readouterr().err

    def test_unknown_override_exit_code_1(self, tmp_path, capsys):
        code = main(["synth", "--run-dir", str(tmp_path), "--set", "cohort.bananas=1"])
        assert code == 1

    def test_eval_without_checkpoints_exit_code_2(self, tmp_path, capsys):
        code = main(["synth", "--run-dir", str(tmp_path), *SMOKE_OVERRIDES])
        assert code == 0
        code = main(["eval", "--run-dir", str(tmp_path), *SMOKE_OVERRIDES])
        assert code == 2
        err = capsys.readouterr().err
        assert "missing checkpoint" in err and "image_ae" in err

    def test_report_without_eval_exit_code_2(self, tmp_path, capsys):
        (tmp_path / "manifest.json").write_text("{}")
        code = main(["report", "--run-dir", str(tmp_path)])
        assert code == 2


class TestSynthDeterminism:
    def test_same_seed_identical_trees(self, tmp_path):
        args = [*SMOKE_OVERRIDES]
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["synth", "--run-dir", str(a), "--count", "8", "--seed", "7", *args]) == 0
        assert main(["synth", "--run-dir", str(b), "--count", "8", "--seed", "7", *args]) == 0
        files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_unpaired_pools_in_manifest(self, tmp_path):
        assert main(["synth", "--run-dir", str(tmp_path), *SMOKE_OVERRIDES]) == 0
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        splits = manifest["splits"]
        assert set(splits["image_subjects"]).isdisjoint(splits["mesh_subjects"])
        for entry in manifest["samples"]:
            if entry["role"] == "image":
                assert entry["cine"] is not None and entry["mesh_dir"] is None
            elif entry["role"] == "mesh":
                assert entry["mesh_dir"] is not None and entry["cine"] is None
            else:
                assert entry["cine"] is not None and entry["mesh_dir"] is not None


@pytest.mark.slow
class TestEndToEndSmoke:
    def test_full_pipeline_minimal(self, tmp_path):
        run = str(tmp_path / "run")
        assert main(["synth", "--run-dir", run, *SMOKE_OVERRIDES]) == 0
        assert main(["train-ae-image", "--run-dir", run, *SMOKE_OVERRIDES]) == 0
        assert main(["train-ae-mesh", "--run-dir", run, *SMOKE_OVERRIDES]) == 0
        assert main(["train-ef", "--run-dir", run, *SMOKE_OVERRIDES]) == 0
        assert main(["train-mapping", "--run-dir", run, *SMOKE_OVERRIDES]) == 0

        manifest = json.loads((Path(run) / "manifest.json").read_text())
        test_index = manifest["splits"]["test"][0]
        out = str(tmp_path / "inferred")
        assert main(
            ["infer", "--run-dir", run, "--sample", str(test_index), "--out", out,
             "--frames", "12", *SMOKE_OVERRIDES]
        ) == 0
        frames = sorted(Path(out).glob("frame_*.mesh"))
        assert len(frames) == 12

        assert main(["eval", "--run-dir", run, *SMOKE_OVERRIDES]) == 0
        results = json.loads((Path(run) / "eval" / "results.json").read_text())
        assert "lax+sax" in results
        assert results["lax+sax"]["n_evaluated"] == 2

        assert main(["report", "--run-dir", run, *SMOKE_OVERRIDES]) == 0
        report_dir = Path(run) / "report"
        assert (report_dir / "asd_table.csv").exists()
        assert (report_dir / "ef_scatter_lax_sax.csv").exists()
        assert (report_dir / "volume_curves_lax_sax.csv").exists()
        assert (report_dir / "ef_scatter_lax_sax.svg").exists()
        table = (report_dir / "asd_table.csv").read_text().splitlines()
        assert table[0] == "view,phase,LV,RV,LA,RA,Myo,Avg"
        # resolved config embedded for provenance
        assert "[cohort]" in (report_dir / "report.txt").read_text()
