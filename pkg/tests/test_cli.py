"""Command-line interface: artifacts, exit codes, and error reporting."""

import subprocess
import sys

import numpy as np
import pytest

from xfem2d.cli import main
from xfem2d.mesh import Mesh, write_mesh
from xfem2d.meshgen import uniform_rect
from xfem2d.output import read_sif_csv

BASE_CONFIG = """\
[mesh]
path = plate.mesh

[material]
youngs_modulus = 200e9
poisson_ratio = 0.3

[crack]
vertices = 0.35 0.5 ; 0.65 0.5

[boundary bottom]
displacement = free 0
scaled = off

[boundary pin]
displacement = 0 free
scaled = off

[boundary top]
traction = 0 1e6

[enrichment]
tip_enrichment = on
"""

GROWTH_SECTIONS = """
[propagation]
delta_a = 0.05

[schedule]
load_factors = 0.5 1.0
"""


def write_case(tmp_path, extra=""):
    mesh = uniform_rect(1.0, 1.0, 21, 21)
    tags = dict(mesh.boundary_tags)
    tags["pin"] = np.array([0])
    write_mesh(Mesh(nodes=mesh.nodes, elements=mesh.elements,
                    boundary_tags=tags), tmp_path / "plate.mesh")
    path = tmp_path / "case.cfg"
    path.write_text(BASE_CONFIG + extra)
    return str(path)


class TestSolve:
    def test_writes_all_artifacts(self, tmp_path, capsys):
        config = write_case(tmp_path)
        out = tmp_path / "out"
        code = main(["solve", "--config", config, "--out", str(out)])
        assert code == 0
        assert (out / "sif_history.csv").is_file()
        assert (out / "cod_profiles.csv").is_file()
        assert (out / "field_dump.vtk").is_file()
        assert (out / "run_log.txt").is_file()
        stdout = capsys.readouterr().out
        assert "K_I" in stdout
        assert "crack 0 tip 0" in stdout
        assert "crack 0 tip 1" in stdout

    def test_sif_table_is_sane(self, tmp_path):
        config = write_case(tmp_path)
        out = tmp_path / "out"
        assert main(["solve", "--config", config, "--out", str(out)]) == 0
        rows = read_sif_csv(out / "sif_history.csv")
        assert len(rows) == 2
        exact = 1e6 * np.sqrt(np.pi * 0.15)
        for row in rows:
            assert row["K_I"] == pytest.approx(exact, rel=0.2)

    def test_verbose_reports_stages(self, tmp_path, capsys):
        config = write_case(tmp_path)
        code = main(["solve", "--config", config,
                     "--out", str(tmp_path / "out"), "--verbose"])
        assert code == 0
        stderr = capsys.readouterr().err
        assert "[config]" in stderr
        assert "[mesh]" in stderr
        assert "[solve]" in stderr
        assert "[output]" in stderr

    def test_default_directory_from_config(self, tmp_path, capsys,
                                           monkeypatch):
        config = write_case(tmp_path, extra="\n[outputs]\n"
                                            "directory = results\n")
        monkeypatch.chdir(tmp_path)
        assert main(["solve", "--config", config]) == 0
        assert (tmp_path / "results" / "sif_history.csv").is_file()

    def test_artifact_subset_respected(self, tmp_path):
        config = write_case(tmp_path, extra="\n[outputs]\n"
                                            "artifacts = sif_csv\n")
        out = tmp_path / "out"
        assert main(["solve", "--config", config, "--out", str(out)]) == 0
        assert (out / "sif_history.csv").is_file()
        assert not (out / "cod_profiles.csv").exists()
        assert not (out / "field_dump.vtk").exists()
        assert not (out / "run_log.txt").exists()


class TestPropagate:
    def test_growth_run_artifacts(self, tmp_path, capsys):
        config = write_case(tmp_path, extra=GROWTH_SECTIONS)
        out = tmp_path / "out"
        code = main(["propagate", "--config", config, "--out", str(out)])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "steps solved: 2" in stdout
        assert "growth steps applied: 2" in stdout
        assert "stop: schedule exhausted" in stdout
        rows = read_sif_csv(out / "sif_history.csv")
        assert {row["step"] for row in rows} == {0, 1}
        log = (out / "run_log.txt").read_text()
        assert "step 0: load factor 0.5" in log
        assert "step 1: load factor 1" in log
        assert "extension: crack 0" in log

    def test_final_length_reported(self, tmp_path, capsys):
        config = write_case(tmp_path, extra=GROWTH_SECTIONS)
        out = tmp_path / "out"
        assert main(["propagate", "--config", config, "--out", str(out)]) == 0
        stdout = capsys.readouterr().out
        # 0.3 initial plus two steps of growth at both tips.
        assert "crack 0: length 0.5" in stdout

    def test_needs_propagation_sections(self, tmp_path, capsys):
        config = write_case(tmp_path)
        code = main(["propagate", "--config", config,
                     "--out", str(tmp_path / "out")])
        assert code == 1
        assert "[config]" in capsys.readouterr().err


class TestArgumentHandling:
    def test_missing_config_is_usage_error(self, tmp_path, capsys):
        code = main(["solve", "--out", str(tmp_path)])
        assert code == 1
        stderr = capsys.readouterr().err
        assert "usage:" in stderr
        assert "--config is required" in stderr

    def test_no_command(self, capsys):
        assert main([]) == 1
        assert "usage:" in capsys.readouterr().err

    def test_unknown_command(self, capsys):
        assert main(["paint"]) == 1
        assert "usage:" in capsys.readouterr().err

    def test_unknown_flag(self, tmp_path, capsys):
        assert main(["solve", "--config", "x", "--loud"]) == 1
        assert "usage:" in capsys.readouterr().err


class TestErrorPaths:
    def test_config_file_missing(self, tmp_path, capsys):
        code = main(["solve", "--config", str(tmp_path / "nope.cfg"),
                     "--out", str(tmp_path)])
        assert code == 1
        stderr = capsys.readouterr().err
        assert "[config] cannot read configuration" in stderr

    def test_invalid_material_value(self, tmp_path, capsys):
        config = write_case(tmp_path)
        bad = tmp_path / "bad.cfg"
        bad.write_text(BASE_CONFIG.replace("poisson_ratio = 0.3",
                                           "poisson_ratio = 0.7"))
        code = main(["solve", "--config", str(bad),
                     "--out", str(tmp_path / "out")])
        assert code == 1
        stderr = capsys.readouterr().err
        assert "[config]" in stderr
        assert "Poisson" in stderr

    def test_dangling_boundary_tag(self, tmp_path, capsys):
        config = write_case(tmp_path, extra="\n[boundary lid]\nfixed = on\n")
        code = main(["solve", "--config", config,
                     "--out", str(tmp_path / "out")])
        assert code == 1
        stderr = capsys.readouterr().err
        assert "[mesh]" in stderr
        assert "lid" in stderr


class TestSubprocessEntry:
    def test_module_invocation(self, tmp_path):
        config = write_case(tmp_path)
        result = subprocess.run(
            [sys.executable, "-m", "xfem2d", "solve", "--config", config,
             "--out", str(tmp_path / "out")],
            capture_output=True, text=True,
        )
        assert result.returncode == 0
        assert "K_I" in result.stdout
        assert (tmp_path / "out" / "sif_history.csv").is_file()

    def test_module_invocation_usage_error(self):
        result = subprocess.run(
            [sys.executable, "-m", "xfem2d"],
            capture_output=True, text=True,
        )
        assert result.returncode == 1
        assert "usage:" in result.stderr
