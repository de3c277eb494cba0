"""Command-line interface: CSV contracts, manifests, error paths."""

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from resnet_kernels.cli import dispatch


def run_cli(args, tmp_path=None, name="out.csv"):
    out = None
    if tmp_path is not None:
        out = tmp_path / name
        args = args + ["--out", str(out)]
    code = dispatch(args)
    rows = None
    manifest = None
    if out is not None and out.exists():
        with open(out, newline="") as fh:
            rows = list(csv.reader(fh))
        mpath = out.with_name(out.name + ".manifest.json")
        if mpath.exists():
            manifest = json.loads(mpath.read_text())
    return code, rows, manifest


class TestKernelCurve:
    def test_doubling_column(self, tmp_path):
        code, rows, manifest = run_cli(
            ["kernel-curve", "--scaling", "unscaled", "--depth", "60",
             "--sigma-w2", "2", "--sigma-b2", "0"],
            tmp_path,
        )
        assert code == 0
        assert rows[0] == ["layer", "q_diag", "theta_diag"]
        q = np.array([float(r[1]) for r in rows[1:]])
        np.testing.assert_allclose(q[1:] / q[:-1], 2.0, rtol=1e-9)
        assert manifest["subcommand"] == "kernel-curve"

    def test_ntk_column_filled(self, tmp_path):
        code, rows, _ = run_cli(
            ["kernel-curve", "--scaling", "uniform", "--depth", "8", "--ntk"], tmp_path
        )
        assert code == 0
        assert all(r[2] != "" for r in rows[1:])

    def test_deterministic_rerun(self, tmp_path):
        args = ["kernel-curve", "--scaling", "decreasing", "--depth", "32"]
        _, rows1, _ = run_cli(args, tmp_path, "a.csv")
        _, rows2, _ = run_cli(args, tmp_path, "b.csv")
        assert rows1 == rows2


class TestErrorPaths:
    def test_missing_custom_file(self, capsys):
        code = dispatch(["kernel-curve", "--scaling", "custom:/nonexistent.txt",
                         "--depth", "4"])
        assert code == 1
        assert "custom scaling file" in capsys.readouterr().err

    def test_unknown_scaling(self, capsys):
        code = dispatch(["grad", "--scaling", "exotic", "--depth", "4"])
        assert code == 1
        assert "unknown scaling" in capsys.readouterr().err

    def test_correlation_with_bias_rejected(self, capsys, tmp_path):
        csv_path = tmp_path / "toy.csv"
        csv_path.write_text("0,1,2\n1,3,4\n")
        code = dispatch(["regress", "--train", "2", "--dataset", str(csv_path),
                         "--format", "csv", "--depth", "2", "--scaling", "uniform",
                         "--correlation", "--sigma-b2", "0.5"])
        assert code == 1
        assert "--correlation" in capsys.readouterr().err

    def test_missing_dataset_file(self, capsys):
        code = dispatch(["regress", "--train", "10", "--dataset", "/no/such.idx",
                         "--depth", "2", "--scaling", "uniform"])
        assert code == 1

    def test_help_exits_zero(self):
        assert dispatch(["spectrum", "--help"]) == 0

    def test_unknown_flag_nonzero(self):
        assert dispatch(["grad", "--scaling", "uniform", "--depth", "4",
                         "--bogus"]) != 0


class TestGradCommand:
    def test_profile_matches_library(self, tmp_path):
        code, rows, _ = run_cli(["grad", "--scaling", "uniform", "--depth", "16"],
                                tmp_path)
        assert code == 0
        vals = np.array([float(r[1]) for r in rows[1:]])
        assert len(vals) == 17
        assert vals[0] == pytest.approx((1 + 1 / 16) ** 16, rel=1e-12)


class TestOdeCheck:
    def test_gap_shrinks(self, tmp_path):
        code, rows, _ = run_cli(
            ["ode-check", "--steps", "200", "--depths", "50,200", "--pairs", "5"],
            tmp_path,
        )
        assert code == 0
        gaps = [float(r[1]) for r in rows[1:]]
        assert gaps[1] < gaps[0]


class TestSpectrumCommand:
    def test_csv_layout(self, tmp_path):
        code, rows, _ = run_cli(
            ["spectrum", "--n", "64", "--dim", "2", "--depths", "1,10",
             "--scaling", "uniform", "--top", "5"],
            tmp_path,
        )
        assert code == 0
        assert rows[0] == ["depth", "rank", "eigenvalue"]
        assert len(rows) == 1 + 2 * 5
        first = [float(r[2]) for r in rows[1:6]]
        assert first[0] == 1.0 and all(v <= 1.0 for v in first)


class TestMcValidateCommand:
    def test_quantities_and_z(self, tmp_path):
        code, rows, _ = run_cli(
            ["mc-validate", "--width", "64", "--depth", "2", "--samples", "150",
             "--scaling", "uniform", "--seed", "3", "--dim", "8"],
            tmp_path,
        )
        assert code == 0
        assert [r[0] for r in rows[1:]] == ["var_x", "var_xp", "cov"]
        zs = [abs(float(r[3])) for r in rows[1:]]
        assert all(z < 6.0 for z in zs)


class TestPacbayesCommand:
    def test_depth_sweep(self, tmp_path):
        code, rows, _ = run_cli(
            ["pacbayes", "--n", "20", "--depths", "2,4", "--scaling", "decreasing",
             "--sigma2", "0.5", "--dim", "8"],
            tmp_path,
        )
        assert code == 0
        assert rows[0] == ["depth", "kl", "logdet", "trace", "quad", "bound"]
        kl = [float(r[1]) for r in rows[1:]]
        assert all(v >= 0.0 for v in kl)


class TestRegressCommand:
    def test_end_to_end_on_csv_fixture(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        lines = []
        for i in range(80):
            label = i % 2
            base = np.full(6, 40.0 + 160.0 * label)
            row = np.clip(base + rng.normal(0, 8.0, 6), 0, 255)
            lines.append(",".join([str(label)] + [f"{v:.1f}" for v in row]))
        data = tmp_path / "toy.csv"
        data.write_text("\n".join(lines) + "\n")
        code = dispatch(["regress", "--train", "40", "--dataset", str(data),
                         "--format", "csv", "--depth", "4", "--scaling", "decreasing",
                         "--correlation", "--val", "20", "--seed", "1"])
        assert code == 0
        out = capsys.readouterr().out
        assert "test accuracy" in out
        acc = float(out.strip().split()[-1])
        assert acc > 0.9

    def test_installed_console_script(self):
        proc = subprocess.run(
            [sys.executable, "-c",
             "from resnet_kernels.cli import main; import sys; "
             "sys.argv = ['resnet-kernels', '--help']; main()"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "kernel-curve" in proc.stdout


class TestDeepNtkSpectrum:
    def test_unscaled_ntk_depth_1000_runs(self, tmp_path):
        code, rows, _ = run_cli(
            ["spectrum", "--n", "64", "--dim", "2", "--depths", "1000",
             "--scaling", "unscaled", "--ntk", "--top", "3"],
            tmp_path,
        )
        assert code == 0
        vals = [float(r[2]) for r in rows[1:]]
        assert vals[0] == 1.0 and all(np.isfinite(vals))


class TestPacbayesDefaultNoise:
    def test_sigma2_defaults_to_trace_fraction(self, tmp_path):
        code, rows, manifest = run_cli(
            ["pacbayes", "--n", "16", "--depths", "2,4", "--scaling", "uniform",
             "--dim", "8"],
            tmp_path,
        )
        assert code == 0
        assert manifest["sigma2"] > 0.0
        assert all(float(r[1]) >= 0.0 for r in rows[1:])
