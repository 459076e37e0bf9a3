import hashlib

import numpy as np
import pytest

from otsplit import __version__
from otsplit.cli import EXIT_DIVERGED, EXIT_INVALID, EXIT_OK, EXIT_USAGE, demo_densities, parse_grid, run_cli
from otsplit.errors import DimensionError, ParseError, ValidationError
from otsplit.grid import CenteredField, GridDims, validate_and_normalize
from otsplit.io import (
    CSV_HEADER,
    RunManifest,
    decode_tensor,
    encode_pgm,
    encode_tensor,
    load_density,
    parse_csv,
    parse_pgm,
    read_field,
    save_run,
)
from otsplit.solvers import ConvergenceRecord


class TestPGM:
    def test_p2_example(self):
        img = parse_pgm(b"P2\n2 2\n255\n0 0 0 255\n")
        np.testing.assert_array_equal(img, [[0, 0], [0, 1]])

    def test_comments_and_16_bit(self):
        img = parse_pgm(b"P2 # c\n3 1 # w h\n65535\n0 65535 32768\n")
        np.testing.assert_allclose(img, [[0, 1, 32768 / 65535]])

    @pytest.mark.parametrize("maxval", [255, 65535])
    def test_p5_round_trip(self, maxval, rng):
        img = rng.integers(0, maxval + 1, (4, 7)) / maxval
        np.testing.assert_array_equal(parse_pgm(encode_pgm(img, maxval)), img)

    def test_uniform_image_normalizes(self, tmp_path):
        p = tmp_path / "u.pgm"
        p.write_bytes(encode_pgm(np.full((4, 4), 0.5)))
        f = load_density(p)
        pair = validate_and_normalize(f, f)
        np.testing.assert_allclose(pair.f0, np.full((4, 4), 1 / 16), rtol=1e-15)
        assert pair.f0.sum() == pytest.approx(1.0, abs=1e-15)

    def test_truncated_p5(self):
        data = encode_pgm(np.zeros((3, 3)))[:-4]
        with pytest.raises(ParseError, match="missing 4 bytes") as exc:
            parse_pgm(data)
        assert exc.value.offset == len(data)

    @pytest.mark.parametrize(
        "data, offset",
        [
            (b"P3\n1 1\n255\n0", 0),
            (b"P2\n2 x\n255\n0 0", 5),
            (b"P2\n1 1\n255\nzz", 11),
            (b"P2\n1 1\n255\n300", 11),
            (b"P2\n2 1\n255\n0", 12),
        ],
    )
    def test_errors_carry_offsets(self, data, offset):
        with pytest.raises(ParseError) as exc:
            parse_pgm(data)
        assert exc.value.offset == offset


class TestCSV:
    def test_single_row_is_1d(self):
        assert parse_csv(b"1, 2,3\n").shape == (3,)

    def test_grid_and_tabs(self):
        np.testing.assert_array_equal(parse_csv(b"1\t2\n\n3,4\n"), [[1, 2], [3, 4]])

    def test_errors(self):
        with pytest.raises(ParseError) as exc:
            parse_csv(b"1,2\n3,x\n")
        assert exc.value.offset == 6
        with pytest.raises(ParseError):
            parse_csv(b"1,2\n3\n")
        with pytest.raises(ParseError):
            parse_csv(b"\n\n")


class TestTensor:
    def test_round_trip_bitwise(self, rng):
        f = rng.standard_normal((5, 4, 3))
        m = rng.standard_normal((2, 5, 4, 3))
        g, n = decode_tensor(encode_tensor(f, m))
        assert g.tobytes() == f.tobytes() and n.tobytes() == m.tobytes()

    def test_header_layout(self):
        data = encode_tensor(np.arange(6.0).reshape(3, 2))
        assert data[:4] == b"OTDT"
        assert np.frombuffer(data[4:24], "<u4").tolist() == [1, 1, 3, 2, 1]
        assert np.frombuffer(data[24:], "<f8").tolist() == list(range(6))

    def test_errors(self):
        good = encode_tensor(np.ones((2, 2)))
        for bad in (b"XXXX" + good[4:], good[:-1], good[:10]):
            with pytest.raises(ParseError):
                decode_tensor(bad)
        with pytest.raises(DimensionError):
            encode_tensor(np.ones(3))

    def test_density_file(self, tmp_path):
        p = tmp_path / "d.otdt"
        p.write_bytes(encode_tensor(np.arange(4.0)[:, None]))
        np.testing.assert_array_equal(load_density(p), np.arange(4.0))
        with pytest.raises(ParseError):
            load_density(tmp_path / "d.bin")


class TestSaveRun:
    def test_outputs(self, tmp_path, rng):
        dims = GridDims(N=4, M=3, P=32)
        V = CenteredField(rng.standard_normal((2,) + dims.centered_shape), rng.random(dims.centered_shape))
        rec = ConvergenceRecord()
        rec.append(10, 1.5, -0.1, 1e-15, 0.0, 0.3)
        paths = save_run(V, rec, RunManifest(config={"grid": str(dims)}), tmp_path)
        names = sorted(p.name for p in tmp_path.glob("frame_*.pgm"))
        assert names == [f"frame_{k:03d}.pgm" for k in range(33)]
        assert len(paths["frames"]) == 33
        W = read_field(paths["tensor"])
        assert W.f.tobytes() == V.f.tobytes() and W.m.tobytes() == V.m.tobytes()
        lines = paths["log"].read_text().splitlines()
        assert lines[0] == "iter,J,min_f,div_residual,boundary_residual,delta_f" == ",".join(CSV_HEADER)
        assert lines[1].split(",")[0] == "10" and float(lines[1].split(",")[1]) == 1.5
        man = RunManifest.from_text(paths["manifest"].read_text())
        assert man.config["grid"] == str(dims) and man.outputs["frames"] == "33"
        digest = hashlib.sha256(paths["tensor"].read_bytes()).hexdigest()
        assert man.outputs["tensor_sha256"] == digest

    def test_frames_global_max(self, tmp_path):
        f = np.zeros((3, 2))
        f[1, 0], f[2, 1] = 0.5, 2.0
        V = CenteredField(np.zeros((1, 3, 2)), f)
        paths = save_run(V, ConvergenceRecord(), RunManifest(), tmp_path)
        a = parse_pgm(paths["frames"][0].read_bytes())
        b = parse_pgm(paths["frames"][1].read_bytes())
        assert a.max() == 64 / 255 and b.max() == 1.0

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        V = CenteredField(np.zeros((1, 3, 2)), np.ones((3, 2)))
        with pytest.raises(OSError, match="could not write"):
            save_run(V, ConvergenceRecord(), RunManifest(), blocker / "sub")


class TestManifest:
    def test_round_trip(self):
        m = RunManifest({"a": "1"}, {"f0": "x.pgm"}, {"log": "c.csv"}, {"solve": 1.25})
        n = RunManifest.from_text(m.to_text())
        assert n.config == {"a": "1"} and n.inputs == {"f0": "x.pgm"} and n.timings == {"solve": 1.25}

    def test_malformed(self):
        with pytest.raises(ParseError):
            RunManifest.from_text("no equals sign\n")
        with pytest.raises(ParseError):
            RunManifest.from_text("other.k=1\n")


class TestCLI:
    @pytest.fixture
    def densities(self, tmp_path, rng):
        a, b = tmp_path / "a.pgm", tmp_path / "b.pgm"
        x = np.linspace(0, 1, 9)
        X, Y = np.meshgrid(x, x, indexing="ij")
        a.write_bytes(encode_pgm(np.exp(-((X - 0.3) ** 2 + (Y - 0.3) ** 2) / 0.02) + 0.05))
        b.write_bytes(encode_pgm(np.exp(-((X - 0.7) ** 2 + (Y - 0.6) ** 2) / 0.02) + 0.05))
        return a, b

    def test_pipeline(self, densities, tmp_path):
        a, b = densities
        out = tmp_path / "run"
        code = run_cli(["--f0", str(a), "--f1", str(b), "--grid", "8x8x8", "--solver", "pd", "--iters", "50", "--out", str(out), "-q"])
        assert code == EXIT_OK
        assert len(list(out.glob("frame_*.pgm"))) == 9
        for name in ("solution.otdt", "convergence.csv", "manifest.txt"):
            assert (out / name).exists()
        man = RunManifest.from_text((out / "manifest.txt").read_text())
        assert man.config["solver"] == "PD" and man.config["iters"] == "50"
        assert man.inputs["f0_sha256"] == hashlib.sha256(a.read_bytes()).hexdigest()

    def test_deterministic(self, densities, tmp_path):
        a, b = densities
        digests = []
        for k in range(2):
            out = tmp_path / f"r{k}"
            assert run_cli(["--f0", str(a), "--f1", str(b), "--grid", "8x8x6", "--solver", "a-dr", "--iters", "30", "--out", str(out), "-q"]) == 0
            digests.append((out / "solution.otdt").read_bytes())
        assert digests[0] == digests[1]

    def test_resampling(self, densities, tmp_path):
        a, b = densities
        assert run_cli(["--f0", str(a), "--f1", str(b), "--grid", "12x12x4", "--iters", "5", "--out", str(tmp_path / "o"), "-q"]) == 0

    def test_bad_alpha(self, densities, tmp_path, capsys):
        a, b = densities
        code = run_cli(["--f0", str(a), "--f1", str(b), "--grid", "8x8x8", "--solver", "dr", "--alpha", "2.5", "--out", str(tmp_path / "o")])
        assert code == EXIT_INVALID
        assert "alpha" in capsys.readouterr().err

    def test_invalid_input(self, tmp_path):
        bad = tmp_path / "bad.pgm"
        bad.write_bytes(b"P2\n2 2\n255\n0 0 0\n")
        assert run_cli(["--f0", str(bad), "--f1", str(bad), "--grid", "1x1x1", "-q"]) == EXIT_INVALID
        assert run_cli(["--demo", "gaussians", "--grid", "8x8", "-q"]) == EXIT_INVALID
        assert run_cli(["--f0", str(tmp_path / "none.pgm"), "--f1", str(bad), "--grid", "8x8x8", "-q"]) == EXIT_INVALID

    def test_usage(self, capsys):
        assert run_cli(["--bogus"]) == EXIT_USAGE
        assert "usage" in capsys.readouterr().err
        assert run_cli(["--grid", "8x8x8"]) == EXIT_USAGE
        assert run_cli(["--iters", "ten"]) == EXIT_USAGE

    def test_version(self, capsys):
        assert run_cli(["--version"]) == 0
        assert __version__ in capsys.readouterr().out

    def test_divergence_exit(self, tmp_path, monkeypatch, capsys):
        import otsplit.cli as cli
        from otsplit.errors import DivergenceError

        record = ConvergenceRecord()
        record.append(1, float("nan"), 0.0, 0.0, 0.0, float("nan"))

        def blow_up(problem, config):
            raise DivergenceError("iterate norm inf", record=record)

        monkeypatch.setattr(cli, "solve", blow_up)
        out = tmp_path / "o"
        assert run_cli(["--demo", "gaussians", "--grid", "8x8x4", "--out", str(out), "-q"]) == EXIT_DIVERGED
        assert "solver failed" in capsys.readouterr().err
        assert (out / "convergence.csv").read_text().startswith("iter,J")

    def test_demo(self, tmp_path):
        out = tmp_path / "demo"
        assert run_cli(["--demo", "obstacle", "--grid", "16x16x8", "--iters", "20", "--out", str(out), "-q"]) == 0
        man = RunManifest.from_text((out / "manifest.txt").read_text())
        assert man.config["demo"] == "obstacle" and man.config["weight_mode"] == "obstacle"

    def test_demo_instance(self):
        dims = GridDims(N=32, M=32, P=32)
        f0, f1, mask = demo_densities("gaussians", dims)
        assert f0.shape == (33, 33) and mask is None
        i, j = np.unravel_index(np.argmax(f0), f0.shape)
        assert abs(i / 32 - 0.3) <= 1 / 64 and abs(j / 32 - 0.3) <= 1 / 64
        f0, f1, mask = demo_densities("obstacle", dims)
        assert mask.any() and np.all(f0[mask] == 0) and np.all(f1[mask] == 0)

    def test_parse_grid(self):
        assert parse_grid("32x32x32") == GridDims(N=32, M=32, P=32)
        assert parse_grid("8x4") == GridDims(N=8, P=4)
        with pytest.raises(ValidationError):
            parse_grid("8x")
