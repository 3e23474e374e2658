"""End-to-end command tests, run in process through main()."""

import numpy as np
import pytest

from difftrack.cli import main
from difftrack.formats import (
    load_attention,
    load_checkpoint,
    read_pseudolabels,
    read_results,
    unpack_artifacts,
    write_results,
)
from difftrack.pseudolabel import FlowField
from difftrack.synthetic import make_scene, render_scene

FAST_INI = """
[backbone]
resolution = 64
layers = 32x8, 16x8
seed = 5

[learner]
shared_epochs = 2
batch_size = 4
specific_epochs = 1
specific_iters = 2
"""


@pytest.fixture(autouse=True)
def _no_env_config(monkeypatch):
    monkeypatch.delenv("DIFFTRACK_CONFIG", raising=False)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A config file, a trained checkpoint, and a rendered frame sequence."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.ini"
    cfg.write_text(FAST_INI)
    ckpt = root / "shared.ckpt"
    assert main(["train-shared", "--config", str(cfg), "--out", str(ckpt),
                 "--synthetic", "2"]) == 0

    from PIL import Image

    spec = make_scene(seed=31, n_frames=6, resolution=64)
    frames, boxes = render_scene(spec)
    frames_dir = root / "frames"
    frames_dir.mkdir()
    for i, frame in enumerate(frames):
        px = np.clip(frame.pixels * 255.0, 0, 255).round().astype(np.uint8)
        Image.fromarray(px).save(frames_dir / f"{i:06d}.png")
    gt = root / "groundtruth.txt"
    gt.write_text("".join(f"{b.x:.2f},{b.y:.2f},{b.w:.2f},{b.h:.2f}\n" for b in boxes))
    return {"root": root, "cfg": cfg, "ckpt": ckpt,
            "frames": frames_dir, "gt": gt, "n_frames": len(frames)}


def square_flow_video(n_frames=5, size=64, speed=3):
    flows = []
    for t in range(n_frames):
        v = np.zeros((size, size, 2))
        x = 10 + speed * t
        v[20:36, x:x + 16] = (4.0, 1.5)
        flows.append(FlowField(v))
    return flows


class TestTopLevel:
    def test_write_config_prints_defaults(self, capsys):
        assert main(["--write-config"]) == 0
        out = capsys.readouterr().out
        for section in ("[backbone]", "[learner]", "[updater]", "[pseudolabel]", "[eval]"):
            assert section in out

    def test_no_command_shows_help(self, capsys):
        assert main([]) == 2
        assert "usage" in capsys.readouterr().out


class TestTrainShared:
    def test_smoke_writes_checkpoint(self, workspace, capsys):
        # the fixture already ran the command; check its artifacts
        arrays = load_checkpoint(workspace["ckpt"])
        assert "e_sh" in arrays
        shared, motion, blend = unpack_artifacts(arrays)
        assert len(shared.epoch_losses) == 2
        assert motion is None and blend is None

    def test_resume_continues_epoch_counter(self, workspace, tmp_path, capsys):
        ckpt = tmp_path / "resume.ckpt"
        ckpt.write_bytes(workspace["ckpt"].read_bytes())
        assert main(["train-shared", "--config", str(workspace["cfg"]),
                     "--out", str(ckpt), "--synthetic", "2", "--resume"]) == 0
        out = capsys.readouterr().out
        assert "epoch 3:" in out and "epoch 4:" in out
        assert "epoch 1:" not in out
        shared, _, _ = unpack_artifacts(load_checkpoint(ckpt))
        assert len(shared.epoch_losses) == 4

    def test_resume_without_checkpoint_fails(self, workspace, tmp_path, capsys):
        assert main(["train-shared", "--config", str(workspace["cfg"]),
                     "--out", str(tmp_path / "void.ckpt"),
                     "--synthetic", "1", "--resume"]) == 1
        assert "ERROR:" in capsys.readouterr().err

    def test_invalid_config_key_named(self, tmp_path, capsys):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[learner]\nshared_lrr = 0.1\n")
        assert main(["train-shared", "--config", str(cfg),
                     "--out", str(tmp_path / "x.ckpt"), "--synthetic", "1"]) == 1
        err = capsys.readouterr().err
        assert err.startswith("ERROR:") and "shared_lrr" in err

    def test_no_training_data(self, tmp_path, capsys):
        assert main(["train-shared", "--out", str(tmp_path / "x.ckpt")]) == 1
        assert "no training data" in capsys.readouterr().err


class TestTrack:
    def run_track(self, ws, out, extra=()):
        return main(["track", "--config", str(ws["cfg"]),
                     "--checkpoint", str(ws["ckpt"]),
                     "--frames", str(ws["frames"]), "--gt", str(ws["gt"]),
                     "--out", str(out), *extra])

    def test_results_file_and_determinism(self, workspace, tmp_path, capsys):
        out1, out2 = tmp_path / "r1.txt", tmp_path / "r2.txt"
        assert self.run_track(workspace, out1) == 0
        assert self.run_track(workspace, out2) == 0
        assert out1.read_bytes() == out2.read_bytes()
        entries = read_results(out1)
        assert [i for i, _ in entries] == list(range(workspace["n_frames"]))

    def test_dump_attention(self, workspace, tmp_path):
        out = tmp_path / "r.txt"
        dump = tmp_path / "maps"
        assert self.run_track(workspace, out, ("--dump-attention", str(dump))) == 0
        files = sorted(dump.glob("*.attn"))
        assert len(files) == workspace["n_frames"] - 1
        amap = load_attention(files[0])
        assert np.isfinite(amap.numpy()).all()

    def test_missing_checkpoint(self, workspace, tmp_path, capsys):
        rc = main(["track", "--config", str(workspace["cfg"]),
                   "--checkpoint", str(tmp_path / "void.ckpt"),
                   "--frames", str(workspace["frames"]),
                   "--gt", str(workspace["gt"]), "--out", str(tmp_path / "r.txt")])
        assert rc == 1
        err = capsys.readouterr().err
        assert err.startswith("ERROR:") and "not found" in err


class TestPseudolabel:
    def write_flows(self, directory, flows):
        from difftrack.formats import save_flow

        directory.mkdir(parents=True, exist_ok=True)
        for i, flow in enumerate(flows):
            save_flow(directory / f"{i:06d}.flow", flow)

    def test_single_video_and_determinism(self, tmp_path, capsys):
        self.write_flows(tmp_path / "flows", square_flow_video())
        out1, out2 = tmp_path / "p1.txt", tmp_path / "p2.txt"
        for out in (out1, out2):
            assert main(["pseudolabel", "--flows", str(tmp_path / "flows"),
                         "--out", str(out)]) == 0
        assert out1.read_bytes() == out2.read_bytes()
        boxes, qualities = read_pseudolabels(out1)
        assert len(boxes) == 5
        assert all(0.0 <= q <= 1.0 for q in qualities)

    def test_per_video_directories_with_jobs(self, tmp_path):
        for name, seed in (("a", 3), ("b", 4)):
            self.write_flows(tmp_path / "flows" / name,
                             square_flow_video(speed=seed))
        out = tmp_path / "labels"
        assert main(["pseudolabel", "--flows", str(tmp_path / "flows"),
                     "--out", str(out), "--jobs", "2"]) == 0
        assert sorted(p.name for p in out.glob("*.txt")) == ["a.txt", "b.txt"]

    def test_empty_directory_fails(self, tmp_path, capsys):
        (tmp_path / "flows").mkdir()
        assert main(["pseudolabel", "--flows", str(tmp_path / "flows"),
                     "--out", str(tmp_path / "p.txt")]) == 1
        assert "ERROR:" in capsys.readouterr().err


class TestEval:
    def echo_setup(self, tmp_path, n_sequences=2, n_frames=12):
        res_dir, gt_dir = tmp_path / "results", tmp_path / "gt"
        res_dir.mkdir(), gt_dir.mkdir()
        rng = np.random.default_rng(7)
        from difftrack.core import BoundingBox

        for s in range(n_sequences):
            boxes = [BoundingBox(10 + rng.uniform(0, 30), 10 + rng.uniform(0, 30),
                                 8 + rng.uniform(0, 10), 8 + rng.uniform(0, 10))
                     for _ in range(n_frames)]
            write_results(res_dir / f"seq{s}.txt", list(enumerate(boxes)))
            (gt_dir / f"seq{s}.txt").write_text(
                "".join(f"{b.x:.2f},{b.y:.2f},{b.w:.2f},{b.h:.2f}\n" for b in boxes))
        return res_dir, gt_dir

    def test_echo_report(self, tmp_path, capsys):
        res_dir, gt_dir = self.echo_setup(tmp_path)
        assert main(["eval", "--results", str(res_dir), "--gt", str(gt_dir)]) == 0
        out = capsys.readouterr().out
        assert "suc: 0.9524" in out
        assert "rob: 0.0000" in out
        assert "fps: n/a" in out

    def test_deterministic_output(self, tmp_path, capsys):
        res_dir, gt_dir = self.echo_setup(tmp_path)
        argv = ["eval", "--results", str(res_dir), "--gt", str(gt_dir), "--jobs", "2"]
        assert main(argv) == 0
        first = capsys.readouterr().out
        assert main(argv) == 0
        assert capsys.readouterr().out == first

    def test_vot_protocol_orders_report(self, tmp_path, capsys):
        res_dir, gt_dir = self.echo_setup(tmp_path)
        assert main(["eval", "--results", str(res_dir), "--gt", str(gt_dir),
                     "--protocol", "vot"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[1].startswith("acc:")

    def test_length_mismatch_diagnosed(self, tmp_path, capsys):
        res_dir, gt_dir = self.echo_setup(tmp_path)
        gt_file = gt_dir / "seq0.txt"
        gt_file.write_text("".join(gt_file.read_text().splitlines(True)[:-1]))
        assert main(["eval", "--results", str(res_dir), "--gt", str(gt_dir)]) == 1
        err = capsys.readouterr().err
        assert err.startswith("ERROR:") and "seq0" in err


class TestPlot:
    def test_curve_figures_deterministic(self, tmp_path, capsys):
        res_dir, gt_dir = TestEval().echo_setup(tmp_path)
        argv = ["plot",
                "--results", str(res_dir / "seq0.txt"), str(res_dir / "seq1.txt"),
                "--gt", str(gt_dir / "seq0.txt"), str(gt_dir / "seq1.txt"),
                "--out", str(tmp_path / "figs")]
        assert main(argv) == 0
        success = (tmp_path / "figs" / "success.png").read_bytes()
        precision = (tmp_path / "figs" / "precision.png").read_bytes()
        assert success[:8] == b"\x89PNG\r\n\x1a\n"
        assert main(argv) == 0
        assert (tmp_path / "figs" / "success.png").read_bytes() == success
        assert (tmp_path / "figs" / "precision.png").read_bytes() == precision

    def test_attention_overlay(self, workspace, tmp_path):
        dump = tmp_path / "maps"
        out = tmp_path / "r.txt"
        assert TestTrack().run_track(workspace, out, ("--dump-attention", str(dump))) == 0
        attn = sorted(dump.glob("*.attn"))[0]
        frame = sorted(workspace["frames"].glob("*.png"))[1]
        overlay = tmp_path / "overlay.png"
        assert main(["plot", "--attention", str(attn), "--frame", str(frame),
                     "--box", "10,10,16,16", "--out", str(overlay)]) == 0
        assert overlay.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_mismatched_curve_lists(self, tmp_path, capsys):
        res_dir, gt_dir = TestEval().echo_setup(tmp_path)
        assert main(["plot", "--results", str(res_dir / "seq0.txt"),
                     "--gt", "--out", str(tmp_path / "figs")]) == 1
        assert "ERROR:" in capsys.readouterr().err
