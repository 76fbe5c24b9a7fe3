import numpy as np
import pytest
import torch
from click.testing import CliRunner
from PIL import Image

from conftest import tiny_config
from warpboard.cli import main
from warpboard.config import dump_config
from warpboard.data import save_image, write_pose_file
from warpboard.geometry import orbit_pose, pose_to_record


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def config_file(tmp_path):
    return str(dump_config(tiny_config(), tmp_path / "tiny.toml"))


@pytest.fixture
def face(tmp_path):
    cfg = tiny_config()
    pipeline = cfg.build_pipeline()
    w = pipeline.generator.sample_latents(2, generator=torch.Generator().manual_seed(4))
    poses = [cfg.camera.pose(0.0, 0.0), cfg.camera.pose(0.3, 0.0)]
    with torch.no_grad():
        images, _ = pipeline.render(w[:1].expand(2, -1, -1), poses)
    data = tmp_path / "faces"
    for name, img in zip(["subj__a.png", "subj__b.png"], images):
        save_image(img.clamp(-1, 1), data / name)
    write_pose_file(data / "poses.txt", [(n, p, cfg.camera.intrinsics()) for n, p in
                                         zip(["subj__a.png", "subj__b.png"], poses)])
    return data


def _invoke(runner, config_file, *args):
    result = runner.invoke(main, ["--config", config_file, *args])
    assert result.exit_code == 0, result.output
    return result


@pytest.fixture
def trained(runner, config_file, tmp_path):
    out = tmp_path / "run"
    _invoke(runner, config_file, "train-encoder", "--out", str(out), "--synthetic", "2", "--iterations", "2")
    _invoke(runner, config_file, "train-svinet", "--out", str(out), "--checkpoints", str(out),
            "--synthetic", "2", "--iterations", "1")
    return out


def test_training_writes_checkpoints_and_histories(trained):
    for name in ("generator.wbck", "encoder.wbck", "svinet.wbck", "encoder_history.csv", "svinet_history.csv",
                 "config.toml"):
        assert (trained / name).exists(), name


def test_synthesize_is_reproducible(runner, config_file, trained, face, tmp_path):
    image = str(face / "subj__a.png")
    args = ["synthesize", image, "--checkpoints", str(trained), "--views", "front,left"]
    _invoke(runner, config_file, *args, "--out", str(tmp_path / "a.png"))
    _invoke(runner, config_file, *args, "--out", str(tmp_path / "b.png"))
    a = np.asarray(Image.open(tmp_path / "a.png"))
    b = np.asarray(Image.open(tmp_path / "b.png"))
    assert np.array_equal(a, b)
    # input row plus one row per view, four tiles wide, 2 px padding
    assert a.shape == (3 * 18 + 2, 4 * 18 + 2, 3)


def test_synthesize_rejects_unknown_view(runner, config_file, trained, face, tmp_path):
    result = runner.invoke(main, ["--config", config_file, "synthesize", str(face / "subj__a.png"),
                                  "--checkpoints", str(trained), "--views", "sideways",
                                  "--out", str(tmp_path / "x.png")])
    assert result.exit_code == 1
    assert "unknown view" in result.output


def test_missing_checkpoint_is_reported(runner, config_file, face, tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    result = runner.invoke(main, ["--config", config_file, "synthesize", str(face / "subj__a.png"),
                                  "--checkpoints", str(empty), "--out", str(tmp_path / "x.png")])
    assert result.exit_code == 1
    assert "checkpoint not found" in result.output


def test_eval_writes_report(runner, config_file, trained, face, tmp_path):
    out = tmp_path / "report.csv"
    _invoke(runner, config_file, "eval", "--data", str(face), "--checkpoints", str(trained), "--split", "all",
            "--out", str(out))
    assert out.exists()
    assert out.with_suffix(".summary.json").exists()
    assert "held_out" in out.read_text()


def test_edit_writes_outputs(runner, config_file, trained, face, tmp_path):
    np.save(tmp_path / "dir.npy", np.ones((4, 8), dtype=np.float32) * 0.1)
    out = tmp_path / "edit"
    _invoke(runner, config_file, "--set", "editing.invert_steps=3", "--set", "editing.tune_steps=2",
            "edit", str(face / "subj__a.png"), "--checkpoints", str(trained), "--direction",
            str(tmp_path / "dir.npy"), "--alpha", "0", "--alpha", "1", "--n-views", "1", "--out", str(out))
    for name in ("invert_history.csv", "tune_history.csv", "w_opt.npy", "edit_+0.00.png", "edit_+1.00.png",
                 "edit_grid.png"):
        assert (out / name).exists(), name
    assert np.load(out / "w_opt.npy").shape == (4, 8)


def test_identity_warp_keeps_the_image(runner, config_file, face, tmp_path):
    cfg = tiny_config()
    pose_path = tmp_path / "pose.txt"
    np.savetxt(pose_path, np.asarray(pose_to_record(orbit_pose(0.0, 0.0, 2.7), cfg.camera.intrinsics())))
    np.save(tmp_path / "depth.npy", np.full((16, 16), 2.7, dtype=np.float32))
    out = tmp_path / "warp"
    _invoke(runner, config_file, "warp", str(face / "subj__a.png"), str(tmp_path / "depth.npy"),
            "--src-pose", str(pose_path), "--dst-pose", str(pose_path), "--out", str(out))
    source = np.asarray(Image.open(face / "subj__a.png").convert("RGB"))
    warped = np.asarray(Image.open(out / "warped.png"))
    assert np.array_equal(source, warped)
    assert np.asarray(Image.open(out / "mask.png")).max() == 0
    assert np.load(out / "warped_depth.npy").shape == (16, 16)


def test_warp_rejects_wrong_depth_shape(runner, config_file, face, tmp_path):
    pose_path = tmp_path / "pose.txt"
    np.savetxt(pose_path, np.asarray(pose_to_record(orbit_pose(0.0, 0.0, 2.7), tiny_config().camera.intrinsics())))
    np.save(tmp_path / "depth.npy", np.ones((8, 8), dtype=np.float32))
    result = runner.invoke(main, ["--config", config_file, "warp", str(face / "subj__a.png"),
                                  str(tmp_path / "depth.npy"), "--src-pose", str(pose_path),
                                  "--dst-pose", str(pose_path), "--out", str(tmp_path / "w")])
    assert result.exit_code == 1
    assert "depth must be" in result.output


def test_selfcheck_exit_codes(runner, config_file):
    ok = runner.invoke(main, ["--config", config_file, "selfcheck", "--only", "loss_weight_defaults"])
    assert ok.exit_code == 0, ok.output
    bad = runner.invoke(main, ["--config", config_file, "selfcheck", "--demod-eps", "-1",
                               "--only", "demodulation_closed_form"])
    assert bad.exit_code == 1
    assert "False" in bad.output


def test_synthesize_with_reference(runner, config_file, trained, face, tmp_path):
    out = tmp_path / "ref.png"
    _invoke(runner, config_file, "synthesize", str(face / "subj__a.png"), "--checkpoints", str(trained),
            "--reference", str(face / "subj__b.png"), "--reference-yaw", "0.3", "--out", str(out))
    grid = np.asarray(Image.open(out))
    assert grid.shape == (18 + 2, 6 * 18 + 2, 3)

    both = runner.invoke(main, ["--config", config_file, "synthesize", str(face / "subj__a.png"),
                                "--checkpoints", str(trained), "--reference", str(face / "subj__b.png"),
                                "--views", "front", "--out", str(tmp_path / "x.png")])
    assert both.exit_code == 1
    assert "not both" in both.output


def test_selfcheck_rejects_unknown_name(runner, config_file):
    result = runner.invoke(main, ["--config", config_file, "selfcheck", "--only", "no_such_check"])
    assert result.exit_code == 2
    assert "no_such_check" in result.output
