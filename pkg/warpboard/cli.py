"""Command-line entry point: ``python -m warpboard <command>``."""
from __future__ import annotations

from dataclasses import dataclass, replace
import functools
import json
import logging
from pathlib import Path

import click
import numpy as np
import torch

from .config import AppConfig, dump_config, load_config
from .data import ingest, load_dataset, load_image, make_grid, save_image
from .editing import edit as render_edit
from .editing import invert, load_direction, multiview_set, pivotal_tune, reference_style_synthesize
from .features.views import load_views, resolve_views
from .geometry import Pose, pose_from_record, relative_pose
from .losses import default_extractors
from .metrics import evaluate
from .pipeline import WarpPipeline
from .selfcheck import run_selfcheck
from .training import (
    CHECKPOINT_FILES,
    load_models,
    save_models,
    synthetic_dataset,
    train_encoder,
    train_svinet,
)
from .warping import forward_warp

logger = logging.getLogger("warpboard")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


@dataclass
class CliState:
    cfg: AppConfig
    seed: int
    device: torch.device


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValueError, FileNotFoundError, RuntimeError) as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


def _seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed)


def _read_pose(path: str | Path) -> tuple[Pose, object]:
    """A single 25-float pose record stored as whitespace-separated text."""
    values = np.loadtxt(path, dtype=np.float64).reshape(-1)
    return pose_from_record(values)


def _input_pose(state: CliState, yaw: float, pitch: float, pose_file: str | None) -> Pose:
    if pose_file is not None:
        return _read_pose(pose_file)[0]
    return state.cfg.camera.pose(yaw, pitch)


def _load_pipeline(state: CliState, checkpoints: str | Path, *, with_svinet: bool = True) -> WarpPipeline:
    ckpt = Path(checkpoints)
    pipeline = state.cfg.build_pipeline()
    modules = {"generator": pipeline.generator, "encoder": pipeline.encoder}
    if with_svinet:
        modules["svinet"] = pipeline.svinet
    for name, module in modules.items():
        load_models(ckpt / CHECKPOINT_FILES[name], {name: module})
    for module in (pipeline.generator, pipeline.encoder, pipeline.svinet):
        module.to(state.device).eval().requires_grad_(False)
    return pipeline


def _training_records(state: CliState, pipeline: WarpPipeline, data: str | None, synthetic: int):
    if data is not None:
        manifest = ingest(data)
        records = load_dataset(manifest.split("train"), state.cfg.camera.resolution)
        logger.info("loaded %d training images from %s", len(records), data)
        return records
    logger.info("no --data given: rendering %d synthetic training images", synthetic)
    return synthetic_dataset(
        pipeline.generator, state.cfg.camera, synthetic,
        cfg=state.cfg.train, seed=state.seed + 10_000, sampling=state.cfg.sampling,
    )


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="TOML config file.")
@click.option("--seed", type=int, default=None, help="Global seed (overrides train.seed and editing.seed).")
@click.option(
    "--log-level",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    default="INFO",
    show_default=True,
)
@click.option("--set", "overrides", multiple=True, metavar="SECTION.KEY=VALUE", help="Config override, repeatable.")
@click.option("--device", default="cpu", show_default=True)
@click.pass_context
@_handle_errors
def main(ctx: click.Context, config_path, seed, log_level, overrides, device) -> None:
    """WarpBoard: single-image novel views by 3D GAN inversion, warping and inpainting."""
    logging.basicConfig(level=getattr(logging, log_level.upper()), format=LOG_FORMAT)
    cfg = load_config(config_path, overrides)
    if seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=seed), editing=replace(cfg.editing, seed=seed))
    cfg.check()
    _seed_everything(cfg.train.seed)
    ctx.obj = CliState(cfg, cfg.train.seed, torch.device(device))


@main.command("train-encoder")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--data", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--synthetic", type=int, default=64, show_default=True, help="Synthetic images when --data is absent.")
@click.option("--generator", "generator_ckpt", type=click.Path(dir_okay=False), default=None)
@click.option("--iterations", type=int, default=None)
@click.option("--resume", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_obj
@_handle_errors
def train_encoder_cmd(state: CliState, out_dir, data, synthetic, generator_ckpt, iterations, resume) -> None:
    """Fit the inversion encoder against a frozen generator."""
    cfg = state.cfg
    if iterations is not None:
        cfg = replace(cfg, train=replace(cfg.train, encoder_iterations=iterations))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pipeline = cfg.build_pipeline()
    if generator_ckpt is not None:
        load_models(generator_ckpt, {"generator": pipeline.generator})
    pipeline.generator.to(state.device)
    pipeline.encoder.to(state.device)
    save_models(out / CHECKPOINT_FILES["generator"], {"generator": pipeline.generator}, {"config": cfg.to_dict()})

    records = _training_records(state, pipeline, data, synthetic)
    run = train_encoder(
        records, pipeline.generator, pipeline.encoder, cfg.train,
        camera=cfg.camera, sampling=cfg.sampling, weights=cfg.losses, extractors=default_extractors(),
        checkpoint_dir=out, resume=resume, config_snapshot=cfg.to_dict(),
    )
    save_models(out / CHECKPOINT_FILES["encoder"], {"encoder": run.encoder}, {"config": cfg.to_dict()})
    run.history.to_csv(out / "encoder_history.csv", index=False)
    dump_config(cfg, out / "config.toml")
    click.echo(f"encoder saved to {out / CHECKPOINT_FILES['encoder']}")


@main.command("train-svinet")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--checkpoints", type=click.Path(exists=True, file_okay=False), required=True,
              help="Directory holding generator.wbck and encoder.wbck.")
@click.option("--data", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--synthetic", type=int, default=64, show_default=True)
@click.option("--iterations", type=int, default=None)
@click.option("--resume", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--no-modulation", is_flag=True, help="Ablation: styles fixed to ones.")
@click.option("--no-consistency", is_flag=True, help="Ablation: drop the latent consistency term.")
@click.option("--no-symmetry", is_flag=True, help="Ablation: zero the mirrored input.")
@click.option("--no-synth", is_flag=True, help="Ablation: real data only.")
@click.pass_obj
@_handle_errors
def train_svinet_cmd(
    state: CliState, out_dir, checkpoints, data, synthetic, iterations, resume,
    no_modulation, no_consistency, no_symmetry, no_synth,
) -> None:
    """Train the inpainting network with the re-warp strategy and synthetic pairs."""
    cfg = state.cfg
    train = replace(
        cfg.train,
        svinet_iterations=iterations or cfg.train.svinet_iterations,
        use_modulation=cfg.train.use_modulation and not no_modulation,
        use_consistency_loss=cfg.train.use_consistency_loss and not no_consistency,
        use_symmetry=cfg.train.use_symmetry and not no_symmetry,
        use_synth_data=cfg.train.use_synth_data and not no_synth,
    )
    cfg = replace(cfg, train=train)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pipeline = _load_pipeline(state, checkpoints, with_svinet=False)
    pipeline.svinet.to(state.device).train().requires_grad_(True)
    discriminator = cfg.build_discriminator().to(state.device)

    records = _training_records(state, pipeline, data, synthetic) if train.use_real_data else []
    run = train_svinet(
        records, pipeline, discriminator, train,
        weights=cfg.losses, extractors=default_extractors(),
        checkpoint_dir=out, resume=resume, config_snapshot=cfg.to_dict(),
    )
    save_models(
        out / CHECKPOINT_FILES["svinet"],
        {"svinet": run.svinet, "discriminator": run.discriminator},
        {"config": cfg.to_dict()},
    )
    run.history.to_csv(out / "svinet_history.csv", index=False)
    dump_config(cfg, out / "config.toml")
    click.echo(f"inpainting network saved to {out / CHECKPOINT_FILES['svinet']}")


@main.command()
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoints", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--yaw", type=float, default=0.0, show_default=True, help="Input view yaw (rad).")
@click.option("--pitch", type=float, default=0.0, show_default=True, help="Input view pitch (rad).")
@click.option("--pose-file", type=click.Path(exists=True, dir_okay=False), default=None,
              help="25-float pose record of the input view (overrides --yaw/--pitch).")
@click.option("--views", default=None, help="Comma-separated view presets; default all.")
@click.option("--reference", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Reference image: render the input in the reference's view and style.")
@click.option("--reference-yaw", type=float, default=0.0, show_default=True)
@click.option("--reference-pitch", type=float, default=0.0, show_default=True)
@click.option("--reference-pose-file", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.pass_obj
@_handle_errors
def synthesize(
    state: CliState, image, checkpoints, yaw, pitch, pose_file, views,
    reference, reference_yaw, reference_pitch, reference_pose_file, out_path,
) -> None:
    """Render novel views of one image as a grid (input row, then one row per view).

    With ``--reference`` the grid is a single row: input, reference, then the
    intermediates of the source moved into the reference's camera and style.
    """
    pipeline = _load_pipeline(state, checkpoints)
    pose = _input_pose(state, yaw, pitch, pose_file)
    img = load_image(image, pipeline.resolution).unsqueeze(0).to(state.device)

    if reference is not None:
        if views is not None:
            raise ValueError("use either --views or --reference, not both")
        ref_pose = _input_pose(state, reference_yaw, reference_pitch, reference_pose_file)
        ref = load_image(reference, pipeline.resolution).unsqueeze(0).to(state.device)
        view = reference_style_synthesize(img, pose, ref, ref_pose, pipeline)
        row = [img[0], ref[0], view.recon_novel[0].clamp(-1, 1), view.warped.image[0], view.initial[0], view.inpainted[0]]
        save_image(make_grid([row]), out_path)
        click.echo(f"reference-style view written to {out_path}")
        return

    presets = load_views()
    chosen = resolve_views(views.split(",") if views else list(presets), presets)
    targets = [state.cfg.camera.pose(yaw + dy, pitch + dp) for dy, dp in chosen.values()]

    with torch.no_grad():
        results = pipeline.synthesize(img, pose, targets)
    rows = [[img[0]]]
    for view in results:
        rows.append([view.recon_novel[0].clamp(-1, 1), view.warped.image[0], view.initial[0], view.inpainted[0]])
    save_image(make_grid(rows), out_path)
    click.echo(f"{len(targets)} views ({', '.join(chosen)}) written to {out_path}")


@main.command()
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoints", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--direction", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Edit direction (.npy or text) shaped [levels, latent_dim].")
@click.option("--alpha", "alphas", type=float, multiple=True, default=(-1.0, 0.0, 1.0), show_default=True)
@click.option("--yaw", type=float, default=0.0, show_default=True)
@click.option("--pitch", type=float, default=0.0, show_default=True)
@click.option("--pose-file", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--n-views", type=int, default=None, help="Pseudo views for tuning (default editing.n_views).")
@click.option("--no-tune", is_flag=True, help="Skip pivotal tuning.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.pass_obj
@_handle_errors
def edit(state: CliState, image, checkpoints, direction, alphas, yaw, pitch, pose_file, n_views, no_tune, out_dir) -> None:
    """Invert, tune on pseudo multi-view data and render attribute edits."""
    cfg = state.cfg
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pipeline = _load_pipeline(state, checkpoints)
    pose = _input_pose(state, yaw, pitch, pose_file)
    img = load_image(image, pipeline.resolution).unsqueeze(0).to(state.device)
    gen_cfg = pipeline.generator.cfg
    delta = load_direction(direction, gen_cfg.n_levels, gen_cfg.latent_dim).to(state.device)

    with torch.no_grad():
        w_init = pipeline.encode(img)
    inv = invert(img, pose, pipeline.generator, pipeline.K, cfg.editing, w_init=w_init, sampling=cfg.sampling)
    inv.history.to_csv(out / "invert_history.csv", index=False)
    np.save(out / "w_opt.npy", inv.w[0].cpu().numpy())

    generator = pipeline.generator
    if not no_tune:
        n = cfg.editing.n_views if n_views is None else n_views
        views = multiview_set(
            img, pose, pipeline, n, rng=np.random.default_rng(cfg.editing.seed), train_cfg=cfg.train
        )
        tuned = pivotal_tune(
            generator, inv.w, img, pose, views, pipeline.K, cfg.editing,
            noise=inv.noise, perceptual=default_extractors().perceptual, sampling=cfg.sampling,
        )
        tuned.history.to_csv(out / "tune_history.csv", index=False)
        generator = tuned.generator

    presets = load_views()
    targets = [pose] + [cfg.camera.pose(yaw + dy, pitch + dp) for dy, dp in presets.values()]
    rows = [[img[0]]]
    for alpha in alphas:
        row = [
            render_edit(inv.w, delta, alpha, c, pipeline.K, generator, pipeline.resolution,
                        noise=inv.noise, sampling=cfg.sampling)[0].clamp(-1, 1)
            for c in targets
        ]
        save_image(row[0], out / f"edit_{alpha:+.2f}.png")
        rows.append(row)
    save_image(make_grid(rows), out / "edit_grid.png")
    click.echo(f"inversion loss {inv.loss:.5f}; {len(alphas)} edits written to {out}")


@main.command()
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.argument("depth", type=click.Path(exists=True, dir_okay=False))
@click.option("--src-pose", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--dst-pose", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.pass_obj
@_handle_errors
def warp(state: CliState, image, depth, src_pose, dst_pose, out_dir) -> None:
    """Forward-warp IMAGE with z-depth DEPTH (.npy, HxW) between two pose records."""
    src, K = _read_pose(src_pose)
    dst, _ = _read_pose(dst_pose)
    img = load_image(image).unsqueeze(0)
    z = torch.from_numpy(np.load(depth).astype(np.float32))
    if z.dim() != 2 or tuple(z.shape) != tuple(img.shape[-2:]):
        raise ValueError(f"depth must be {tuple(img.shape[-2:])}, got {tuple(z.shape)}")
    result = forward_warp(img, z[None, None], relative_pose(src, dst), K, state.cfg.warp)
    out = Path(out_dir)
    save_image(result.image[0], out / "warped.png")
    save_image(result.mask[0].expand(3, -1, -1) * 2.0 - 1.0, out / "mask.png")
    np.save(out / "warped_depth.npy", result.depth[0, 0].numpy())
    click.echo(f"hole ratio {float(result.mask.mean()):.3f}; outputs in {out}")


@main.command("eval")
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--checkpoints", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--split", default="test", show_default=True, help="Manifest split to score ('all' for every record).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True, help="Per-view CSV report.")
@click.pass_obj
@_handle_errors
def eval_cmd(state: CliState, data, checkpoints, split, out_path) -> None:
    """Score held-out views and re-warp round trips."""
    pipeline = _load_pipeline(state, checkpoints)
    manifest = ingest(data)
    if split != "all":
        manifest = manifest.split(split)
    records = load_dataset(manifest, pipeline.resolution)
    if not records:
        raise ValueError(f"no records in split {split!r} of {data}")
    report = evaluate(records, pipeline, default_extractors().identity, seed=state.seed, train_cfg=state.cfg.train)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.frame.to_csv(out, index=False)
    out.with_suffix(".summary.json").write_text(json.dumps(report.summary, indent=2), encoding="utf-8")
    click.echo(report.frame.to_string(index=False))


@main.command()
@click.option("--demod-eps", type=float, default=None, help="Demodulation epsilon under test (default svinet.demod_eps).")
@click.option("--only", multiple=True, help="Run only the named checks.")
@click.pass_obj
def selfcheck(state: CliState, demod_eps, only) -> None:
    """Run the invariant suite; exits 1 when any check fails."""
    eps = state.cfg.svinet.demod_eps if demod_eps is None else demod_eps
    try:
        report = run_selfcheck(demod_eps=eps, seed=state.seed, names=list(only) or None)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--only") from exc
    click.echo(report.to_string(index=False))
    if not bool(report["passed"].all()):
        raise SystemExit(1)


__all__ = ["main", "CliState"]
