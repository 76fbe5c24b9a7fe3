from __future__ import annotations

import io

import numpy as np
from PIL import Image
import streamlit as st
import torch

from warpboard.data import to_uint8
from warpboard.features.views import load_views
from warpboard.plots import depth_figure, view_grid
from warpboard.ui import apply_global_theme, demo_image, load_pipeline

st.set_page_config(page_title="WarpBoard", page_icon="🎭", layout="wide")
apply_global_theme()


def _uploaded_image(upload, resolution: int) -> torch.Tensor:
    img = Image.open(io.BytesIO(upload.getvalue())).convert("RGB")
    img = img.resize((resolution, resolution), Image.Resampling.LANCZOS)
    arr = np.asarray(img, dtype=np.float32) / 127.5 - 1.0
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)


def main() -> None:
    st.title("WarpBoard — Novel views from a single image")
    st.caption("Invert, render depth, warp to each view and inpaint the occlusions.")

    with st.sidebar:
        st.header("Models")
        checkpoint_dir = st.text_input("Checkpoint directory", value="runs/latest")
        config_path = st.text_input("Config file (optional)", value="")
        st.header("Input")
        upload = st.file_uploader("Image", type=["png", "jpg", "jpeg"])
        seed = st.number_input("Demo seed", 0, 10_000, 0, help="Latent seed of the demo render when no image is uploaded.")
        yaw = st.slider("Input yaw (rad)", -0.6, 0.6, 0.0, 0.05)
        pitch = st.slider("Input pitch (rad)", -0.3, 0.3, 0.0, 0.05)
        presets = load_views()
        chosen = st.multiselect("Views", list(presets), default=list(presets))

    with st.spinner("Loading models..."):
        pipeline, loaded = load_pipeline(checkpoint_dir, config_path)
    if len(loaded) < 3:
        st.warning(f"Missing weights ({', '.join(sorted({'generator', 'encoder', 'svinet'} - set(loaded)))}); "
                   "results use randomly initialised networks.")

    R = pipeline.resolution
    image = _uploaded_image(upload, R) if upload is not None else demo_image(pipeline, int(seed), yaw, pitch)
    pose = pipeline.camera.pose(yaw, pitch)

    if not chosen:
        st.info("Pick at least one view.")
        return

    targets = [pipeline.camera.pose(yaw + presets[n][0], pitch + presets[n][1]) for n in chosen]
    with st.spinner("Synthesizing..."):
        with torch.no_grad():
            results = pipeline.synthesize(image, pose, targets)

    c1, c2, c3 = st.columns(3)
    c1.metric("Resolution", f"{R}×{R}")
    c2.metric("Views", len(results))
    c3.metric("Mean hole ratio", f"{np.mean([float(v.warped.mask.mean()) for v in results]):.1%}")

    tab_views, tab_steps, tab_depth = st.tabs(["Views", "Intermediates", "Depth"])
    with tab_views:
        cols = st.columns(len(results) + 1)
        cols[0].image(to_uint8(image[0]), caption="input", use_container_width=True)
        for col, name, view in zip(cols[1:], chosen, results):
            col.image(to_uint8(view.inpainted[0]), caption=name, use_container_width=True)

    with tab_steps:
        st.caption("GAN render · warped · holes · initial fill · inpainted")
        rows = [
            [view.recon_novel[0].clamp(-1, 1), view.warped.image[0], view.warped.mask[0].expand(3, -1, -1) * 2 - 1,
             view.initial[0], view.inpainted[0]]
            for view in results
        ]
        st.plotly_chart(view_grid(rows, chosen), use_container_width=True)

    with tab_depth:
        st.plotly_chart(depth_figure(results[0].depth[0], "Input-view z-depth"), use_container_width=True)


if __name__ == "__main__":
    main()
