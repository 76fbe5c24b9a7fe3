# pages/03_Editing.py
from dataclasses import replace

import numpy as np
import streamlit as st
import torch

from warpboard.data import to_uint8
from warpboard.editing import edit, invert, multiview_set, pivotal_tune
from warpboard.features.views import load_views
from warpboard.losses import default_extractors
from warpboard.plots import image_figure, loss_curves
from warpboard.ui import apply_global_theme, demo_image, load_app_config, load_pipeline

st.set_page_config(page_title="Edición", page_icon="✏️", layout="wide")
apply_global_theme()
st.title("✏️ Edición — inversión + ajuste multivista")
st.caption("Optimiza el código latente, ajusta el generador con vistas sintéticas y aplica una dirección de edición.")

with st.sidebar:
    st.subheader("Parámetros")
    checkpoint_dir = st.text_input("Directorio de checkpoints", value="runs/latest")
    seed = st.number_input("Semilla de la cara", 0, 10_000, 3)
    invert_steps = st.number_input("Pasos de inversión", 10, 2000, 100, step=10)
    tune_steps = st.number_input("Pasos de ajuste", 0, 1000, 50, step=10)
    n_views = st.number_input("Vistas sintéticas", 0, 8, 4)
    direction_file = st.file_uploader("Dirección (.npy)", type=["npy"])
    alpha = st.slider("Alfa", -3.0, 3.0, 1.0, 0.1)
    run = st.button("Optimizar")

pipeline, _ = load_pipeline(checkpoint_dir)
cfg = load_app_config()
gen_cfg = pipeline.generator.cfg
image = demo_image(pipeline, int(seed), 0.0, 0.0)
pose = pipeline.camera.pose(0.0, 0.0)

if direction_file is not None:
    direction = torch.from_numpy(np.load(direction_file).astype(np.float32)).reshape(gen_cfg.n_levels, gen_cfg.latent_dim)
else:
    g = torch.Generator().manual_seed(1)
    direction = torch.randn(gen_cfg.n_levels, gen_cfg.latent_dim, generator=g) * 0.5
    st.caption("Sin dirección cargada: se usa una dirección aleatoria fija.")

if run:
    opt_cfg = replace(cfg.editing, invert_steps=int(invert_steps), tune_steps=max(1, int(tune_steps)))
    with st.spinner("Invirtiendo…"):
        with torch.no_grad():
            w_init = pipeline.encode(image)
        inv = invert(image, pose, pipeline.generator, pipeline.K, opt_cfg, w_init=w_init, sampling=pipeline.sampling)
    generator = pipeline.generator
    tune = None
    if tune_steps:
        with st.spinner("Ajustando el generador…"):
            views = multiview_set(image, pose, pipeline, int(n_views), rng=np.random.default_rng(opt_cfg.seed))
            tune = pivotal_tune(
                generator, inv.w, image, pose, views, pipeline.K, opt_cfg,
                noise=inv.noise, perceptual=default_extractors().perceptual, sampling=pipeline.sampling,
            )
            generator = tune.generator
    st.session_state["edit_state"] = (inv, generator, tune)

state = st.session_state.get("edit_state")
if state is None:
    st.plotly_chart(image_figure(image[0], "Entrada"), use_container_width=False)
    st.info("Pulsá **Optimizar** para invertir la imagen.")
    st.stop()

inv, generator, tune = state
c1, c2, c3 = st.columns(3)
c1.metric("Pérdida de inversión", f"{inv.loss:.5f}")
c2.metric("Pasos", inv.steps)
if tune is not None:
    c3.metric("L_G vista de entrada", f"{tune.loss_after:.5f}", f"{tune.loss_after - tune.loss_before:+.5f}")

presets = load_views()
cols = st.columns(len(presets) + 1)
cols[0].image(to_uint8(image[0]), caption="entrada", use_container_width=True)
for col, (name, (dy, dp)) in zip(cols[1:], presets.items()):
    out = edit(inv.w, direction, alpha, pipeline.camera.pose(dy, dp), pipeline.K, generator, pipeline.resolution,
               noise=inv.noise, sampling=pipeline.sampling)
    col.image(to_uint8(out[0].clamp(-1, 1)), caption=name, use_container_width=True)

hist = inv.history.rename(columns={"step": "iteration"})
st.plotly_chart(loss_curves(hist, ["loss"]), use_container_width=True)
