# pages/01_Warp.py
import streamlit as st
import torch

from warpboard.data import to_uint8
from warpboard.features.views import DEFAULT_VIEWS, load_views, save_views
from warpboard.geometry import relative_pose
from warpboard.plots import depth_figure
from warpboard.ui import apply_global_theme, load_pipeline
from warpboard.warping import WarpConfig, forward_warp, initial_fill

st.set_page_config(page_title="Warp", page_icon="🌀", layout="wide")
apply_global_theme()
st.title("🌀 Warp — reproyección con profundidad")
st.caption("Renderiza una cara de prueba, calcula su profundidad y la proyecta a otra cámara.")

# ------- UI -------
with st.sidebar:
    st.subheader("Parámetros")
    checkpoint_dir = st.text_input("Directorio de checkpoints", value="runs/latest")
    seed = st.number_input("Semilla", 0, 10_000, 0)
    src_yaw = st.slider("Yaw origen (rad)", -0.6, 0.6, 0.0, 0.05)
    dst_yaw = st.slider("Yaw destino (rad)", -0.8, 0.8, 0.4, 0.05)
    dst_pitch = st.slider("Pitch destino (rad)", -0.4, 0.4, 0.0, 0.05)
    beta_scale = st.number_input("Escala beta (softmax)", 0.0, 100.0, 10.0, step=1.0)
    hole_threshold = st.number_input("Umbral de hueco", 0.001, 1.0, 0.05, step=0.01, format="%.3f")

    st.subheader("Vistas guardadas")
    views = load_views()
    new_view = st.text_input("Guardar destino como")
    if st.button("Guardar vista"):
        name = new_view.strip().lower()
        if name:
            views[name] = (float(dst_yaw), float(dst_pitch))
            save_views(views)
            st.rerun()
    for name, (yaw, pitch) in list(views.items()):
        if name in DEFAULT_VIEWS:
            continue
        if st.button(f"❌ {name} ({yaw:+.2f}, {pitch:+.2f})", key=f"rm_{name}"):
            views.pop(name)
            save_views(views)
            st.rerun()

pipeline, _ = load_pipeline(checkpoint_dir)
src = pipeline.camera.pose(src_yaw, 0.0)
dst = pipeline.camera.pose(dst_yaw, dst_pitch)
cfg = WarpConfig(far=pipeline.sampling.far, beta_scale=beta_scale, hole_threshold=hole_threshold)

with st.spinner("Renderizando…"):
    g = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        w = pipeline.generator.sample_latents(1, generator=g)
        image, depth = pipeline.render(w, src)
        target, _ = pipeline.render(w, dst)
        warped = forward_warp(image, depth, relative_pose(src, dst), pipeline.K, cfg)
        filled = initial_fill(warped, target)

visible = 1.0 - warped.mask
err = float(((warped.image - target).abs() * visible).sum() / (3 * visible.sum()).clamp_min(1.0))

c1, c2, c3 = st.columns(3)
c1.metric("Huecos", f"{float(warped.mask.mean()):.1%}")
c2.metric("Error medio visible", f"{err:.4f}")
c3.metric("Beta", f"{cfg.beta:.3f}")

cols = st.columns(5)
cols[0].image(to_uint8(image[0].clamp(-1, 1)), caption="origen", use_container_width=True)
cols[1].image(to_uint8(warped.image[0].clamp(-1, 1)), caption="warp", use_container_width=True)
cols[2].image(to_uint8(warped.mask[0].expand(3, -1, -1) * 2 - 1), caption="máscara", use_container_width=True)
cols[3].image(to_uint8(filled[0].clamp(-1, 1)), caption="relleno inicial", use_container_width=True)
cols[4].image(to_uint8(target[0].clamp(-1, 1)), caption="render destino", use_container_width=True)

col_a, col_b = st.columns(2)
col_a.plotly_chart(depth_figure(depth[0], "Profundidad origen"), use_container_width=True)
col_b.plotly_chart(depth_figure(warped.depth[0] + warped.mask[0] * float(depth.max()), "Profundidad proyectada"),
                   use_container_width=True)
