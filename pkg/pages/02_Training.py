# pages/02_Training.py
from pathlib import Path

import pandas as pd
import streamlit as st

from warpboard.data import ManifestError, ingest
from warpboard.metrics import REPORT_COLUMNS
from warpboard.plots import loss_curves, metrics_bars
from warpboard.training import HISTORY_COLUMNS
from warpboard.ui import apply_global_theme

st.set_page_config(page_title="Entrenamiento", page_icon="📉", layout="wide")
apply_global_theme()
st.title("📉 Entrenamiento — curvas de pérdida")


@st.cache_data(show_spinner=False)
def load_history(path: str, mtime: float) -> pd.DataFrame:
    return pd.read_csv(path)


with st.sidebar:
    st.subheader("Parámetros")
    run_dir = st.text_input("Directorio del run", value="runs/latest")
    smooth = st.slider("Suavizado (iteraciones)", 1, 500, 50)
    report_path = st.text_input("Reporte de evaluación (CSV)", value="", help="Salida de `python -m warpboard eval`.")
    data_dir = st.text_input("Dataset (carpeta con poses)", value="", help="Imágenes + poses.txt o dataset.json.")

root = Path(run_dir)
files = {"Encoder": root / "encoder_history.csv", "SVINet": root / "svinet_history.csv"}
available = {name: p for name, p in files.items() if p.exists()}
if not available and not report_path and not data_dir:
    st.info("No hay historiales en ese directorio. Ejecutá `python -m warpboard train-encoder --out <dir>` primero.")
    st.stop()

tabs = st.tabs(list(available)) if available else []
for tab, (name, path) in zip(tabs, available.items()):
    with tab:
        hist = load_history(str(path), path.stat().st_mtime)
        if hist.empty:
            st.warning("Historial vacío."); continue
        if name == "SVINet":
            cols = [c for c in HISTORY_COLUMNS if c != "iteration" and c in hist.columns]
            chosen = st.multiselect("Términos", cols, default=["total", "d_loss"], key=f"terms_{name}")
        else:
            chosen = ["loss"]
        st.plotly_chart(loss_curves(hist, chosen, smooth=smooth), use_container_width=True)

        last = hist.tail(smooth).mean(numeric_only=True)
        first = hist.head(smooth).mean(numeric_only=True)
        metric_col = "loss" if name == "Encoder" else "total"
        c1, c2, c3 = st.columns(3)
        c1.metric("Iteraciones", f"{int(hist['iteration'].max()) + 1:,}")
        c2.metric("Pérdida inicial", f"{first[metric_col]:.4f}")
        c3.metric("Pérdida final", f"{last[metric_col]:.4f}", f"{last[metric_col] / first[metric_col] - 1:+.1%}")
        st.dataframe(hist.tail(50), use_container_width=True)

if data_dir:
    st.subheader("Dataset")
    try:
        manifest = ingest(data_dir)
    except (FileNotFoundError, ManifestError) as exc:
        st.error(str(exc))
    else:
        frame = manifest.to_frame()
        c1, c2 = st.columns(2)
        c1.metric("Imágenes con pose", f"{len(frame):,}")
        c2.metric("Rango de yaw (rad)", f"{frame['yaw'].min():+.2f} … {frame['yaw'].max():+.2f}" if len(frame) else "—")
        if len(frame):
            st.bar_chart(frame["split"].value_counts())
        st.dataframe(frame, use_container_width=True)

if report_path:
    report_file = Path(report_path)
    if not report_file.exists():
        st.warning(f"No existe {report_file}.")
        st.stop()
    report = load_history(str(report_file), report_file.stat().st_mtime)
    st.subheader("Evaluación")
    metric = st.selectbox("Métrica", [c for c in REPORT_COLUMNS[3:] if c in report.columns])
    st.plotly_chart(metrics_bars(report, metric), use_container_width=True)
    summary_file = report_file.with_suffix(".summary.json")
    if summary_file.exists():
        st.json(summary_file.read_text(encoding="utf-8"))
