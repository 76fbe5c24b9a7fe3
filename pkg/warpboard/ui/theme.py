"""Utilities for applying the WarpBoard global UI theme."""
from __future__ import annotations

import streamlit as st


CSS = """
<style>
main .block-container {
    padding-top: 1.25rem;
    padding-bottom: 1.25rem;
    max-width: 1400px;
}

section[data-testid="stSidebar"] > div {
    background-color: #161B22;
}

section[data-testid="stSidebar"] {
    min-width: 300px;
    max-width: 340px;
}

/* rendered views: keep pixels crisp at 64x64 */
[data-testid="stImage"] img {
    image-rendering: pixelated;
    border: 1px solid #30363D;
    border-radius: 8px;
}

[data-testid="stImage"] figcaption, [data-testid="caption"] {
    color: #8B949E;
    text-align: center;
}

.stButton button, .stDownloadButton button {
    border-radius: 6px !important;
}

.stButton button:hover, .stDownloadButton button:hover {
    box-shadow: 0 0 0 2px rgba(34, 211, 238, 0.45);
}

button[data-baseweb="tab"][aria-selected="true"] {
    color: #22D3EE;
}

[data-testid="metric-container"] {
    background-color: rgba(22, 27, 34, 0.7);
    border: 1px solid #30363D;
    border-radius: 12px;
    padding: 0.75rem;
}
</style>
"""


def apply_global_theme() -> None:
    """Inject the WarpBoard CSS."""
    st.markdown(CSS, unsafe_allow_html=True)
