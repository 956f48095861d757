"""
UI Display Helpers for the Audit Dashboard

Shared navigation bar and Plotly figures for browsing audit results in
Streamlit.
"""

from typing import List, Optional

import pandas as pd
import plotly.graph_objects as go
import streamlit as st

from .report import improvement_frame, summary_frame
from .schemas import AuditResult, TrialRecord


METHOD_COLORS = {
    "release": "#95a5a6",
    "margin": "#3498db",
    "loss": "#f39c12",
    "quantile": "#2ecc71",
}

THEME_CSS = """
<style>
[data-testid="stAppViewContainer"] { background:#564592; color:#F2F0FA; }
.audit-nav { display:flex; justify-content:center; gap:12px; margin:16px 0 22px; }
.audit-nav .stButton>button {
  background:rgba(255,255,255,0.10); color:#FFFFFF;
  border:1px solid rgba(255,255,255,0.30); border-radius:16px;
  padding:8px 20px; font-weight:600; font-size:15px;
}
.audit-nav .stButton>button:hover { background:rgba(255,255,255,0.20); }
.audit-banner {
  max-width:1000px; margin:0 auto 32px; padding:26px 24px;
  border-radius:20px; background:#A882DD; text-align:center;
  box-shadow:0 6px 20px rgba(0,0,0,.35);
}
.audit-banner h1 { color:#FFFFFF; margin-bottom:6px; }
.audit-banner p { color:#F2F0FA; font-size:1.05rem; margin:0 auto; max-width:760px; }
.audit-cards { display:flex; justify-content:center; gap:20px; flex-wrap:wrap; margin-top:32px; }
.audit-card {
  width:300px; padding:24px; border-radius:16px; text-align:left;
  background:rgba(255,255,255,0.12); box-shadow:0 4px 10px rgba(0,0,0,.25);
}
.audit-card h3 { color:#FFFFFF; margin:0 0 8px; }
.audit-card p { color:#E6E3F5; font-size:.95rem; margin:0; }
</style>
"""

NAV_PAGES = [
    ("🏠 Home", "1_Home.py"),
    ("📊 Runs", "pages/2_RunReports.py"),
    ("🧮 Estimator", "pages/3_Estimator.py"),
    ("ℹ️ About", "pages/4_About.py"),
]


def render_nav():
    """Apply the dashboard theme and draw the button row linking every page."""
    st.markdown(THEME_CSS, unsafe_allow_html=True)
    st.markdown('<div class="audit-nav">', unsafe_allow_html=True)
    columns = st.columns([1] * len(NAV_PAGES), gap="small")
    for column, (label, page) in zip(columns, NAV_PAGES):
        with column:
            if st.button(label, use_container_width=True):
                st.switch_page(page)
    st.markdown('</div>', unsafe_allow_html=True)


def _color(method: str) -> str:
    return METHOD_COLORS.get(method, "#A882DD")


def plot_method_bars(result: AuditResult):
    """Grouped bars of mean eps_or, eps_or_fdp and eps_max per method."""
    fig = go.Figure()
    for row in result.aggregates:
        values = [row.eps_or, row.eps_or_fdp, row.eps_max]
        fig.add_trace(go.Bar(
            name=row.method,
            x=["eps_or", "eps_or_fdp", "eps_max"],
            y=[v if v is not None else 0.0 for v in values],
            text=[f"{v:.3f}" if v is not None else "-" for v in values],
            textposition="outside",
            marker_color=_color(row.method),
            hovertemplate=f"<b>{row.method}</b><br>%{{x}}: %{{y:.4f}}<extra></extra>",
        ))

    if result.ground_truth:
        for game, eps in result.ground_truth.items():
            fig.add_hline(y=eps, line_dash="dot", annotation_text=f"true eps ({game})")

    fig.update_layout(
        barmode="group",
        title=f"Mean lower bounds over {len(result.trials)} trials",
        height=380,
        yaxis_title="epsilon lower bound",
    )
    return fig


def plot_trial_bounds(result: AuditResult):
    """eps_max per trial, one line per method, to show the pairing."""
    frame = summary_frame(result)
    frame = frame[frame["scope"] == "trial"]
    fig = go.Figure()
    for method, group in frame.groupby("method", sort=False):
        fig.add_trace(go.Scatter(
            x=group["trial"].astype(int),
            y=group["eps_max"],
            mode="lines+markers",
            name=method,
            line=dict(color=_color(method)),
        ))
    fig.update_layout(title="eps_max per trial", height=320, xaxis_title="trial", yaxis_title="eps_max")
    return fig


def plot_sweep_curves(record: TrialRecord, game: str):
    """Bound against guess budget for every method of one trial."""
    fig = go.Figure()
    for rec in record.methods:
        sweep = rec.binary_sweep if game == "binary" else rec.kary_sweep
        if sweep is None:
            continue
        fig.add_trace(go.Scatter(
            x=[p.budget for p in sweep.curve],
            y=[p.eps for p in sweep.curve],
            mode="lines+markers",
            name=rec.method,
            line=dict(color=_color(rec.method)),
            customdata=[[p.k, p.c] for p in sweep.curve],
            hovertemplate="budget %{x}<br>k=%{customdata[0]}, c=%{customdata[1]}<br>eps %{y:.4f}<extra></extra>",
        ))
    fig.update_layout(
        title=f"Trial {record.trial}: {game} game sweep",
        height=340,
        xaxis_title="guess budget",
        yaxis_title="epsilon lower bound",
    )
    return fig


def plot_nll_trace(record: TrialRecord) -> Optional[go.Figure]:
    if not record.regressor_nll_trace:
        return None
    fig = go.Figure()
    for key, trace in record.regressor_nll_trace.items():
        fig.add_trace(go.Scatter(y=trace, mode="lines", name=key))
    fig.update_layout(title="Regressor holdout NLL", height=300, xaxis_title="epoch", yaxis_title="mean NLL")
    return fig


def plot_reference_curve(result: AuditResult) -> Optional[go.Figure]:
    """Analytic (eps, delta) curve of the Gaussian canary mechanism with the audited bounds marked."""
    if not result.reference_curve:
        return None
    eps, delta = zip(*result.reference_curve)
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=list(eps), y=list(delta), mode="lines", name="analytic delta(eps)"))
    for row in result.aggregates:
        fig.add_vline(x=row.eps_max, line_dash="dot", line_color=_color(row.method),
                      annotation_text=f"{row.method} mean eps_max")
    fig.update_layout(title="Gaussian mechanism trade-off", height=320, xaxis_title="eps",
                      yaxis_title="delta", yaxis_type="log")
    return fig


def improvement_table(result: AuditResult) -> pd.DataFrame:
    """Mean paired difference and best ratio of quantile vs each baseline."""
    frame = improvement_frame(result)
    if frame.empty:
        return frame
    return frame.groupby("baseline", sort=False).agg(
        mean_difference=("difference", "mean"),
        max_ratio=("ratio", "max"),
        trials_better=("difference", lambda d: int((d > 0).sum())),
    ).reset_index()


def display_aggregate_metrics(result: AuditResult, methods: Optional[List[str]] = None):
    """One st.metric per method showing mean eps_max."""
    rows = [r for r in result.aggregates if methods is None or r.method in methods]
    columns = st.columns(max(len(rows), 1))
    for column, row in zip(columns, rows):
        with column:
            st.metric(f"{row.method} eps_max", f"{row.eps_max:.4f}", help=f"mean over {row.trials} trials")
