"""
Interactive estimator: tally in, epsilon lower bound out.
"""

import os
import sys

import numpy as np
import plotly.graph_objects as go
import streamlit as st

st.set_page_config(page_title="Estimator • One-Run Audit", page_icon="🧮", layout="wide", initial_sidebar_state="collapsed")

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from lib.estimator import eps_lower_bound
from lib.schemas import AuditOutcome
from lib.ui_display import render_nav


def plot_bound_vs_correct(k: int, K: int, alpha: float, current: int):
    """Lower bound for every possible number of correct guesses at fixed k."""
    correct = np.arange(0, k + 1)
    bounds = [eps_lower_bound(AuditOutcome(k=k, c=int(c), K=K, alpha=alpha)).eps for c in correct]

    fig = go.Figure()
    fig.add_trace(go.Scatter(x=correct, y=bounds, mode="lines", name="eps lower bound", line=dict(color="#A882DD")))
    fig.add_trace(go.Scatter(
        x=[current], y=[bounds[current]], mode="markers", name="this tally",
        marker=dict(size=12, color="#2ecc71"),
    ))
    fig.update_layout(
        title=f"Bound vs correct guesses (k={k}, K={K}, alpha={alpha})",
        height=360,
        xaxis_title="correct guesses c",
        yaxis_title="epsilon lower bound",
    )
    return fig


render_nav()
st.title("🧮 Epsilon Estimator")
st.markdown("Convert a guess tally into the largest epsilon it rules out.")

col1, col2, col3, col4 = st.columns(4)
with col1:
    k = st.number_input("Guesses k", min_value=0, max_value=5000, value=100, step=10)
with col2:
    c = st.number_input("Correct c", min_value=0, max_value=int(k), value=min(90, int(k)), step=1)
with col3:
    K = st.number_input("Arity K", min_value=2, max_value=1000, value=2, step=1)
with col4:
    alpha = st.select_slider("alpha", options=[0.01, 0.05, 0.1], value=0.05)

outcome = AuditOutcome(k=int(k), c=int(c), K=int(K), alpha=float(alpha))
bound = eps_lower_bound(outcome)

st.metric("eps lower bound", f"{bound.eps:.4f}",
          help=f"With confidence {1 - alpha:.0%} the mechanism is not eps-DP for any smaller eps")

if k > 0:
    st.plotly_chart(plot_bound_vs_correct(int(k), int(K), float(alpha), int(c)), use_container_width=True)
