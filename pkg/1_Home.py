import os
import sys
from pathlib import Path

import pandas as pd
import streamlit as st

sys.path.insert(0, os.path.dirname(__file__))

from lib.config import PRESETS, runs_dir
from lib.errors import AuditError
from lib.report import list_runs, load_result
from lib.ui_display import render_nav

st.set_page_config(page_title="One-Run Audit", page_icon="🏠", layout="wide", initial_sidebar_state="collapsed")

render_nav()

# ===================== BANNER =====================
st.markdown("""
<div class="audit-banner">
  <h1>🛡️ One-Run Privacy Audit</h1>
  <p>Plant canaries, train once, guess who was in, and turn the guesses into
  an empirical lower bound on epsilon at 95% confidence.</p>
</div>
""", unsafe_allow_html=True)

# ===================== CARDS =====================
st.markdown("""
<div class="audit-cards">
  <div class="audit-card">
    <h3>🎯 Membership Game</h3>
    <p>Half the canaries are trained on. Guess +1 / -1 for the most confident ones.</p>
  </div>
  <div class="audit-card">
    <h3>🧩 Reconstruction Game</h3>
    <p>One of every K canaries is trained on. Guess which, or abstain.</p>
  </div>
  <div class="audit-card">
    <h3>📈 Quantile Score</h3>
    <p>A holdout regressor predicts each example's score spread, so every canary gets its own threshold.</p>
  </div>
</div>
""", unsafe_allow_html=True)

st.write("")
col1, col2 = st.columns(2)

# ===================== RECENT RUNS =====================
with col1:
    st.markdown("### Recent runs")
    rows = []
    for run in list_runs(Path(runs_dir())):
        try:
            result = load_result(run)
        except AuditError:
            continue
        best = max(result.aggregates, key=lambda row: row.eps_max, default=None)
        rows.append({
            "run": run.name,
            "mechanism": result.config.mechanism.kind,
            "trials": len(result.trials),
            "best method": best.method if best else "-",
            "mean eps_max": round(best.eps_max, 4) if best else None,
        })
    if rows:
        st.dataframe(pd.DataFrame(rows), use_container_width=True, hide_index=True)
    else:
        st.info("No runs yet. Try `python audit.py run --preset rr-oracle`.")

# ===================== PRESETS =====================
with col2:
    st.markdown("### Presets")
    st.dataframe(
        pd.DataFrame([
            {
                "preset": name,
                "mechanism": raw["mechanism"]["kind"],
                "m": raw["data"]["m"],
                "r": raw["data"].get("r", 0),
                "trials": raw.get("trials", 5),
            }
            for name, raw in PRESETS.items()
        ]),
        use_container_width=True,
        hide_index=True,
    )
