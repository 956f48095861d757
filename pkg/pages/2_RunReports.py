"""
Run report browser.

Lists run directories, shows aggregate and per-trial bounds, sweep curves and
the paired quantile comparison, and can launch a preset run.
"""

import os
import sys
from pathlib import Path

import streamlit as st

st.set_page_config(page_title="Runs • One-Run Audit", page_icon="📊", layout="wide", initial_sidebar_state="collapsed")

# Add lib to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from lib.config import PRESETS, get_preset, runs_dir
from lib.errors import AuditError
from lib.harness import run_experiment
from lib.report import CAVEATS, format_table, list_runs, load_result, summary_frame
from lib.ui_display import (
    display_aggregate_metrics,
    improvement_table,
    plot_method_bars,
    plot_nll_trace,
    plot_reference_curve,
    plot_sweep_curves,
    plot_trial_bounds,
    render_nav,
)


def launch_section(root: Path):
    """Form that runs a preset into the runs directory."""
    with st.expander("▶️ Run a preset", expanded=False):
        col1, col2, col3 = st.columns([2, 1, 1])
        with col1:
            preset = st.selectbox("Preset", sorted(PRESETS), index=sorted(PRESETS).index("rr-oracle"))
        with col2:
            trials = st.number_input("Trials", min_value=1, max_value=50, value=PRESETS[preset].get("trials", 5))
        with col3:
            seed = st.number_input("Base seed", min_value=0, value=0, step=1)

        if st.button("Run", type="primary"):
            try:
                config = get_preset(preset, trials=int(trials), base_seed=int(seed))
                out_dir = root / f"{preset}-seed{int(seed)}"
                with st.spinner(f"Running {preset}..."):
                    run_experiment(config, out_dir=out_dir)
                st.success(f"Wrote {out_dir}")
                st.session_state.selected_run = str(out_dir)
            except AuditError as e:
                st.error(f"Run failed: {e}")


def main():
    render_nav()
    st.title("📊 Audit Runs")

    root = Path(st.text_input("Runs directory", value=runs_dir()))
    launch_section(root)

    runs = list_runs(root)
    if not runs:
        st.info(f"No runs found under {root}. Run `python audit.py run --preset rr-oracle` or use the form above.")
        return

    labels = [str(p) for p in runs]
    default = labels.index(st.session_state.get("selected_run")) if st.session_state.get("selected_run") in labels else 0
    selected = st.selectbox("Run", labels, index=default)

    try:
        result = load_result(selected)
    except AuditError as e:
        st.error(str(e))
        return

    st.subheader(f"{result.config.name} ({result.config.mechanism.kind})")
    for note in CAVEATS + list(result.notes):
        st.caption(f"⚠️ {note}")

    display_aggregate_metrics(result)

    col1, col2 = st.columns(2)
    with col1:
        st.plotly_chart(plot_method_bars(result), use_container_width=True)
    with col2:
        st.plotly_chart(plot_trial_bounds(result), use_container_width=True)

    comparison = improvement_table(result)
    if not comparison.empty:
        st.markdown("#### Paired comparison of the quantile score")
        st.dataframe(comparison, use_container_width=True, hide_index=True)

    reference = plot_reference_curve(result)
    if reference is not None:
        st.plotly_chart(reference, use_container_width=True)

    st.divider()
    st.markdown("#### Per-trial detail")
    trial_index = st.selectbox("Trial", [t.trial for t in result.trials])
    record = next(t for t in result.trials if t.trial == trial_index)

    cols = st.columns(len(result.config.games.enabled))
    for column, game in zip(cols, result.config.games.enabled):
        with column:
            st.plotly_chart(plot_sweep_curves(record, game), use_container_width=True)

    nll = plot_nll_trace(record)
    if nll is not None:
        st.plotly_chart(nll, use_container_width=True)
    if record.sigma_clamps:
        st.warning(f"{record.sigma_clamps} predicted sigmas were clamped in this trial")

    with st.expander("Summary table"):
        st.dataframe(summary_frame(result), use_container_width=True, hide_index=True)
        st.code(format_table(result))


main()
