import os
import sys

import streamlit as st

st.set_page_config(page_title="About • One-Run Audit", page_icon="ℹ️", layout="wide", initial_sidebar_state="collapsed")

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from lib.report import CAVEATS
from lib.ui_display import render_nav

render_nav()

st.markdown("""
<div class="audit-banner" style="text-align:left;">
  <h2>How it works</h2>
  <ol>
    <li>Split a synthetic pool into canaries, non-auditing training examples and a holdout set.</li>
    <li>Pick which canaries are trained on (half of them, or one per set of K).</li>
    <li>Train once with DP-SGD, or release through a randomized-response / Gaussian oracle.</li>
    <li>Score every canary against the final release only: logit margin, negated loss, or the
        quantile score q = Phi((s - mu) / sigma) from a regressor trained on the holdout.</li>
    <li>Guess the most confident canaries, count correct guesses and convert the tally into an
        epsilon lower bound, sweeping the number of guesses in steps of 10.</li>
  </ol>
</div>
""", unsafe_allow_html=True)

st.markdown("### Caveats")
for text in CAVEATS:
    st.markdown(f"- {text}")
