"""
One-Run Privacy Auditing Library

Canary guessing games, membership scores and empirical epsilon lower bounds
for mechanisms audited from a single release.
"""

__version__ = "0.2.0"
