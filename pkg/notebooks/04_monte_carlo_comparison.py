"""Small Monte Carlo comparison of the proposed estimator with two comparators on Case II.

The full tables use 200 replicates (see tests/test_acceptance.py); this
uses 50 so it finishes in about two minutes. Run:
python notebooks/04_monte_carlo_comparison.py [reps] [jobs]
"""
import sys

from tvdml.simlab import ScenarioSpec, run_monte_carlo

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 50
jobs = int(sys.argv[2]) if len(sys.argv) > 2 else 1

# tree-structured propensity and prognostic shift; the no-dml comparator drops the centering
sc = ScenarioSpec(case="II", n=200, T=100, gamma=0.3, seed=5)
res = run_monte_carlo(sc, reps, methods=("proposed-known", "no-dml", "direct-dml-5"), jobs=jobs)
table = res.metrics.display()
print(table.to_string(index=False, float_format=lambda v: f"{v:.2f}"))
print("failures:", res.failure_counts())
