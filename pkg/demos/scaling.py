"""How the offline phase grows with the state dimension.

Times one kernel recursion (one direction, 20 pieces) on random stable
systems of increasing size and fits ``time ~ n^p`` on a log-log scale.  At
these sizes the per-step Python overhead is a large share of the cost, so the
fitted exponent sits well below the cubic cost of the matrix algebra.

    python3 demos/scaling.py
"""
from safereach.cli import cmd_bench_scaling

res = cmd_bench_scaling([2, 4, 6, 8, 12, 16, 24], repetitions=3, seed=0)
for row in res["results"]:
    print(f"n = {row['n']:>3}: median {row['median'] * 1e3:8.1f} ms")
print(f"fitted exponent p = {res['exponent']:.2f}")
