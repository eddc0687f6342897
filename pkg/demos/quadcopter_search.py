"""Searching for a quadcopter policy decomposition.

The quadcopter has 10 states and 4 inputs, which gives far too many
decompositions to enumerate. A genetic search over input-trees, guided by
the LQR value-error estimate, finds a cheap and nearly exact decomposition
in a few seconds. A short Pareto run then shows the trade-off between the
estimated value error and the compute cost.

Run with ``python3 demos/quadcopter_search.py``.
"""

import numpy as np

from poldec.enumeration import count_decompositions
from poldec.input_tree import undecomposed
from poldec.lqr_metrics import FitnessEvaluator
from poldec.search import GaConfig, ParetoConfig, run_ga, run_pareto
from poldec.systems import get_model


def main():
    model = get_model("quadcopter")
    print(f"states: {', '.join(model.state_names)}")
    print(f"inputs: {', '.join(model.input_names)}")
    total = count_decompositions(model.n, model.m).total
    print(f"possible decompositions: {total:,}\n")

    # The joint problem is exact but costs the full table.
    ev = FitnessEvaluator(model)
    print("undecomposed:", ev(undecomposed(model.n, model.m)))

    # Deterministic mode fixes the evaluation budget, so the run is reproducible.
    rep = run_ga(model, config=GaConfig(max_generations=300, seed=0, deterministic=True), evaluator=ev)
    print(f"\nGA best after {rep.steps} generations, {rep.unique_evaluations} unique trees:")
    print("  ", rep.best_tree.to_string())
    print("  ", rep.best_metrics)
    for node in rep.best_tree.nodes:
        names = [model.state_names[s] for s in node.states]
        inputs = [model.input_names[j] for j in node.inputs]
        print(f"   {'+'.join(inputs):>12} controls {', '.join(names)}")

    print("\nimprovements over the run:")
    for h in rep.history:
        print(f"   generation {h['step']:>4}  F = {h['best_F']:.3e}  {h['best_tree']}")

    # The Pareto front spans exact-but-expensive to cheap-but-approximate trees.
    front = run_pareto(model, config=ParetoConfig(max_generations=40, seed=0, deterministic=True), evaluator=ev)
    # Several trees can share one objective point; show one per point.
    rows = front.rows()
    print(f"\nPareto front, {len(rows)} members (F_err ascending):")
    seen = set()
    for row in rows:
        point = (row["F_err"], row["F_comp"])
        if point not in seen:
            seen.add(point)
            print(f"   F_err {row['F_err']:.3e}  F_comp {row['F_comp']:.3e}  {row['tree']}")
    F_comp = np.array([r["F_comp"] for r in rows])
    print(f"   F_comp spans {F_comp.min():.1e} to {F_comp.max():.1e}")


if __name__ == "__main__":
    main()
