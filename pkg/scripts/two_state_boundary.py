"""Ultimate-boundedness boundary of the two-state example as the variable bound grows.

The boundary approaches 1 / ||C (sI - A)^-1 E||_inf = 2 only as Q and the
multiplier scale become unbounded, so a finite bound shows up as a small gap.
"""

import argparse
import json

from conicbound.cli import sweep_boundary
from conicbound.config import LambdaGrid, SolverOptions, SweepSpec
from conicbound.problem import builtin_problem_dict, parse_problem


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--bounds", type=float, nargs="+", default=[1e2, 1e3, 1e4, 1e6])
    args = ap.parse_args()
    doc = builtin_problem_dict([[0, 1], [-2, -3]], [[0], [1]], [[0], [1]], [[1, 0]], [[0]],
                               uncertainty={"type": "norm_bounded", "gain": 1.0})
    problem = parse_problem(json.dumps(doc).encode())
    spec = SweepSpec(min=1.0, max=2.5, bisection_tol=0.005, condition="ultimate", grid=LambdaGrid())
    for bound in args.bounds:
        res = sweep_boundary(problem, spec, SolverOptions(var_bound=bound))
        print(f"var_bound {bound:8.0e}  boundary {res['boundary']:.4f}")


if __name__ == "__main__":
    main()
