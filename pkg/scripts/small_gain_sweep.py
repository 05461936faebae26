"""Feasibility boundary of xdot = -x + p + w, |p| <= gain |x|, for both LMI conditions."""

import argparse
import json

from conicbound.config import LambdaGrid, SolverOptions, SweepSpec
from conicbound.cli import sweep_boundary
from conicbound.problem import builtin_problem_dict, parse_problem


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--tol", type=float, default=0.005)
    args = ap.parse_args()
    doc = builtin_problem_dict([[-1.0]], [[1.0]], [[1.0]], [[1.0]])
    problem = parse_problem(json.dumps(doc).encode())
    for condition in ("stability", "ultimate"):
        spec = SweepSpec(min=0.1, max=2.0, bisection_tol=args.tol, condition=condition, grid=LambdaGrid())
        res = sweep_boundary(problem, spec, SolverOptions())
        print(f"{condition:10s} boundary {res['boundary']:.4f}  ({len(res['rows'])} solves)")


if __name__ == "__main__":
    main()
