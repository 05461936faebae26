"""Monte-Carlo validation of certificates on the seeded random suite."""

import argparse

import numpy as np

from conicbound.certificate import AnalysisCertificate, decay_rate
from conicbound.config import SimulationConfig
from conicbound.sdp import decay_certificate_search
from conicbound.simulate import monte_carlo
from conicbound.suite import random_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cases", type=int, default=50)
    ap.add_argument("--runs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-horizon", type=float, default=200.0)
    args = ap.parse_args()
    print("case  class          decay    horizon  invariance  limsup  decrement  tail/level")
    for case in random_suite(args.cases):
        if case.uclass is None or np.any(case.model.D):
            continue
        alpha, out, lam = decay_certificate_search(case.model, case.structure)
        if out is None:
            print(f"{case.index:4d}  {case.uclass.kind:13s}  no certificate")
            continue
        cert = AnalysisCertificate.from_solution(out.solution, lam)
        a = decay_rate(cert.Q, cert.R)
        horizon = min(max(20.0, 10 / a), args.max_horizon)
        rep = monte_carlo(case.model, cert, case.uclass, 1.0,
                          SimulationConfig(n_runs=args.runs, t_final=horizon, seed=args.seed))
        s = rep.summary()
        print(f"{case.index:4d}  {case.uclass.kind:13s}  {a:7.3g}  {horizon:7.1f}  {s['invariance_pass_rate']:10.2f}"
              f"  {s['limsup_pass_rate']:6.2f}  {s['decrement_pass_rate']:9.2f}  {s['worst_tail_max']:10.4f}")


if __name__ == "__main__":
    main()
