"""Sweep the finite-difference step size and watch the error curve.

Central differences have O(h^2) truncation error, so the gap to the
analytic gradient should fall by ~100x per 10x reduction in h until
float cancellation takes over near h ~ 1e-7.
"""

import argparse

import numpy as np

from rca.core import ContrastiveInstance
from rca.gradients import gradient_check
from rca.uasr import apply_uasr

parser = argparse.ArgumentParser()
parser.add_argument("--d", type=int, default=8)
parser.add_argument("--n_regions", type=int, default=4)
parser.add_argument("--k", type=int, default=3)
parser.add_argument("--n_nouns", type=int, default=2)
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--enable_uasr", action=argparse.BooleanOptionalAction, default=True)
args = parser.parse_args()

rng = np.random.default_rng(args.seed)
instance = ContrastiveInstance(
    regions=rng.standard_normal((args.n_regions, args.d)),
    positives=rng.standard_normal((args.k, args.d)),
    negatives=rng.standard_normal((args.k, args.d)),
    caption_nouns=rng.standard_normal((args.n_nouns, args.d)),
    global_scores=np.sort(rng.uniform(0.05, 1.0, size=args.k))[::-1],
)
sel = apply_uasr(instance) if args.enable_uasr else None

print("h          max rel err   per-table errors")
for h in (1e-3, 1e-4, 1e-5, 1e-6, 1e-7):
    rep = gradient_check(instance, sel, h=h)
    tables = "  ".join(f"{name}={err:.1e}" for name, err in rep.errors.items())
    print(f"{h:.0e}   {rep.max_error:.3e}    {tables}")

rep = gradient_check(instance, sel, h=1e-5, tolerance=1e-4)
print(f"\nat the default h=1e-5 the check {'passes' if rep.passed else 'FAILS'}"
      f" (max {rep.max_error:.2e} vs tolerance {rep.tolerance:.0e})")
