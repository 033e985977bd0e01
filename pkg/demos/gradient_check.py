"""Checking hand-written backward passes against central differences.

Each model computes its gradient by an explicit backward pass.  The check
perturbs every parameter by +/- eps, measures the loss change, and reports
the worst relative disagreement.  ReLU and leaky-ReLU are not differentiable
at zero, so instances with a pre-activation closer to zero than eps are
redrawn: a difference quotient straddling a kink measures a jump, not a
slope.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from helpers import gradcheck, gradcheck_instance  # noqa: E402

from clickgraph.models import MODEL_KINDS  # noqa: E402

for kind in MODEL_KINDS:
    errors = [gradcheck(*gradcheck_instance(kind, seed)) for seed in range(5)]
    n_params = sum(p.size for p in gradcheck_instance(kind, 0)[0].params.values())
    print(f"{kind:7s} {n_params:6d} parameters  max relative error over 5 instances: {max(errors):.2e}")
