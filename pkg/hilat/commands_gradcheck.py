import argparse
import logging
from contextlib import nullcontext

from hilat.errors import EXIT_FAILURE
from hilat.gradcheck import DEFAULT_EPS, DEFAULT_SAMPLES, PASS_THRESHOLD, build_toy_model, grad_check_model, mutated_tanh

logger = logging.getLogger(__name__)


def cmd_grad_check(args: argparse.Namespace) -> int:
    model, doc = build_toy_model(seed=args.seed, d_e=args.d_e, n_labels=args.n_labels, n_chunks=args.n_chunks, slots=args.slots)
    with mutated_tanh() if args.mutate_tanh else nullcontext():
        result = grad_check_model(model, doc, eps=args.eps, n_sampled=args.samples, seed=args.seed)

    status = "PASS" if result.passed else "FAIL"
    print(f"{status}: max relative error {result.max_rel_error:.3e} over {result.n_sampled} sampled coordinates "
          f"(threshold {PASS_THRESHOLD:g})")
    for name, err in sorted(result.per_tensor.items()):
        print(f"  {name:<20} {err:.3e}")
    if result.worst is not None and not result.passed:
        name, (i, j) = result.worst
        print(f"  worst: {name}[{i}, {j}]")
    return 0 if result.passed else EXIT_FAILURE


def register(subparsers) -> None:
    p = subparsers.add_parser("grad-check", help="finite-difference check of the gradients on a toy model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--samples", type=int, default=DEFAULT_SAMPLES)
    p.add_argument("--d-e", type=int, default=4)
    p.add_argument("--n-labels", type=int, default=3)
    p.add_argument("--n-chunks", type=int, default=2)
    p.add_argument("--slots", type=int, default=8, help="token slots per chunk, CLS and SEP included")
    p.add_argument("--mutate-tanh", action="store_true", help="use a wrong tanh derivative (the check must fail)")
    p.set_defaults(handler=cmd_grad_check)
