"""diffusion-runner CLI: run a job manifest against a generation backend."""

from __future__ import annotations

import argparse
import json
import sys

from .backends import StartupError, make_backend
from .manifest import ManifestError
from .runner import run_manifest, write_results


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffusion-runner",
        description="Run a quadprior job manifest through a diffusion backend.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="process every job in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--backend", default="stub", choices=["stub", "real"])
    p.add_argument("--weights", help="pipeline weights directory (real backend)")
    p.add_argument("--steps", type=int, default=30, help="sampler steps (real backend)")
    p.add_argument("--guidance", type=float, default=7.5, help="guidance scale (real backend)")
    p.add_argument("--device", default="cpu")
    p.add_argument("--parallel", type=int, default=1, help="max concurrent jobs")
    p.add_argument("--results", help="where to write the results JSON")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        backend = make_backend(args.backend, args.weights, args.steps, args.guidance,
                               args.device)
        results = run_manifest(args.manifest, backend, max_parallel=args.parallel)
    except (StartupError, ManifestError) as e:
        sys.stderr.write(json.dumps({"error": str(e)}) + "\n")
        return 1
    if args.results:
        write_results(args.results, results)
    n_failed = sum(1 for r in results if r.status == "failed")
    sys.stdout.write(
        json.dumps({"jobs": len(results), "ok": len(results) - n_failed, "failed": n_failed})
        + "\n"
    )
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
