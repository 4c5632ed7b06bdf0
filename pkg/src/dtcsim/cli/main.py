"""Command-line entry point ``dtcsim``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

from .. import dephase as dp
from .. import meanfield as mf
from ..evolve import DimensionCapError
from ..model import Protocol
from . import campaign as cp
from .manifest import ManifestError, load_manifest

EXIT_OK = 0
EXIT_MANIFEST = 2
EXIT_RESOURCE = 3
EXIT_ANALYSIS = 4

# total mean-field interaction of the NV ensemble, 2 pi x 350 kHz in rad/us
DEFAULT_JMF = 2 * math.pi * 0.35

log = logging.getLogger("dtcsim")


def _manifest(args):
    m = load_manifest(args.manifest)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ManifestError("out-of-range", "--seed must be an unsigned 64-bit integer")
        m = m.with_seed(args.seed)
    return m


def _emit(rows: list, header: Sequence[str], out: Optional[str], name: str):
    lines = [",".join(header)] + [",".join(repr(float(v)) for v in r) for r in rows]
    text = "\n".join(lines) + "\n"
    if out:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{name}.csv").write_text(text)
        (d / f"{name}.json").write_text(json.dumps([dict(zip(header, map(float, r))) for r in rows], indent=2) + "\n")
    sys.stdout.write(text)


def cmd_simulate(args) -> int:
    m = _manifest(args)
    out = cp.output_dir(m, args.out)
    rec = cp.simulate(m, out, workers=args.workers, resume=args.resume)
    log.info("simulate: %(computed)d computed, %(reused)d reused of %(tasks)d tasks", rec)
    print(json.dumps({"out": str(out), **rec}))
    return EXIT_OK


def cmd_analyze(args) -> int:
    m = _manifest(args)
    out = cp.output_dir(m, args.out)
    rec = cp.analyze(m, out)
    failed = [a for a in rec["analysis"] if not a["ok"]]
    for a in failed:
        print(f"analysis {a['name']} (line {a['line']}): {a['error']}", file=sys.stderr)
    print(json.dumps({"out": str(out), "analysis": [(a["name"], a["ok"]) for a in rec["analysis"]]}))
    return EXIT_ANALYSIS if failed else EXIT_OK


def cmd_meanfield(args) -> int:
    if not args.jmf > 0:
        raise ValueError("--jmf must be positive")
    coeff = mf.existence_boundary(args.protocol)
    rows = [(t, coeff * args.jmf * t) for t in args.periods]
    _emit(rows, ("T", "epsilon_critical"), args.out, f"meanfield_{args.protocol}")
    return EXIT_OK


def cmd_dephase(args) -> int:
    eps = list(args.eps or []) + [math.pi * e for e in (args.eps_over_pi or [])]
    if not eps:
        raise ValueError("epsilon grid is empty: pass --eps or --eps-over-pi")
    if any(not 0 < e < math.pi / 2 for e in eps):
        raise ValueError("epsilon values must lie in (0, pi/2)")
    _emit(dp.rate_table(args.protocol, eps), ("epsilon", "gamma", "half_eps_squared"), args.out,
          f"dephase_{args.protocol}")
    return EXIT_OK


def cmd_report(args) -> int:
    m = _manifest(args)
    out = cp.output_dir(m, args.out)
    path = out / "record.json"
    if not path.exists():
        raise cp.MissingTracesError(f"{path} not found; run simulate and analyze first")
    rec = json.loads(path.read_text())
    if rec["manifest_hash"] != m.hash():
        print("warning: record was produced by a different manifest", file=sys.stderr)
    print(f"campaign {rec['campaign']}  manifest {rec['manifest_hash'][:12]}  seed {rec['seed']}")
    print(f"traces: {len(rec['traces'])}")
    for a in rec["analysis"]:
        status = f"{a['rows']} rows -> {a['file']}" if a["ok"] else f"FAILED: {a['error']}"
        print(f"  {a['name']:<22} {status}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dtcsim", description="Discrete-time-crystal simulation campaigns.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def campaign_flags(sp):
        sp.add_argument("--manifest", required=True, metavar="PATH")
        sp.add_argument("--out", metavar="DIR", help=f"output directory (default: ${cp.OUT_ENV}, then manifest)")
        sp.add_argument("--seed", type=int, metavar="U64", help="override the manifest's global seed")

    s = sub.add_parser("simulate", help="run the manifest's simulation sweep")
    campaign_flags(s)
    s.add_argument("--workers", type=int, default=1, metavar="N")
    s.add_argument("--resume", action="store_true", help="keep completed traces from an earlier run")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="run the manifest's analysis plan on stored traces")
    campaign_flags(a)
    a.add_argument("--workers", type=int, default=1, metavar="N", help="accepted for symmetry; analysis is serial")
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("report", help="summarize a finished campaign")
    campaign_flags(r)
    r.set_defaults(func=cmd_report)

    protocols = [p.value for p in Protocol]
    mfp = sub.add_parser("meanfield", help="mean-field existence boundary table")
    mfp.add_argument("--protocol", required=True, choices=[x for x in protocols if x != Protocol.TOY.value])
    mfp.add_argument("--jmf", type=float, default=DEFAULT_JMF)
    mfp.add_argument("--periods", type=float, nargs="+", default=[1.0])
    mfp.add_argument("--out", metavar="DIR")
    mfp.set_defaults(func=cmd_meanfield)

    d = sub.add_parser("dephase", help="dephasing-model decay rates")
    d.add_argument("--protocol", required=True, choices=["Z2", "Z3"])
    d.add_argument("--eps", type=float, nargs="+")
    d.add_argument("--eps-over-pi", type=float, nargs="+")
    d.add_argument("--out", metavar="DIR")
    d.set_defaults(func=cmd_dephase)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ManifestError as exc:
        print(f"manifest error: {exc}", file=sys.stderr)
        return EXIT_MANIFEST
    except (cp.ResourceCapError, DimensionCapError, MemoryError) as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (cp.MissingTracesError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
