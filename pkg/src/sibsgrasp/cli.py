"""Command-line entry point: ``sibsgrasp <subcommand> ...``.

Exit status is 0 exactly when the primary artifact of the subcommand was
written; errors go to stderr as one line each.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, pipeline
from .config import RunConfig, load_config
from .errors import AllItemsFailed, OptimizationFailed, SibsError

log = logging.getLogger("sibsgrasp")


def _config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    return load_config(Path(path).read_text())


def _emit(doc, out):
    text = pipeline.dumps(doc)
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def cmd_dataset_gen(a):
    res = pipeline.dataset_gen(a.scene, a.hand, a.out, a.poses, a.seed, _config(a.config), a.count)
    print(f"{len(res.files)} volumes written to {a.out} ({len(res.failures)} skipped)")


def cmd_ibs_rank(a):
    paths = list(a.sibs)
    for d in a.dir or ():
        paths += sorted(Path(d).glob("*.sibs"))
    doc = pipeline.ibs_rank(paths, a.hand_hint, None)
    _emit(doc, a.out)


def cmd_grasp_optimize(a):
    res = pipeline.grasp_optimize(a.sibs, a.hand, a.out, a.init, a.init_from_frame,
                                  _config(a.config), a.seed, a.trials)
    best = res.ranked[0]
    print(f"selected trial {best.index} residual {best.residual:.6g}; results in {a.out}")


def cmd_metrics(a):
    _emit(pipeline.metrics(a.scene, a.hand, a.grasp, a.sibs, _config(a.config)), a.out)


def cmd_export(a):
    if a.sibs is not None:
        n = pipeline.export_volume(a.sibs, a.out, world=a.world, binary=a.binary)
    elif a.grasp is not None and a.hand is not None:
        n = pipeline.export_hand(a.hand, a.grasp, a.out, binary=a.binary)
    else:
        raise ValueError("export needs --sibs, or --hand with --grasp")
    print(f"{n} points written to {a.out}")


def cmd_replay(a):
    pipeline.replay(a.manifest, a.out)
    print(f"replayed {a.manifest} into {a.out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sibsgrasp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("dataset-gen", help="ground-truth SIBS volumes for grasp poses")
    s.add_argument("--scene", required=True, help="recipe:<name>:<seed> or a .ply/.xyz file")
    s.add_argument("--hand", required=True, help="builtin:<name> or a hand YAML file")
    s.add_argument("--out", required=True)
    s.add_argument("--poses", help="JSON array of grasp poses (default: synthesise)")
    s.add_argument("--count", type=int, help="poses to synthesise")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config")
    s.set_defaults(func=cmd_dataset_gen)

    s = sub.add_parser("ibs-rank", help="rank SIBS volumes by force-closure score")
    s.add_argument("sibs", nargs="*")
    s.add_argument("--dir", action="append", help="rank every .sibs file in a directory")
    s.add_argument("--hand-hint", type=float, nargs=3, metavar=("X", "Y", "Z"))
    s.add_argument("--out")
    s.set_defaults(func=cmd_ibs_rank)

    s = sub.add_parser("grasp-optimize", help="fit hand poses to a SIBS volume")
    s.add_argument("--sibs", required=True)
    s.add_argument("--hand", required=True)
    s.add_argument("--out", required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--init", help="initial pose (poses JSON or grasp.json)")
    g.add_argument("--init-from-frame", action="store_true",
                   help="start from the volume's canonical frame")
    s.add_argument("--seed", type=int)
    s.add_argument("--trials", type=int)
    s.add_argument("--config")
    s.set_defaults(func=cmd_grasp_optimize)

    s = sub.add_parser("metrics", help="penetration depth and energy breakdown of a grasp")
    s.add_argument("--scene", required=True)
    s.add_argument("--hand", required=True)
    s.add_argument("--grasp", required=True)
    s.add_argument("--sibs")
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("export", help="coloured PLY of a volume or a posed hand")
    s.add_argument("--sibs")
    s.add_argument("--hand")
    s.add_argument("--grasp")
    s.add_argument("--world", action="store_true", help="volume points in world coordinates")
    s.add_argument("--binary", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("replay", help="re-run a manifest into a new directory")
    s.add_argument("manifest")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    pipeline.configure_logging()
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except AllItemsFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        for f in exc.failures:
            print(f"  {json.dumps(f, sort_keys=True)}", file=sys.stderr)
        return 1
    except OptimizationFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SibsError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
