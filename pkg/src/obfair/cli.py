"""Command line: ``obfair run|report|plot-data|synth``.

Exit codes: 0 success, 2 config error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import fairmetrics as fm
from .config import load_config
from .errors import ConfigError, ObfairError

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3

log = logging.getLogger("obfair")


def _print_table(title: str, rows) -> None:
    print(f"\n{title}")
    print(f"{'':20s}" + "".join(f"{fm.METRIC_HEADERS[m]:>19s}" for m in fm.METRICS))
    for g, r in rows:
        cells = "".join(f"{'' if r.get(m) is None else format(r[m], '.3f'):>19s}" for m in fm.METRICS)
        print(f"{g:20s}{cells}")


def cmd_run(args) -> int:
    from .pipeline import run

    cfg = load_config(args.config).with_overrides(seed=args.seed, workers=args.workers, methods=args.method)
    art = run(cfg, fresh=args.fresh)
    for (method, name), rows in sorted(art.reports.items()):
        _print_table(f"{method} / {name}", rows)
    print(f"\nartifacts in {art.output_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .pipeline import rebuild_reports

    for (method, name), rows in sorted(rebuild_reports(args.artifacts).items()):
        _print_table(f"{method} / {name}", rows)
    return EXIT_OK


def cmd_plot_data(args) -> int:
    from .pipeline import rebuild_plot_data

    for path in rebuild_plot_data(args.artifacts):
        print(path)
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import make_cohort

    print(make_cohort(args.out, args.identities, args.images, args.size, args.seed))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="obfair", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the full experiment from a config file")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int)
    r.add_argument("--method", choices=["blur", "pixelate", "both"])
    r.add_argument("--fresh", action="store_true", help="ignore cached calibration/encodings")
    r.set_defaults(fn=cmd_run)

    rep = sub.add_parser("report", help="recompute report tables from a run directory")
    rep.add_argument("--artifacts", required=True, type=Path)
    rep.set_defaults(fn=cmd_report)

    pd = sub.add_parser("plot-data", help="write histogram / box-plot / bias CSVs")
    pd.add_argument("--artifacts", required=True, type=Path)
    pd.set_defaults(fn=cmd_plot_data)

    s = sub.add_parser("synth", help="generate a synthetic cohort and manifest")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--identities", type=int, default=40)
    s.add_argument("--images", type=int, default=20)
    s.add_argument("--size", type=int, default=24)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    console = logging.StreamHandler()
    console.setLevel(logging.DEBUG if args.verbose else logging.WARNING)
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logging.getLogger().addHandler(console)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ObfairError, OSError, ValueError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
