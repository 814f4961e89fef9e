"""Command-line front end.

    wheezebias prepare --config exp.ini
    wheezebias run     --config exp.ini --family boost --jobs 2
    wheezebias audit   --config exp.ini
    wheezebias all     --config exp.ini --out results/
    wheezebias synth   --out corpus/           (write a synthetic corpus)

On success a JSON summary goes to stdout and the exit code is 0. On
failure a JSON object ``{"ok": false, "error": {...}}`` goes to stderr and
the exit code is nonzero (2 for bad input, 1 for failed runs).
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys

from . import experiment, synth
from .errors import WheezeBiasError

EXIT_OK = 0
EXIT_RUN_FAILED = 1
EXIT_BAD_INPUT = 2


def _csv(text):
    return tuple(s.strip() for s in text.split(",") if s.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wheezebias", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file (INI); defaults apply when omitted")
    common.add_argument("--mode", type=_csv, help="restrict to FD, VD or FD,VD")
    common.add_argument("--family", type=_csv, help="comma-separated model families")
    common.add_argument("--seed", type=int, help="override base_seed")
    common.add_argument("--jobs", type=int, default=1, help="parallel training workers (default 1)")
    common.add_argument("--out", help="override output_dir")

    for name, helptext in (("prepare", "generate events and feature files"),
                           ("run", "search hyperparameters and train every seeded run"),
                           ("audit", "build the duration-bias report"),
                           ("all", "prepare, run and audit")):
        sub.add_parser(name, parents=[common], help=helptext)

    sp = sub.add_parser("synth", help="write a synthetic corpus (wav + annotations + split)")
    sp.add_argument("--out", required=True, help="target directory")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--recordings", type=int, default=synth.SynthConfig.n_recordings)
    return parser


def _config(args):
    modes = tuple(m.upper() for m in args.mode) if args.mode else None
    return experiment.load_config(args.config, modes=modes, families=args.family,
                                  base_seed=args.seed, output_dir=args.out)


def _dispatch(args) -> tuple[int, dict]:
    if args.command == "synth":
        data_dir, manifest = synth.write_corpus(
            args.out, synth.SynthConfig(n_recordings=args.recordings, seed=args.seed))
        return EXIT_OK, {"data_dir": str(data_dir), "split_manifest": str(manifest)}

    cfg = _config(args)
    if args.command == "prepare":
        return EXIT_OK, experiment.cmd_prepare(cfg)["modes"]
    if args.command == "audit":
        return EXIT_OK, experiment.cmd_audit(cfg)
    result = (experiment.cmd_run(cfg, args.jobs) if args.command == "run"
              else experiment.cmd_all(cfg, args.jobs))
    failures = result["failures"] if args.command == "run" else result["run"]["failures"]
    return (EXIT_RUN_FAILED if failures else EXIT_OK), result


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        code, payload = _dispatch(args)
    except (WheezeBiasError, FileNotFoundError, configparser.Error, ValueError) as exc:
        err = {"ok": False, "command": args.command,
               "error": {"type": type(exc).__name__, "message": str(exc)}}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return EXIT_BAD_INPUT
    if code != EXIT_OK:
        print(json.dumps({"ok": False, "command": args.command, "result": payload},
                         sort_keys=True, default=str), file=sys.stderr)
        return code
    print(json.dumps({"ok": True, "command": args.command, "result": payload},
                     sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
