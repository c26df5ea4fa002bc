"""Command-line entry point: ``gapdecomp run|validate|synth``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import runner, synth
from .config import FORMATS, load_config
from .dataio import write_csv
from .errors import ConfigError, GapDecompError


def _parser():
    p = argparse.ArgumentParser(prog="gapdecomp", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="summary, marginal effects and decompositions")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--iterations", type=int)
    r.add_argument("--bootstrap", type=int)
    r.add_argument("--format", choices=FORMATS)
    r.add_argument("--out")
    r.add_argument("--threads", type=int, default=1, help="worker threads (does not change results)")

    v = sub.add_parser("validate", help="dry-run checks without fitting")
    v.add_argument("--config", required=True)

    s = sub.add_parser("synth", help="write a synthetic dataset from a DGP file")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    return p


def _fail(exc):
    print(json.dumps(exc.describe()), file=sys.stderr)
    return exc.exit_code


def _synth(args):
    try:
        d = yaml.safe_load(Path(args.config).read_text(encoding="utf-8"))
        if args.seed is not None:
            d["seed"] = args.seed
        spec = synth.DgpSpec.from_dict(d)
    except (OSError, yaml.YAMLError, TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid DGP config: {exc}") from exc
    write_csv(synth.generate(spec), args.out)
    return 0


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    seed = getattr(args, "seed", None)
    if seed is not None and not 0 <= seed < 2**64:
        return _fail(ConfigError("--seed must be an unsigned 64-bit integer"))
    try:
        if args.command == "synth":
            return _synth(args)
        config = load_config(args.config)
        if args.command == "validate":
            diags = runner.validate(config)
            for d in diags:
                print(d)
            if not diags:
                print("ok")
            return 3 if diags else 0
        config = config.with_overrides(args.seed, args.iterations, args.bootstrap, args.format, args.out)
        print(f"seed={config.decomp.seed} config={json.dumps(config.echo(), sort_keys=True)}",
              file=sys.stderr)
        report = runner.run(config, workers=args.threads)
        text = report.render(config.format, config.labels)
        if config.out is None:
            sys.stdout.write(text)
        else:
            Path(config.out).write_text(text, encoding="utf-8")
        return 0
    except GapDecompError as exc:
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
