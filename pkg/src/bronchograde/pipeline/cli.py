"""Command-line entry point.

    bronchograde <stage|all|make-toy> [--config FILE] [--seed N] [--profile desk|paper]
                 [--workspace DIR] [--grade G] [--variant cut|cyclegan]
                 [--backbone inception_cnn|vit] [--<dotted.key> VALUE ...]

Exit status: 0 success, 1 runtime failure, 2 usage, configuration or missing input.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from .config import ConfigError, dump_config, load_config, parse_value
from .stages import STAGES, run_stage
from .workspace import MissingInput, Workspace

log = logging.getLogger("bronchograde")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bronchograde", description="Inhalation-injury grading pipeline")
    p.add_argument("stage", choices=(*STAGES, "all", "make-toy"))
    p.add_argument("--config", help="YAML configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--profile", choices=("desk", "paper"))
    p.add_argument("--workspace", help="workspace directory (overrides paths.workspace)")
    p.add_argument("--grade", type=int, choices=range(1, 7), help="restrict GAN stages to one grade")
    p.add_argument("--variant", choices=("cut", "cyclegan"), help="restrict GAN stages to one variant")
    p.add_argument("--backbone", choices=("inception_cnn", "vit"), help="restrict classifier stages to one backbone")
    p.add_argument("--out", help="make-toy: output directory for the synthetic corpus")
    p.add_argument("--quiet", action="store_true")
    return p


def parse_overrides(extra: list[str]) -> dict:
    """``--a.b value`` / ``--a.b=value`` pairs; values are parsed as YAML scalars or lists."""
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) < 3:
            raise ConfigError(f"unexpected argument {tok!r}")
        key, eq, val = tok[2:].partition("=")
        if not eq:
            if i + 1 >= len(extra):
                raise ConfigError(f"missing value for --{key}")
            val = extra[i + 1]
            i += 1
        out[key] = parse_value(val)
        i += 1
    return out


def make_toy(out: Path, seed: int) -> Path:
    from ..synthetic import write_toy_corpus

    manifest = write_toy_corpus(out / "corpus", seed=seed)
    cfg_path = out / "config.yaml"
    cfg_path.write_text(
        yaml.safe_dump(
            {"profile": "desk", "seed": seed, "paths": {"manifest": "corpus/manifest.csv", "workspace": "workspace"}},
            sort_keys=False,
        )
    )
    print(f"wrote {manifest} and {cfg_path}")
    return cfg_path


def main(argv: list[str] | None = None) -> int:
    try:
        args, extra = build_parser().parse_known_args(argv)
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
        if args.stage == "make-toy":
            if not args.out:
                raise ConfigError("make-toy needs --out DIR")
            make_toy(Path(args.out), args.seed or 0)
            return 0
        overrides = parse_overrides(extra)
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.workspace:
            overrides["paths.workspace"] = str(Path(args.workspace).resolve())
        cfg = load_config(args.config, overrides, profile=args.profile)
        ws = Workspace(cfg.workspace)
        dump_config(cfg, ws.path("config.resolved.yaml"))
        stages = STAGES if args.stage == "all" else (args.stage,)
        for stage in stages:
            log.info("stage %s", stage)
            run_stage(stage, cfg, ws, grade=args.grade, variant=args.variant, backbone=args.backbone)
        return 0
    except (ConfigError, MissingInput) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 1
    except Exception as exc:  # runtime failure
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
