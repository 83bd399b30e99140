"""``mvgrpo <train|decay|eval|render> --config PATH [--seed N] [--out DIR] [--mode MODE] [--threads N]``"""
from __future__ import annotations

import argparse
import logging
import sys

from . import config as C
from . import experiments as X
from .grpo import MODES

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_THRESHOLD = 3

log = logging.getLogger("mvgrpo")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mvgrpo", description="Multi-view consistent editing with GRPO")
    ap.add_argument("command", choices=C.EXPERIMENTS)
    ap.add_argument("--config", help="YAML run configuration (eval defaults to OUT/config.yaml)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", help="output directory (the run directory for eval)")
    ap.add_argument("--mode", choices=tuple(MODES), help="verifier mode for train")
    ap.add_argument("--threads", type=int)
    ap.add_argument("--iterations", type=int, help="override trainer.iterations")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _progress(entry) -> None:
    if entry.iteration % 10 == 0:
        log.info("iter %4d  mean %.4f  max %.4f  kl %.2f", entry.iteration, entry.mean_reward,
                 entry.max_reward, entry.kl)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {
        "experiment": args.command,
        "seed": args.seed,
        "output_dir": args.out,
        "threads": args.threads,
        "trainer.verifier_mode": args.mode,
        "trainer.iterations": args.iterations,
    }
    try:
        if args.config is not None:
            cfg = C.load(args.config, overrides)
        elif args.command == "eval" and args.out is not None:
            cfg = C.load(f"{args.out}/config.yaml", overrides)
        else:
            cfg = C.resolve({}, overrides)
    except C.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "train":
            summary = X.cmd_train(cfg, progress=_progress)
            print(f"{summary['run_id']}: composite {summary['final']['composite']:.4f}, "
                  f"Ph-Loss {summary['final']['ph_loss']:.4f}")
            if not summary["passed"]:
                failed = [k for k, t in summary["thresholds"].items() if not t["passed"]]
                print(f"thresholds failed: {', '.join(failed)}", file=sys.stderr)
                return EXIT_THRESHOLD
        elif args.command == "decay":
            for k, cd, cp, _ in X.cmd_decay(cfg):
                print(f"k={k} conf_depth={cd:.4f} conf_point={cp:.4f}")
        elif args.command == "eval":
            metrics = X.cmd_eval(cfg, args.out)
            print(" ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
        else:
            print(f"wrote {len(X.cmd_render(cfg))} files to {cfg['output_dir']}")
    except C.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - every other failure is a runtime error for CI
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
