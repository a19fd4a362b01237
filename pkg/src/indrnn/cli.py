"""``indrnn <task> --config <path> [--seed N] [--out DIR] [--resume CKPT]``"""
import argparse
import os
import sys

from .config import TASKS, RunConfig, parse_config
from .errors import ConfigError, FormatError
from .experiments import EXIT_USAGE, run

USAGE = ("usage: indrnn <task> --config <path> [--seed N] [--out DIR] [--resume CKPT]\n"
         f"tasks: {', '.join(TASKS)}\n"
         "environment: INDRNN_THREADS caps BLAS worker threads (0 = library default)")


def _parser():
    p = argparse.ArgumentParser(prog="indrnn", usage=USAGE[len("usage: "):], add_help=True)
    p.add_argument("task", help="experiment to run")
    p.add_argument("--config", required=False, default=None, help="key = value config file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="output directory (default runs/<task>-seed<N>)")
    p.add_argument("--resume", default=None, help="checkpoint file to continue from")
    return p


def thread_limit():
    raw = os.environ.get("INDRNN_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"INDRNN_THREADS must be an integer, got {raw!r}", "INDRNN_THREADS") from None
    if n < 0:
        raise ConfigError("INDRNN_THREADS must be >= 0", "INDRNN_THREADS")
    return n or None


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv or argv[0] not in TASKS:
        if argv and argv[0] in ("-h", "--help"):
            print(USAGE)
            return 0
        print(f"indrnn: unknown task {argv[0]!r}" if argv else "indrnn: no task given", file=sys.stderr)
        print(USAGE, file=sys.stderr)
        return EXIT_USAGE
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else 0
    try:
        base = RunConfig(task=args.task)
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                cfg = parse_config(fh.read(), base=base)
        else:
            cfg = base.validate()
        if cfg.task != args.task:
            raise ConfigError(f"config is for task {cfg.task!r}, command line asked for {args.task!r}", "task")
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["out"] = args.out
        if overrides:
            cfg = cfg.replace(**overrides)
        limit = thread_limit()
        if limit:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=limit):
                result = run(cfg, resume=args.resume)
        else:
            result = run(cfg, resume=args.resume)
    except ConfigError as exc:
        where = f" [{exc.field}]" if exc.field else ""
        print(f"indrnn: invalid configuration{where}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        print(f"indrnn: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"indrnn: {args.task} finished with status {result.status}; outputs in {result.out_dir}")
    return result.status


if __name__ == "__main__":
    sys.exit(main())
