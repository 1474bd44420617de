import argparse

from padloop.config import RunConfig, apply_seed_env, load_config


def parse_config(description: str, extra=None):
    parser = argparse.ArgumentParser(description=description)
    parser.add_argument("--config", help="YAML or JSON run config; defaults when omitted")
    if extra is not None:
        extra(parser)
    args = parser.parse_args()
    cfg = load_config(args.config) if args.config else apply_seed_env(RunConfig())
    return cfg, args
