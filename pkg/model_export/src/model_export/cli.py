"""One-shot command line wrapper around the exporter."""

from __future__ import annotations

import argparse
import sys
import traceback

from .export import NETWORKS, ExportError, export


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="export_models",
        description="Export a truncated feature network for bmodelab")
    parser.add_argument("--network", required=True, choices=sorted(NETWORKS))
    parser.add_argument("--out", required=True, help="models directory")
    parser.add_argument("--weights", default=None,
                        help="weights file path or 'imagenet'; "
                             "default is a seeded initialization")
    parser.add_argument("--seed", type=int, default=0)
    try:
        args = parser.parse_args(argv)
        manifest = export(args.network, args.out,
                          weights=args.weights, seed=args.seed)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2
    print(f"exported {manifest['extractor_id']} "
          f"({manifest['expected_dim']} features, "
          f"input {manifest['input_size']}) -> {args.out}")
    print(f"weights checksum {manifest['weights_checksum']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
