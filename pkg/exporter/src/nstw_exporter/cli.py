"""Export command line: nstw-export --model vgg19 --out weights.nstw"""

from __future__ import annotations

import argparse
import json
import sys

from .export import export, probe_image_path
from .models import MODEL_IDS


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nstw-export",
        description="convert a checkpoint into the NSTW weight format",
    )
    parser.add_argument("--model", required=True, choices=MODEL_IDS)
    parser.add_argument("--out", required=True, help="output .nstw path")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for the offline fallback initialization")
    args = parser.parse_args(argv)
    try:
        manifest = export(args.model, args.out, seed=args.seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    summary = {
        "model": manifest.model_id,
        "source": manifest.source,
        "engine_network": manifest.engine_network,
        "out": args.out,
        "mapped_layers": len(manifest.mapping),
        "checksum_taps": sorted(manifest.checksums),
        "probe": probe_image_path(),
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
