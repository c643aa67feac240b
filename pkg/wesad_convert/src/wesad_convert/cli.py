"""wesad-convert command line entry point."""

from __future__ import annotations

import argparse
import os
import sys

from .convert import convert_all


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wesad-convert",
        description="Convert WESAD subject pickles to neutral subject CSVs",
    )
    parser.add_argument("--wesad-root", required=True,
                        help="directory containing S2/, S3/, ... folders")
    parser.add_argument("--out", required=True, help="output directory for CSVs")
    parser.add_argument("--subjects",
                        help="comma-separated subject ids (default: all found)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    subjects = args.subjects.split(",") if args.subjects else None
    written, failures = convert_all(args.wesad_root, args.out, subjects)

    for out_path, n_rows, histogram in written:
        spread = " ".join(f"{k}:{v}" for k, v in sorted(histogram.items()))
        print(f"{os.path.basename(out_path)}: {n_rows} rows, labels {spread}")
    for pkl, message in failures:
        print(f"FAILED {pkl}: {message}", file=sys.stderr)

    if not written and not failures:
        print(f"no subject pickles found under {args.wesad_root}", file=sys.stderr)
        return 1
    print(f"converted {len(written)} subject(s), {len(failures)} failure(s)")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
