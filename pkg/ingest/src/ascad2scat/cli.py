"""ascad2scat command line: convert ASCAD-style HDF5 captures to SCAT.

    ascad2scat --in X.h5 --group profiling --out X.scat [--window a:b] [--limit N]
    ascad2scat --in X.h5 --group profiling --verify X.scat

Exit codes: 0 success, 1 usage error, 2 conversion/verification failure.
"""

import argparse
import sys

from .convert import (
    DEFAULT_MAPPING,
    IngestJob,
    Mismatch,
    MissingDataset,
    ShapeMismatch,
    _load_mapping,
    convert,
    verify,
)


def _parse_window(text):
    try:
        a, _, b = text.partition(":")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"window must be a:b, got {text!r}")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="ascad2scat", description=__doc__)
    ap.add_argument("--in", dest="input", required=True, help="HDF5 input file")
    ap.add_argument("--group", choices=["profiling", "attack"], default="profiling")
    ap.add_argument("--out", help="SCAT output path")
    ap.add_argument("--verify", metavar="SCAT", help="verify an existing SCAT file instead")
    ap.add_argument("--window", type=_parse_window, default=None, metavar="A:B",
                    help="sample range to extract")
    ap.add_argument("--limit", type=int, default=None, help="max traces to convert")
    ap.add_argument("--target-byte", type=int, default=2,
                    help="key byte for derived labels when the file has none")
    ap.add_argument("--mapping", default=None,
                    help="JSON overriding the ASCAD group/dataset/field names")
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code else 0
    if (args.out is None) == (args.verify is None):
        print("ascad2scat: need exactly one of --out / --verify", file=sys.stderr)
        return 1

    mapping = _load_mapping(args.mapping) if args.mapping else DEFAULT_MAPPING
    job = IngestJob(input_path=args.input, group=args.group,
                    output_path=args.out or "", window=args.window,
                    limit=args.limit, target_byte=args.target_byte,
                    mapping=mapping)
    try:
        if args.out:
            summary = convert(job)
            print(f"wrote {summary['n_traces']} x {summary['n_samples']} "
                  f"{summary['dtype']} traces to {args.out}")
        else:
            report = verify(args.verify, args.input, job)
            print(f"verified {report['n_traces']} traces "
                  f"({report['samples_checked']} sampled): OK")
    except (MissingDataset, ShapeMismatch, Mismatch, OSError) as e:
        print(f"ascad2scat: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
