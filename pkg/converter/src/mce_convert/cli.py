"""mce-convert: export an ONNX MobileNetV2-family classifier to the MCE
model format, optionally verifying numerical fidelity against the source.

Prints the emitted op histogram (and the verification max-diff) as JSON
on stdout. Exit codes: 0 success, 1 usage error, 2 conversion/data error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .convert import ConversionError, convert
from .onnx_proto import OnnxDecodeError
from .reference import ReferenceError
from .verify import VerifyError, verify


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="mce-convert", description=__doc__)
    parser.add_argument("input", help="source .onnx model")
    parser.add_argument("output", help="destination .mce model")
    parser.add_argument("--verify", type=int, default=0, metavar="N",
                        help="compare N random inputs against the source runtime")
    parser.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        histogram = convert(args.input, args.output)
        print(json.dumps({"histogram": histogram}, indent=2))
        if args.verify > 0:
            diff = verify(args.input, args.output, samples=args.verify,
                          seed=args.seed)
            print(json.dumps({"max_abs_diff": diff}))
        return 0
    except (ConversionError, OnnxDecodeError, ReferenceError, VerifyError,
            OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
