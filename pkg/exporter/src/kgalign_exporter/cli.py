"""Exporter CLI.

Exit codes: 0 success, 1 usage error, 2 data or model failure.
"""

from __future__ import annotations

import argparse
import sys

from kgalign_exporter.encoders import DEFAULT_MODEL, ModelLoadError
from kgalign_exporter.export import (
    ExportJob,
    InputError,
    export_name_embeddings,
    export_sentence_embeddings,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> _Parser:
    parser = _Parser(prog="kgalign-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    names = sub.add_parser("export-names", help="encode entity display names")
    names.add_argument("--triples", required=True, help="triple TSV to take URIs from")
    names.add_argument("--out", required=True, help="entity embedding TSV to write")
    names.add_argument(
        "--relations-out",
        dest="relations_out",
        default=None,
        help="also write relation-label embeddings here",
    )

    sentences = sub.add_parser("export-sentences", help="encode walk sentences")
    sentences.add_argument("--walks", required=True, help="walk-sentence TSV")
    sentences.add_argument("--out", required=True)

    for p in (names, sentences):
        p.add_argument("--model", default=DEFAULT_MODEL,
                       help="model id; 'hash:<dim>' selects the offline test backend")
        p.add_argument("--batch", type=int, default=32)
        p.add_argument("--no-normalize", dest="normalize", action="store_false")
        p.add_argument("--raw-names", dest="simplify", action="store_false",
                       help="encode full URIs instead of display names")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    job = ExportJob(
        model_id=args.model,
        batch_size=args.batch,
        normalize=args.normalize,
        simplify_names=getattr(args, "simplify", True),
    )
    try:
        if args.command == "export-names":
            export_name_embeddings(job, args.triples, args.out, args.relations_out)
        else:
            export_sentence_embeddings(job, args.walks, args.out)
    except (ModelLoadError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
