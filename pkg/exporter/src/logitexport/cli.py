"""logitexport command line: run an export job file."""

import argparse
import sys

from .export import run_export
from .job import JobError, load_job


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="logitexport",
        description="run a detector over images and emit raw-logit detections",
    )
    parser.add_argument("job", help="YAML or JSON export job file")
    parser.add_argument("--detections-out", help="override the job's output path")
    args = parser.parse_args(argv)

    try:
        job = load_job(args.job)
        if args.detections_out:
            job.detections_out = args.detections_out
        result = run_export(job)
    except JobError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    for item in result.item_errors:
        print(f"skipped: {item}", file=sys.stderr)
    print(f"exported {result.n_detections} detections from {result.n_images} images "
          f"-> {job.detections_out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
