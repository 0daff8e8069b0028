"""Bridge from deep-learning detectors to the logitgmm interchange format:
run a trained model over images and record every post-NMS detection with
its raw pre-normalisation logit vector."""

from .export import ExportResult, normalise, run_export, validate_interchange
from .job import ExportJob, JobError, load_job

__version__ = "0.1.0"

__all__ = [
    "ExportJob",
    "ExportResult",
    "JobError",
    "load_job",
    "normalise",
    "run_export",
    "validate_interchange",
]
