"""Configuration, archive format and orchestration of the generation pipeline."""

from .config import ConfigError, PipelineConfig
from .runner import ConfigMismatch, PipelineError, RunResult, resume_pipeline, run_pipeline

__all__ = ["ConfigError", "ConfigMismatch", "PipelineConfig", "PipelineError", "RunResult", "resume_pipeline", "run_pipeline"]
