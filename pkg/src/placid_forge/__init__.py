"""Deterministic synthesis of motion-based compositing training videos, plus
model-free evaluation metrics for multi-object composites."""

__version__ = "0.1.0"

from .manifest import (  # noqa: F401
    BackgroundSpec,
    Canvas,
    LayoutTarget,
    ObjectAsset,
    Placement,
    SampleOutput,
    SampleSpec,
    load_sample_spec,
    validate_output,
    write_sample,
)
from .build import GenerationConfig, build_sample, run_batch  # noqa: F401
