"""Chladni pattern studio: plate modal physics, sand-pattern synthesis,
an attention-CNN mode recognizer, and a real-time pattern-to-tone
mapping service."""

from .audio import ToneSpec, ToneStream, render_tone, stream_next, write_wav
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .dataset import (
    DatasetConfig,
    DatasetManifest,
    build_dataset,
    image_to_input,
    load_split,
    pattern_for_mode,
)
from .model import ModelConfig, PatternClassifier, build_model
from .patterns import (
    AugmentSpec,
    SandImage,
    augment_color,
    augment_filter,
    augment_sand,
    render_pattern,
    ssim,
)
from .plate import (
    DecayParams,
    FieldGrid,
    ModeOrder,
    NodalMask,
    PlateSpec,
    amplitude_field,
    bending_stiffness,
    mode_shape,
    natural_frequency,
    nodal_line_count,
    nodal_mask,
)
from .registry import ModeEntry, ModeRegistry, map_mode_to_frequency
from .service import MappingService, ServiceConfig, full_link_latency, serve
from .training import TrainConfig, EvalReport, benchmark_latency, evaluate, train

__version__ = "0.1.0"
