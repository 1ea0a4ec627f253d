"""GNSS spoofing detection: signal model, features, tracking and the meta-learned encoder."""

from ._spoofmeta import (
    DataError,
    Error,
    LossOfLockError,
    NumericError,
    ValidationError,
    early_late_discriminator,
    embed,
    gold_code,
    load_checkpoint,
    load_features,
    read_iq,
    segment_count,
    soft_threshold,
    spectrogram,
    stft,
    synthesize,
    track,
    window,
)

__all__ = [
    "DataError",
    "Error",
    "LossOfLockError",
    "NumericError",
    "ValidationError",
    "early_late_discriminator",
    "embed",
    "gold_code",
    "load_checkpoint",
    "load_features",
    "read_iq",
    "segment_count",
    "soft_threshold",
    "spectrogram",
    "stft",
    "synthesize",
    "track",
    "window",
]
