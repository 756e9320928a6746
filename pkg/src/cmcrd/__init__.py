"""Cross-modal contrastive representation distillation (CMCRD).

Train a teacher classifier on one physiological modality (e.g. eye-movement
features), then distill its representation into a student on the other
modality (e.g. EEG) through a guided, certainty-weighted contrastive
objective — so that at test time only the student's modality is required.
"""

__version__ = "0.1.0"

from . import checks, config, data, distill, harness, nets, store, teacher  # noqa: F401
from .errors import (CmcrdError, ConfigError, DataError, LoadError, PairingError,
                     ProtocolError, SamplingError, SchemaError, TrainingError)  # noqa: F401
