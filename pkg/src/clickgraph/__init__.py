"""Click-through-rate prediction with factorization machines and a
field-interaction graph network, trained offline and refreshed online."""

from . import data, metrics, models, numerics, pipeline
from .data import DatasetSplit, EncodedBatch, EncodedExample, FeatureVocabulary, RawRecord
from .metrics import MetricsReport
from .models import ModelConfig, ModelState
from .pipeline import GenerationLog, OnlineConfig, SweepResult

__version__ = "0.1.0"
