"""Topic-aware knowledge-grounded dialogue: span selection and response generation in numpy."""

from .config import RunConfig, TrainConfig
from .corpus import Corpus, Vocabulary, load_corpus, save_corpus
from .metrics import MetricsReport
from .model import TARGModel
from .synthetic import SyntheticConfig, generate_synthetic, split_corpus

__all__ = [
    "Corpus", "MetricsReport", "RunConfig", "SyntheticConfig", "TARGModel", "TrainConfig",
    "Vocabulary", "generate_synthetic", "load_corpus", "save_corpus", "split_corpus",
]
__version__ = "0.1.0"
