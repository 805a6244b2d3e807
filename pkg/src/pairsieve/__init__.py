"""Sentence-video correspondence training with adversarial pair gating.

Synthetic corpora with planted clean/loose/noise tags drive a two-channel
embedding model whose discriminator learns to gate unreliable pairs out of
(and gradually back into) the correspondence objective.
"""

__version__ = "0.1.0"

from .corpus import ClipRecord, CorpusSpec, generate_corpus, load_corpus, save_corpus
from .config import TrainConfig
from .training import train
from .evaluation import bidirectional_retrieval

__all__ = [
    "ClipRecord",
    "CorpusSpec",
    "TrainConfig",
    "bidirectional_retrieval",
    "generate_corpus",
    "load_corpus",
    "save_corpus",
    "train",
    "__version__",
]
