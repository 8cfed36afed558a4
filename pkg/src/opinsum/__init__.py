"""Self-supervised, controllable multi-document opinion summarization.

The pipeline mines (input set, pseudo-summary) pairs from raw reviews,
annotates them with polarity/category/aspect control tokens, trains a
multi-source Transformer from scratch on a hand-written reverse-mode
autodiff core, and decodes entity summaries with constrained beam
search.  See the ``cli`` module (console script ``opinsum``) for the
end-to-end stages.
"""

__version__ = "0.1.0"

from .corpus import Corpus, Review, ingest_corpus, partition_corpus
from .errors import ConfigError, DataError, NumericalError, OpinsumError

__all__ = [
    "Corpus",
    "Review",
    "ingest_corpus",
    "partition_corpus",
    "ConfigError",
    "DataError",
    "NumericalError",
    "OpinsumError",
    "__version__",
]
