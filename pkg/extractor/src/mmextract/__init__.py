"""mmextract: image/text corpus embedding into EMB1 + manifest files."""

__version__ = "0.1.0"

from .corpus import CorpusRecord, CorpusSpec, load_corpus
from .encoders import resolve_encoder
from .extract import extract

__all__ = ["CorpusRecord", "CorpusSpec", "extract", "load_corpus", "resolve_encoder"]
