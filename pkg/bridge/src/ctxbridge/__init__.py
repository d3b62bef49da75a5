"""Masked-context vector extraction for the typelink engine."""

from .extract import (BridgeError, ExtractionJob, ExtractionStats,
                      MaskedContextEncoder, extract_context_vectors,
                      fit_window, read_records)

__version__ = "0.1.0"
