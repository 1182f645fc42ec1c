"""ECG time-series imaging (MTF, GAF, RP), field-image composition and a toy
image/report retrieval model."""

__version__ = "0.1.0"

from .composer import CONFIGURATIONS, ComposeConfig, ImageTensor, compose, configuration, read_png, write_png
from .encoders import EncodedField, EncoderConfig, RpConfig, encode, gadf, gasf, mtf, recurrence_plot, rescale
from .errors import EcgFieldError, EncodeError, IndexError_, IngestError, TrainError
from .preprocess import NotchConfig, NotchSkippedWarning, moving_window_filter, notch_filter, preprocess_pipeline
from .retrieval import Embedding, EmbeddingIndex, RetrievalReport, evaluate, load_index, rank, recall_at_k, rsum, save_index
from .signal_io import EcgRecord, LeadSeries, ReportDoc, load_manifest, load_record, read_csv, read_wfdb

__all__ = [
    "CONFIGURATIONS", "ComposeConfig", "ImageTensor", "compose", "configuration", "read_png", "write_png",
    "EncodedField", "EncoderConfig", "RpConfig", "encode", "gadf", "gasf", "mtf", "recurrence_plot", "rescale",
    "EcgFieldError", "EncodeError", "IndexError_", "IngestError", "TrainError",
    "NotchConfig", "NotchSkippedWarning", "moving_window_filter", "notch_filter", "preprocess_pipeline",
    "Embedding", "EmbeddingIndex", "RetrievalReport", "evaluate", "load_index", "rank", "recall_at_k", "rsum",
    "save_index", "EcgRecord", "LeadSeries", "ReportDoc", "load_manifest", "load_record", "read_csv", "read_wfdb",
]
