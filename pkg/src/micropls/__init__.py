"""PLS generalized linear regression and kernel multilogit classifiers for n << p expression data."""

__version__ = "0.1.0"

from .core_data import Dataset, ExpressionMatrix, LabelVector, LoadOptions, load_dataset, read_matrix
from .errors import DataError, NumericalError, RankDeficientError
from .harness import PipelineSpec, cross_validate, default_spec, fit_pipeline, stratified_kfold
from .kma import KernelSpec, fit_kma, predict_kma
from .plsglr import extract_components, fit_plsglr_log, fit_plsglrda, project
from .preprocess import PreprocessConfig, preprocess

__all__ = [
    "DataError", "Dataset", "ExpressionMatrix", "KernelSpec", "LabelVector", "LoadOptions",
    "NumericalError", "PipelineSpec", "PreprocessConfig", "RankDeficientError", "__version__",
    "cross_validate", "default_spec", "extract_components", "fit_kma", "fit_pipeline",
    "fit_plsglr_log", "fit_plsglrda", "load_dataset", "predict_kma", "preprocess", "project",
    "read_matrix", "stratified_kfold",
]
