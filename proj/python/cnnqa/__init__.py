"""Convolutional image question answering.

The model, trainer, metrics and synthetic data generator are implemented in
C++; this package re-exports the compiled module.
"""

from ._cnnqa import (
    ArgumentError,
    CnnqaError,
    DimensionError,
    DuplicateError,
    FeatureStore,
    IoError,
    Model,
    NumericError,
    ParseError,
    Taxonomy,
    TaxonomyError,
    VocabularyError,
    accuracy,
    gradient_check,
    load_features,
    load_triplets,
    run_cli,
    save_triplets,
    sentence_output_shape,
    shuffle_questions,
    synthetic,
    tokenize,
    train,
    wups,
)

__all__ = [
    "ArgumentError",
    "CnnqaError",
    "DimensionError",
    "DuplicateError",
    "FeatureStore",
    "IoError",
    "Model",
    "NumericError",
    "ParseError",
    "Taxonomy",
    "TaxonomyError",
    "VocabularyError",
    "accuracy",
    "gradient_check",
    "load_features",
    "load_triplets",
    "run_cli",
    "save_triplets",
    "sentence_output_shape",
    "shuffle_questions",
    "synthetic",
    "tokenize",
    "train",
    "wups",
]
