"""Wheeze classifiers: logistic baseline, LDA, linear/RBF SVM, LogitBoost, CNN."""

from .base import (
    BOOST,
    CNN,
    FAMILIES,
    LDA,
    LOGISTIC,
    SVM_LINEAR,
    SVM_RBF,
    Standardizer,
    TrainedModel,
    standardize_fit,
)
from .boost import train_logitboost
from .cnn import (
    FD_ARCH,
    VD_ARCH,
    CnnArchitecture,
    TrainConfig,
    cnn_forward,
    cnn_grad_check,
    cnn_train,
    train_cnn,
)
from .linear import train_lda, train_logistic
from .search import SearchResult, hyper_search, train
from .serialize import load_model, save_model
from .svm import train_svm

__all__ = [
    "BOOST", "CNN", "FAMILIES", "LDA", "LOGISTIC", "SVM_LINEAR", "SVM_RBF",
    "Standardizer", "TrainedModel", "standardize_fit",
    "train_logistic", "train_lda", "train_svm", "train_logitboost",
    "CnnArchitecture", "TrainConfig", "FD_ARCH", "VD_ARCH",
    "cnn_forward", "cnn_train", "cnn_grad_check", "train_cnn",
    "hyper_search", "SearchResult", "train",
    "save_model", "load_model",
]
