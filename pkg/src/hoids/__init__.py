"""Hierarchical online intrusion detection toolkit.

Logistic-regression detectors trained by BFGS, information-gain and PCA
feature reduction, evaluation helpers, and a server/client runtime that
distributes trained detection principles to lightweight clients.
"""

from .data import Dataset, LabelSpace, load_csv, standardize_apply, standardize_fit
from .evaluation import confusion, cross_validate, error_rate, recall_precision
from .featsel import information_gain, label_entropy, pca_fit, rank_features
from .model import (BinaryModel, MultiModel, OVAModel, load_model, one_vs_all_train, predict,
                    save_model, train_binary, train_multi)
from .optimizer import QNConfig, minimize

__version__ = "0.1.0"
