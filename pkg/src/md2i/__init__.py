"""Multi-domain adversarial imputation, alignment and multi-task learning."""
from .data import DomainDataset, MissingSpec, load_tabular, save_tabular
from .errors import Md2iError
from .trainer import HyperParams, encode_dataset, impute_dataset, train_md2i

__all__ = ["DomainDataset", "HyperParams", "Md2iError", "MissingSpec", "encode_dataset", "impute_dataset",
           "load_tabular", "save_tabular", "train_md2i"]
__version__ = "0.1.0"
