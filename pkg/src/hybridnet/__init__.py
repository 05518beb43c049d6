"""PCANet, TFNet and HybridNet feature extractors with attention fusion."""

from types import ModuleType as _ModuleType

from .attention import AttentionModel, TrainConfig, attn_backward, attn_forward, predict, train
from .classifier import LinearModel, hinge_objective, svm_predict, svm_train
from .convnet import NetConfig, ResponseStack, convolve, fit_banks, run_hybridnet, run_pcanet, run_tfnet
from .data_io import (
    DatasetSplit,
    FeatureContainer,
    load_dataset,
    read_cifar,
    read_features,
    read_idx,
    read_mnist_variations,
    synth_dataset,
    write_features,
    write_sparse_features,
)
from .encoder import FeatureVector, block_histogram, encode, hash_responses, pca_reduce, spp_encode
from .errors import CorruptionError, FormatError, HybridNetError, InvalidArgument, NumericFailure
from .filter_bank import FilterBank, choose_ranks, pca_filters, tensor_filters
from .lomoi import LomoiConfig, LomoiResult, core_norm, lomoi
from .patches import PatchSet, extract_patches, stack_patchsets
from .pipeline import FeatureExtractor
from .spectral import leading_eigs
from .tensor_core import fold, mode_product, multi_mode_product, outer_product, unfold

__version__ = "0.1.0"

__all__ = sorted(n for n, v in globals().items() if not n.startswith("_") and not isinstance(v, _ModuleType))

