"""Transductive regression machine translation.

Per test sentence: select related training pairs, learn a sparse linear map
between source and target n-gram feature spaces, decode the predicted target
features into a sentence over a De Bruijn graph, or export the map as a
Moses-style phrase table.
"""

__version__ = "0.1.0"

from regmt.corpus import (
    AlignmentError,
    DataSplit,
    ParallelCorpus,
    Sentence,
    SynthSpec,
    load_parallel,
    select_eval_split,
    synth_generate,
)
from regmt.features import (
    FeatureIndex,
    FeatureMatrix,
    SparseVector,
    build_matrices,
    coverage,
    extract,
    spectrum_kernel,
)
from regmt.regression import (
    FsrConfig,
    MappingMatrix,
    RidgeConfig,
    fit_fsr,
    fit_ridge,
    predict,
    sparsity_stats,
)

__all__ = [
    "AlignmentError",
    "DataSplit",
    "FeatureIndex",
    "FeatureMatrix",
    "FsrConfig",
    "MappingMatrix",
    "ParallelCorpus",
    "RidgeConfig",
    "Sentence",
    "SparseVector",
    "SynthSpec",
    "build_matrices",
    "coverage",
    "extract",
    "fit_fsr",
    "fit_ridge",
    "load_parallel",
    "predict",
    "select_eval_split",
    "sparsity_stats",
    "spectrum_kernel",
    "synth_generate",
]
