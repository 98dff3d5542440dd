"""Sparse least-squares regression on 2-bit packed genotype matrices.

The package keeps genotypes in the PLINK 2-bit encoding end to end,
standardizes them on the fly, fits sparsity-constrained models by
projected gradient descent with hard thresholding, selects the model size
by cross-validation, and ships a simulation harness plus a CLI.
"""

__version__ = "0.1.0"

from .geno_matrix import (CovariateBlock, DenseDesign, PackedGenotypeMatrix,
                          StandardizedView, ax, aty, column_stats,
                          decompress_active, set_worker_threads)
from .iht import (FitResult, IhtConfig, IhtState, RankDeficientWarning, SparseModel,
                  fit, hard_threshold, iht_step, normalized_step, project_sparse,
                  refit_least_squares)
from .model_select import CvPlan, CvReport, cv_iht, make_folds, predict
from .plink_io import (PlinkFormatError, SampleRecord, VariantRecord, read_bed,
                       read_bim, read_fam, read_plink_triple, write_bed)
from .simulate import (SimulationReport, SimulationSpec, aggregate_reports,
                       dense_path, heritability, precision_recall,
                       random_packed_matrix, run_experiment, simulate_phenotype,
                       straddling_path)

__all__ = [
    "CovariateBlock", "CvPlan", "CvReport", "DenseDesign", "FitResult",
    "IhtConfig", "IhtState", "PackedGenotypeMatrix", "PlinkFormatError",
    "RankDeficientWarning", "SampleRecord", "SimulationReport", "SimulationSpec",
    "SparseModel", "StandardizedView", "VariantRecord", "aggregate_reports",
    "ax", "aty", "column_stats", "cv_iht", "decompress_active", "dense_path",
    "fit", "hard_threshold", "heritability", "iht_step", "make_folds",
    "normalized_step", "precision_recall", "predict", "project_sparse",
    "random_packed_matrix", "read_bed", "read_bim", "read_fam",
    "read_plink_triple", "refit_least_squares", "run_experiment",
    "set_worker_threads", "simulate_phenotype", "straddling_path", "write_bed",
]
