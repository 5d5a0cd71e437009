"""Matrix-factorization recommender: NMF, truncated and iterative SVD, SGD-MF,
K-Means user segmentation, and an RMSE/MAE evaluation sweep."""

from .clustering import ClusterModel, assign_to_clusters, kmeans_fit, user_latent_features
from .evaluation import (
    EvalSplit,
    MetricPair,
    SweepReport,
    SweepSettings,
    error_metrics,
    evaluate_model,
    run_sweep,
    split_ratings,
)
from .factorization import (
    NmfModel,
    SgdMfModel,
    SvdIterResult,
    SvdModel,
    nmf_fit,
    predict_rating,
    sgd_mf_fit,
    svd_iterative,
    svd_truncated,
)
from .ratings import (
    FillKind,
    FillStrategy,
    RatingScale,
    RatingTriple,
    SparseRatingMatrix,
    build_matrix,
    impute_dense,
    load_ratings,
    rescale,
)
from .recommender import Recommendation, cluster_top_n, top_n

__version__ = "0.1.0"
