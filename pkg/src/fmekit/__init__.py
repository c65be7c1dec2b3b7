"""Forward marginal effects for black-box regression models.

Ask "what happens to the prediction if temperature rises 5 degrees?"
and get per-observation answers: the forward marginal effect (FME) is
the prediction change under a concrete step in one or more feature
values, optionally with a non-linearity measure (NLM) grading how well
a straight line describes the prediction along the step path. On top
of the per-observation values sit global averages (AME), per-feature
summary tables, extrapolation-point filtering, and recursive
partitioning into subgroups with homogeneous effects (cAME).
"""

from fmekit.aggregate import AmeRow, AmeTable, ame, ame_table, default_step
from fmekit.dataset import (
    ColumnKind,
    ColumnStats,
    Dataset,
    FeatureEnvelope,
    column_stats,
    envelope,
    load_csv,
    read_schema,
    save_csv,
)
from fmekit.errors import ComputationError, FmeError, ValidationError
from fmekit.fme import (
    CategoricalStep,
    Envelope,
    FmeResultSet,
    NumericStep,
    compute_fme,
    parse_step,
    suggest_step,
)
from fmekit.nlm import NlmSettings, average_nlm, compute_nlm, simpson38
from fmekit.partition import (
    CameSummary,
    ExactGroups,
    MaxSd,
    PartitioningOptions,
    PartitionTree,
    came_summary,
    fit_partition,
    prune_to_k,
)
from fmekit.predictor import (
    AnalyticPredictor,
    CartOptions,
    CartTree,
    ForestOptions,
    LinearModel,
    ModelSchema,
    Predictor,
    RandomForest,
    load_model,
    save_model,
    train_cart,
    train_forest,
    train_linear,
)
from fmekit.viz import (
    PlotData,
    bivariate_plot_data,
    categorical_plot_data,
    hexbin,
    higher_order_plot_data,
    partition_plot_data,
    render_svg,
    univariate_plot_data,
)

__version__ = "0.1.0"

__all__ = [
    "AmeRow", "AmeTable", "ame", "ame_table", "default_step",
    "ColumnKind", "ColumnStats", "Dataset", "FeatureEnvelope",
    "column_stats", "envelope", "load_csv", "read_schema", "save_csv",
    "ComputationError", "FmeError", "ValidationError",
    "CategoricalStep", "Envelope", "FmeResultSet", "NumericStep",
    "compute_fme", "parse_step", "suggest_step",
    "NlmSettings", "average_nlm", "compute_nlm", "simpson38",
    "CameSummary", "ExactGroups", "MaxSd", "PartitioningOptions",
    "PartitionTree", "came_summary", "fit_partition", "prune_to_k",
    "AnalyticPredictor", "CartOptions", "CartTree", "ForestOptions",
    "LinearModel", "ModelSchema", "Predictor", "RandomForest",
    "load_model", "save_model", "train_cart", "train_forest", "train_linear",
    "PlotData", "bivariate_plot_data", "categorical_plot_data", "hexbin",
    "higher_order_plot_data", "partition_plot_data", "render_svg",
    "univariate_plot_data",
    "__version__",
]
