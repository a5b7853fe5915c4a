"""Predictive coding vs backprop: training loops, trust-region analysis,
and saddle-escape experiments on small networks."""

from .network import (
    ActivityState,
    Batch,
    NetworkSpec,
    WeightSet,
    bp_grad,
    feedforward,
    init_weights,
    loss,
    predict,
)
from .energy import (
    InferenceDivergenceError,
    InferenceResult,
    InferenceSchedule,
    Precisions,
    analytic_equilibrium_1mlp,
    energy,
    energy_activity_grads,
    energy_weight_grads,
    equilibrated_energy_1mlp,
    run_inference,
)
from .analysis import (
    CriticalPointReport,
    FisherMatrix,
    classify_critical_point,
    cosine_similarity,
    equilibrated_gradient_1mlp,
    fisher_information,
    gradient_flow,
    hessians_1mlp,
    interpolated_weight_grad,
    landscape_grid,
    loss_gradient_1mlp,
    minimum_eigs_1mlp,
    near_saddle_iterate,
    optimal_direction_1mlp,
    perturbation_robustness,
    saddle_eigs_1mlp,
    taylor_residual,
    tr_solution,
)
from .data import (
    Dataset,
    IdxFormatError,
    RegressionTask,
    load_dataset_cache,
    load_mnist,
    sample_regression,
    save_dataset_cache,
)
from .trainers import (
    EpochRecord,
    GridSearchResult,
    TrainConfig,
    TrainRecord,
    bp_step,
    grid_search,
    pc_step,
    train,
    train_epochs,
    trn_step_1mlp,
)

__version__ = "0.1.0"
