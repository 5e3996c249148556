"""Learned distributed estimation of a communication graph's algebraic connectivity.

A message-passing network (linear message transform, GRU state update, MLP
readout) is trained against an exact spectral oracle to predict the second
smallest Laplacian eigenvalue, either per node (local readout) or per graph
(global readout), and a round-synchronous multi-agent simulator runs the local
variant with nothing but neighbor-to-neighbor message exchange.
"""

__version__ = "0.1.0"

from .graphs import (
    Graph,
    GraphGenConfig,
    generate_connected_graph,
    is_connected,
    laplacian,
    permute,
)
from .spectral import (
    LaplacianSpectrum,
    algebraic_connectivity,
    eigenvalues_symmetric,
    jacobi_eigensystem,
    laplacian_spectrum,
)
from .model import (
    ForwardCache,
    Gradients,
    GraphStack,
    GruParams,
    ModelParams,
    ReadoutParams,
    backward,
    backward_stack,
    build_stack,
    flatten_params,
    forward,
    forward_stack,
    grad_check,
    gru_update,
    init_params,
    initial_state,
    load_params,
    message_step,
    param_count,
    readout_global,
    readout_local,
    save_params,
    unflatten_params,
)
from .data import Dataset, generate_dataset, load_dataset, save_dataset
from .training import (
    AdamState,
    EpochRecord,
    Metrics,
    TrainConfig,
    adam_step,
    evaluate,
    generalization_sweep,
    l1_error,
    l2_loss,
    train,
)
from .simulation import (
    Agent,
    NodeEstimateReport,
    RoundTrace,
    node_estimate_report,
    run_simulation,
    run_simulation_with_drop,
)
