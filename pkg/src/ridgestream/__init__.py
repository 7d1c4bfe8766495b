"""Low-memory incremental ridge solutions for broad learning networks."""

from .full import (
    FullState,
    accuracy,
    full_add_enhancement,
    full_add_feature,
    full_add_inputs,
    full_add_nodes,
    full_add_rows,
    full_fit,
    full_init,
)
from .learners import (
    RecursiveInputState,
    SqrtInputState,
    SqrtNodeState,
    node_add,
    node_bootstrap,
    node_fit,
    node_update,
    predict,
    rec_add_inputs,
    rec_bootstrap,
    rec_fit,
    rec_update,
    sqrt_add_inputs,
    sqrt_bootstrap,
    sqrt_fit,
    sqrt_update,
)
from .linalg import BatchConfig, NotSPDError, inv_chol, phi_chol
from .network import NetworkLayout, NetworkParams
from .oracle import direct_ridge

__version__ = "0.1.0"
