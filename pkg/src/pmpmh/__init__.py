"""Point mass proposal Metropolis-Hastings for state-space models."""

from .baselines import csmc_sweep, run_pg, run_pgas
from .diagnostics import bgr_statistic, effective_sample_size, summarize
from .estimators import BlowflySampler, PGASSampler, PGSampler, PMPMHSampler
from .grid import (
    DataQuantileGrid,
    EqualGrid,
    Grid,
    StateQuantileGrid,
    build_data_quantile_grid,
    build_equal_grid,
    build_state_quantile_grid,
    cell_geometry,
    locate_cell,
)
from .hmm import DiscreteHmm, build_discrete_hmm, floor_and_normalize
from .ffbs import backward_sample, forward_filter, path_log_probability
from .rng import derive_stream
from .sampler import ChainOutput, WithinCellProposal, run_chain
from .ssm import BlockScheme, ModelSpec, log_block_conditional, log_joint_likelihood

__version__ = "0.1.0"

__all__ = [
    "BlockScheme",
    "BlowflySampler",
    "ChainOutput",
    "DataQuantileGrid",
    "DiscreteHmm",
    "EqualGrid",
    "Grid",
    "ModelSpec",
    "PGASSampler",
    "PGSampler",
    "PMPMHSampler",
    "StateQuantileGrid",
    "WithinCellProposal",
    "backward_sample",
    "bgr_statistic",
    "build_data_quantile_grid",
    "build_discrete_hmm",
    "build_equal_grid",
    "build_state_quantile_grid",
    "cell_geometry",
    "csmc_sweep",
    "derive_stream",
    "effective_sample_size",
    "floor_and_normalize",
    "forward_filter",
    "locate_cell",
    "log_block_conditional",
    "log_joint_likelihood",
    "path_log_probability",
    "run_chain",
    "run_pg",
    "run_pgas",
    "summarize",
]
