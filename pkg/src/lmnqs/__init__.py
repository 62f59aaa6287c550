"""Variational Monte Carlo with complex RBM wavefunctions, optimized by
stochastic reconfiguration or the linear method."""

from .hilbert import SymmetrySector, enumerate_basis, random_config, translate
from .operators import PauliHamiltonian, build_j1j2, build_tfi, jordan_wigner, marshall_transform
from .wavefunction import Rbm, init_params
from .sampling import SamplerConfig, SampleBatch, run_chain
from .estimators import assemble_lm, assemble_sr, compute_local_quantities, exact_expectations
from .optimizers import LmConfig, SrConfig, lm_step, sr_step
from .oracle import exact_ground_state, relative_error
from .harness import ExperimentConfig, RunRecord, train

__version__ = "0.1.0"
