"""Compressive fluorescence microscopy with binary Hadamard patterns."""
from .errors import (CFMError, DataError, DegenerateRangeError, DegenerateSpectrumError,
                     EmptyBandError, ParameterError, PatternIndexError, SizeError,
                     ValidationError)
from .forward import (BeadPhantomSpec, MeasurementSet, PsfSpec, acquire, acquire_raster,
                      apply_psf, make_bead_phantom, make_spike_phantom)
from .hadamard import (HadamardIndexer, SensingOperator, adjoint_apply, coherence, fwht_1d,
                       fwht_2d, measure, pattern_2d, sequency_of)
from .hyperspectral import (RGB_BANDS, BandSpec, HyperCube, extract_spectrum, hyper_acquire,
                            hyper_reconstruct, hyper_solve, pool_bands)
from .metrics import (NoiseStudyConfig, dc_offset_decomposition,
                      hadamard_pseudo_inverse_estimate, mse_cs_sparse_theory, mse_rs_theory,
                      psnr, variance_study)
from .sampling import PatternSelection, select_full, select_half_half, select_random
from .solver import (ReconResult, SolverConfig, alpha_from_epsilon, default_alpha,
                     operator_norm_estimate, reconstruct)
from .sparsity import SparsityBasis, analyze, scale_weights, soft_threshold, synthesize

__all__ = [name for name in dir() if not name.startswith("_")]
