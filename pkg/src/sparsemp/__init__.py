"""Sparsity-corrected Marchenko-Pastur law for sparse sample covariance matrices.

Submodules
----------
ensemble     sparse matrix samplers, Dyson matrix flow, entry cumulants
law          corrected law: quartic self-consistent equation, density, edges
spectra      eigenvalues, Stieltjes transforms, linearised Green function
twref        GOE Tracy-Widom reference sample and KS distance
experiments  Monte Carlo checks of the local law and edge statistics
cli          command-line front end
"""

__version__ = "0.1.0"

from .ensemble import Distribution, EnsembleParams, sample_matrix  # noqa: E402,F401
from .law import LawParams, density, edge_newton, solve_self_consistent, stieltjes  # noqa: E402,F401
from .spectra import eigenvalues, empirical_stieltjes  # noqa: E402,F401
