"""Numerical lab for weighted potentials, Bergman kernels, and random
zeros on the Riemann sphere."""

__version__ = "0.1.0"

from .envelope import (
    EnvelopeResult,
    WeightField,
    envelope_from_radial,
    equilibrium_measure,
    parse_weight,
    psh_envelope,
    radial_envelope,
    radial_oracle,
)
from .bergman import (
    BergmanBasis,
    KernelField,
    bergman_basis,
    bergman_kernel,
    gram_matrix,
    kernel_vs_envelope,
    orthonormal_basis,
    rate_fit,
    scaled_gram_cond,
)
from .geometry import (
    Chart,
    EmpiricalMeasure,
    QuadratureGrid,
    RadialRegion,
    annulus_region,
    build_grid,
    disk_region,
    fs_integral,
)
from .measures import (
    MeasureSpec,
    MomentReport,
    moment_estimate,
    moment_growth_class,
    parse_measure,
    sample,
    sample_batch,
)
from .zeros import (
    LogNormField,
    SectionSample,
    ZeroSet,
    empirical_zero_measure,
    expectation_current,
    find_roots,
    lognorm_field,
    lognorm_l1,
    sample_section,
    weak_convergence_stat,
)

__all__ = [name for name in dir() if not name.startswith("_")]
