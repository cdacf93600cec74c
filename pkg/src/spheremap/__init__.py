"""spheremap: MAP representation learning on the unit sphere with replay.

A small, self-contained stack for online class-incremental streams:

* sphere densities (von Mises-Fisher, angular Gaussian, and the general
  projected normal in three equivalent forms) built on exact special
  functions (`special`, `distributions`);
* posterior classification losses with fixed or estimated class
  directions and analytic gradients (`losses`);
* a from-scratch MLP encoder with reverse-mode gradients and Adam
  (`encoder`);
* stream construction with clear or blurry task boundaries, replay
  memory with reservoir sampling, and the online training loop with
  nearest-class-mean evaluation (`streams`, `replay`, `training`);
* a CLI for runs, ablation sweeps, density self-checks, and stream
  export (`spheremap ...`, see `spheremap --help`).
"""

from .distributions import (
    IsotropicParams,
    ProjectedNormalParams,
    agd_log_kernel,
    agd_log_kernel_ratio,
    agd_log_norm,
    agd_logpdf,
    log_uniform_density,
    log_unit_sphere_area,
    projected_normal_logpdf_closed,
    projected_normal_logpdf_recursive,
    projected_normal_logpdf_series,
    sample_projected_normal,
    unit_vector,
    vmf_log_kernel,
    vmf_log_norm,
    vmf_logpdf,
)
from .errors import ConvergenceError, MalformedFileError
from .special import (
    MomentSequence,
    gammaln,
    halfline_moment,
    halfline_moment_sequence,
    log_halfline_moment,
    log_parabolic_cylinder_neg,
    norm_cdf,
    norm_pdf,
    parabolic_cylinder_neg,
)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "MalformedFileError",
    "MomentSequence",
    "IsotropicParams",
    "ProjectedNormalParams",
    "agd_log_kernel",
    "agd_log_kernel_ratio",
    "agd_log_norm",
    "agd_logpdf",
    "gammaln",
    "halfline_moment",
    "halfline_moment_sequence",
    "log_halfline_moment",
    "log_parabolic_cylinder_neg",
    "log_uniform_density",
    "log_unit_sphere_area",
    "norm_cdf",
    "norm_pdf",
    "parabolic_cylinder_neg",
    "projected_normal_logpdf_closed",
    "projected_normal_logpdf_recursive",
    "projected_normal_logpdf_series",
    "sample_projected_normal",
    "unit_vector",
    "vmf_log_kernel",
    "vmf_log_norm",
    "vmf_logpdf",
    "__version__",
]
