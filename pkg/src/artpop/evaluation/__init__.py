from .diagnostics import (
    DiagnosticsBundle,
    diag_domain_sd,
    diag_donor_crosstab,
    diag_donor_usage,
    diag_marginals,
    diagnose,
    ecdf_table,
    ks_from_tables,
)
from .metrics import (
    ci_coverage,
    compute_metrics,
    empirical_mse,
    mse_ratio,
    mse_ratio_slope,
    records_frame,
    relative_bias,
    zero_proportion,
)

__all__ = [
    "DiagnosticsBundle",
    "ci_coverage",
    "compute_metrics",
    "diag_domain_sd",
    "diag_donor_crosstab",
    "diag_donor_usage",
    "diag_marginals",
    "diagnose",
    "ecdf_table",
    "empirical_mse",
    "ks_from_tables",
    "mse_ratio",
    "mse_ratio_slope",
    "records_frame",
    "relative_bias",
    "zero_proportion",
]
