from .diagnostics import ess_bulk, ess_mean, ess_tail, mcse_mean, split_rhat
from .fit import (
    SUMMARY_COLUMNS,
    IdentifiabilityWarning,
    diagnostics_report,
    final_subscribers,
    fit_model,
    format_summary,
    summarize,
)
from .nuts import PosteriorDraws, SamplerConfig, nuts_sample

__all__ = [
    "SUMMARY_COLUMNS", "IdentifiabilityWarning", "PosteriorDraws", "SamplerConfig",
    "diagnostics_report", "ess_bulk", "ess_mean", "ess_tail", "final_subscribers", "fit_model",
    "format_summary", "mcse_mean", "nuts_sample", "split_rhat", "summarize",
]
