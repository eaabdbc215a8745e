from .metrics import (GaussianStats, chi_mean, diversity, fid, fit_gaussian, mm_dist,
                      multimodality, r_precision, summarize)

__all__ = ["GaussianStats", "chi_mean", "diversity", "fid", "fit_gaussian", "mm_dist",
           "multimodality", "r_precision", "summarize"]
