"""Quantitative evaluation: image/segmentation metrics, biomarkers, agreement statistics."""

from activecine.analysis.biomarkers import (
    BIOMARKERS,
    BiomarkerReport,
    biomarkers_from_volumes,
    compute_biomarkers,
    ejection_fraction,
)
from activecine.analysis.metrics import LABELS, class_dsc, dsc, mae, mean_dsc, psnr, ssim
from activecine.analysis.stats import BlandAltmanStats, bland_altman, diff_measures, pearson

__all__ = [
    "BIOMARKERS", "BiomarkerReport", "BlandAltmanStats", "LABELS",
    "biomarkers_from_volumes", "bland_altman", "class_dsc", "compute_biomarkers",
    "diff_measures", "dsc", "ejection_fraction", "mae", "mean_dsc", "pearson", "psnr", "ssim",
]
