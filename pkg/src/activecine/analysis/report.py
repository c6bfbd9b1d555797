"""
Corpus-level reporting: per-step CSV rows, summary tables and agreement
statistics computed from acquisition logs (given as plain dicts, the JSON
form written by the engine).

Summary sections, per reconstruction method:

- passing scan time (mean, SD, median; per subject);
- image metrics and per-class DSC at the passing step;
- absolute and relative biomarker differences against the ground truth;
- Bland-Altman statistics and Pearson r per biomarker.
"""

from __future__ import annotations

import csv
import io
import json
from importlib import resources

import numpy as np

from activecine.analysis.biomarkers import BIOMARKERS
from activecine.analysis.stats import bland_altman, diff_measures, pearson

CSV_COLUMNS = ("subject", "recon", "scan_time_s", "P", "R", "MAE", "PSNR", "SSIM",
               "DSC_LV", "DSC_MYO", "DSC_RV", "LVEDV", "LVESV", "LVEF", "RVEDV", "RVESV", "RVEF",
               "QC1", "QC2")
PAIR_COLUMNS = ("recon", "biomarker", "subject", "measured", "reference")
AGREEMENT_COLUMNS = ("recon", "biomarker", "n", "bias", "sd", "lower_loa", "upper_loa",
                     "lower_loa_ci_lo", "lower_loa_ci_hi", "upper_loa_ci_lo", "upper_loa_ci_hi",
                     "p_value", "pearson_r")
SUMMARY_SCHEMA_VERSION = 1
CASCADE_METHODS = ("cascade-tv", "cascade-conv")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "pass" if v else "fail"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def step_rows(log):
    """One CSV row per acquisition step of a log dict."""
    rows = []
    for s in log["steps"]:
        m = s.get("metrics") or {}
        d = s.get("dsc") or {}
        b = s.get("biomarkers") or {}
        qc2 = s.get("qc2")
        row = {
            "subject": log["subject"], "recon": log["recon"], "scan_time_s": s["scan_time_s"],
            "P": s["P"], "R": s["R"], "MAE": m.get("MAE"), "PSNR": m.get("PSNR"), "SSIM": m.get("SSIM"),
            "DSC_LV": d.get("lv"), "DSC_MYO": d.get("myo"), "DSC_RV": d.get("rv"),
            **{k: b.get(k) for k in BIOMARKERS},
            "QC1": s["qc1"]["passed"], "QC2": None if qc2 is None else qc2["passed"],
        }
        rows.append(row)
    return rows


def rows_to_csv(rows, columns=CSV_COLUMNS):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def _mean_sd(values):
    vals = [float(v) for v in values if v is not None and np.isfinite(v)]
    if not vals:
        return {"mean": None, "sd": None, "n": 0}
    sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    return {"mean": float(np.mean(vals)), "sd": sd, "n": len(vals)}


def _passing_step(log):
    if log.get("status") != "passed" or log.get("best_step") is None:
        return None
    return log["steps"][log["best_step"]]


def biomarker_pairs(logs):
    """(recon, biomarker, subject, measured, reference) for every passed session."""
    pairs = []
    for log in logs:
        step = _passing_step(log)
        gt = log.get("gt_biomarkers")
        if step is None or gt is None or not step.get("biomarkers"):
            continue
        for k in BIOMARKERS:
            a, b = step["biomarkers"].get(k), gt.get(k)
            if a is not None and b is not None:
                pairs.append({"recon": log["recon"], "biomarker": k, "subject": log["subject"],
                              "measured": float(a), "reference": float(b)})
    return pairs


def method_summary(logs):
    passed = [lg for lg in logs if lg.get("status") == "passed"]
    times = {lg["subject"]: lg["passed_at_s"] for lg in passed}
    steps = [_passing_step(lg) for lg in passed]
    out = {
        "n_subjects": len(logs),
        "n_passed": len(passed),
        "n_exhausted": sum(lg.get("status") == "exhausted" for lg in logs),
        "n_failed": sum(lg.get("status") == "failed" for lg in logs),
        "passing_time_s": {**_mean_sd(times.values()),
                           "median": float(np.median(list(times.values()))) if times else None,
                           "per_subject": dict(sorted(times.items()))},
        "image_metrics": {k: _mean_sd(s["metrics"][k] for s in steps) for k in ("MAE", "PSNR", "SSIM")},
        "dsc": {k.upper(): _mean_sd((s.get("dsc") or {}).get(k) for s in steps)
                for k in ("lv", "myo", "rv")},
    }
    pairs = biomarker_pairs(logs)
    diffs, ba, corr = {}, {}, {}
    for k in BIOMARKERS:
        sel = [p for p in pairs if p["biomarker"] == k]
        dm = [diff_measures(p["measured"], p["reference"]) for p in sel]
        diffs[k] = {"absolute": _mean_sd(d["absolute"] for d in dm),
                    "relative_pct": _mean_sd(d["relative_pct"] for d in dm)}
        xy = [(p["measured"], p["reference"]) for p in sel]
        ba[k] = bland_altman(xy).to_dict() if len(xy) >= 3 else None
        corr[k] = pearson([a for a, _ in xy], [b for _, b in xy]) if len(xy) >= 2 else None
    out["biomarker_differences"] = diffs
    out["bland_altman"] = ba
    out["pearson"] = corr
    return out


def compare_methods(logs_by_method):
    """Per-subject passing-time comparison of each cascade method against nufft."""
    base = logs_by_method.get("nufft")
    if base is None:
        return {}
    t_base = {lg["subject"]: lg.get("passed_at_s") for lg in base}
    out = {}
    for method in CASCADE_METHODS:
        if method not in logs_by_method:
            continue
        t_cas = {lg["subject"]: lg.get("passed_at_s") for lg in logs_by_method[method]}
        common = sorted(set(t_base) & set(t_cas))
        inf = float("inf")
        earlier = [(t_cas[s] if t_cas[s] is not None else inf) <= (t_base[s] if t_base[s] is not None else inf)
                   for s in common]
        out[f"{method}_vs_nufft"] = {
            "n_subjects": len(common),
            "fraction_earlier_or_equal": float(np.mean(earlier)) if common else None,
        }
    return out


def summarize(logs):
    """Summary dict for a list of log dicts (any mix of subjects/methods)."""
    by_method = {}
    for lg in sorted(logs, key=lambda lg: (lg["recon"], lg["subject"])):
        by_method.setdefault(lg["recon"], []).append(lg)
    return {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "methods": {m: method_summary(lgs) for m, lgs in by_method.items()},
        "comparison": compare_methods(by_method),
    }


def agreement_rows(summary):
    """Flatten per-method Bland-Altman stats and Pearson r into CSV rows."""
    rows = []
    for method, ms in summary["methods"].items():
        for k in BIOMARKERS:
            ba = ms["bland_altman"].get(k)
            row = {"recon": method, "biomarker": k, "pearson_r": ms["pearson"].get(k)}
            if ba is not None:
                row.update({c: ba[c] for c in ("n", "bias", "sd", "lower_loa", "upper_loa", "p_value")})
                row["lower_loa_ci_lo"], row["lower_loa_ci_hi"] = ba["lower_loa_ci"]
                row["upper_loa_ci_lo"], row["upper_loa_ci_hi"] = ba["upper_loa_ci"]
            rows.append(row)
    return rows


def summary_json(summary):
    return json.dumps(_finite(summary), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _finite(obj):
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def summary_schema():
    """The JSON schema that summary files validate against."""
    text = resources.files("activecine").joinpath("schemas/summary.schema.json").read_text()
    return json.loads(text)
