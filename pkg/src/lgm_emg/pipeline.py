"""Per-trial processing shared by the CLI subcommands.

Each stage is a plain function of its inputs so trials can be farmed out to a
process pool; results are always gathered back in input order.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .empirical import HistogramConfig, bin_model, build_histogram
from .errors import LgmEmgError
from .metrics import area_difference, kl_divergence, likelihood_ratio_test, median
from .models import EmConfig, Family, FitResult, fit_family
from .recording import RecordingWarning, SegmentationConfig, extract_segment, load_recording, segment_action

ALL_FAMILIES = (Family.LGM, Family.SG, Family.SL, Family.SM)


@dataclass(frozen=True)
class PipelineConfig:
    families: tuple = ALL_FAMILIES
    em: EmConfig = field(default_factory=EmConfig)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    histogram: HistogramConfig = field(default_factory=HistogramConfig)

    def to_dict(self):
        return {
            "families": [f.value for f in self.families],
            "em": self.em.to_dict(),
            "segmentation": self.segmentation.to_dict(),
            "histogram": {"bins": self.histogram.bins, "span_sigmas": self.histogram.span_sigmas},
        }


def parse_families(text):
    fams = []
    for part in str(text).split(","):
        if part.strip():
            fam = Family.parse(part)
            if fam not in fams:
                fams.append(fam)
    return tuple(fams)


def load_action(path, cfg: PipelineConfig):
    """Load a recording and cut out its action segment."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RecordingWarning)
        series, meta = load_recording(path)
    seg = segment_action(series, cfg.segmentation)
    action = extract_segment(series, seg)
    info = {
        "start_index": seg.start_index,
        "end_index": seg.end_index,
        "start_s": seg.start_index / series.rate,
        "end_s": seg.end_index / series.rate,
        "method": "manual" if cfg.segmentation.manual else "detector",
    }
    notes = [str(w.message) for w in caught]
    return meta, info, action.samples, notes


def fit_trial(samples, cfg: PipelineConfig):
    return {fam: fit_family(samples, fam, cfg.em) for fam in cfg.families}


def fit_payload(name, meta, seg_info, fits, notes=()):
    return {
        "input": name,
        "metadata": meta.to_dict(),
        "metadata_defaulted": list(meta.defaulted),
        "segment": seg_info,
        "fits": {fam.value: fit.to_dict() for fam, fit in fits.items()},
        "notes": list(notes),
    }


def model_metrics(samples, fits, hist_cfg: HistogramConfig):
    """KLD and AD of every fitted model against the empirical pdf of ``samples``."""
    emp = build_histogram(samples, hist_cfg)
    out = {}
    for fam, fit in fits.items():
        masses = bin_model(fit.params, emp.edges)
        out[fam.value] = {
            "kld": kl_divergence(emp.mass, masses),
            "ad": area_difference(emp.mass, masses),
            "loglik": fit.loglik,
        }
    return out


def lrt_blocks(samples, fits):
    blocks = {}
    alt = fits.get(Family.LGM)
    if alt is None:
        return blocks
    for null in (Family.SG, Family.SL):
        if null in fits:
            blocks[f"LGM_vs_{null.value}"] = likelihood_ratio_test(fits[null], alt, samples).to_dict()
    return blocks


def fits_from_payload(payload):
    return {Family.parse(k): FitResult.from_dict(v) for k, v in payload["fits"].items()}


def fit_job(args):
    """Worker entry: ``(path, name, cfg)`` -> ``(payload, None)`` or ``(None, error)``."""
    path, name, cfg = args
    try:
        meta, seg_info, samples, notes = load_action(path, cfg)
        fits = fit_trial(samples, cfg)
        return fit_payload(name, meta, seg_info, fits, notes), None
    except LgmEmgError as exc:
        return None, _error_record(name, exc)


def compare_job(args):
    """Worker entry for the comparison report; ``fits`` may be precomputed payloads."""
    path, name, cfg, payload = args
    try:
        meta, seg_info, samples, notes = load_action(path, cfg)
        if payload is not None:
            fits = {f: fit for f, fit in fits_from_payload(payload).items() if f in cfg.families}
        else:
            fits = fit_trial(samples, cfg)
        entry = {
            "input": name,
            "metadata": meta.to_dict(),
            "segment": seg_info,
            "n": int(samples.size),
            "models": model_metrics(samples, fits, cfg.histogram),
            "lrt": lrt_blocks(samples, fits),
        }
        return entry, None
    except LgmEmgError as exc:
        return None, _error_record(name, exc)


def _error_record(name, exc):
    return {"input": name, "error": type(exc).__name__, "exit_code": exc.exit_code, "message": str(exc)}


def run_jobs(func, jobs, workers=1):
    """Map ``func`` over ``jobs`` preserving order, optionally in a process pool."""
    jobs = list(jobs)
    if workers <= 1 or len(jobs) <= 1:
        return [func(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, jobs))


def summarize(entries, cfg: PipelineConfig):
    """Assemble the comparison report from per-trial entries."""
    families = [f.value for f in cfg.families]

    def average(group):
        out = {}
        for fam in families:
            vals = [e["models"][fam] for e in group if fam in e["models"]]
            if vals:
                out[fam] = {
                    "kld": float(np.mean([v["kld"] for v in vals])),
                    "ad": float(np.mean([v["ad"] for v in vals])),
                    "n_trials": len(vals),
                }
        return out

    conditions = {}
    for e in entries:
        m = e["metadata"]
        conditions.setdefault((m["muscle"], m["activity"], float(m["weight_kg"])), []).append(e)
    by_condition = [
        {"muscle": k[0], "activity": k[1], "weight_kg": k[2], "models": average(v)}
        for k, v in sorted(conditions.items())
    ]
    lrt_summary = {}
    for key in ("LGM_vs_SG", "LGM_vs_SL"):
        ps = [e["lrt"][key]["p_value"] for e in entries if key in e["lrt"]]
        rejects = [e["lrt"][key]["reject_null_at_05"] for e in entries if key in e["lrt"]]
        if ps:
            lrt_summary[key] = {"median_p": median(ps), "reject_fraction": float(np.mean(rejects)), "n": len(ps)}
    return {
        "schema_version": 1,
        "bins": cfg.histogram.bins,
        "zero_mean": cfg.em.zero_mean,
        "families": families,
        "notes": {
            "metrics": "KLD and AD computed on per-bin probability masses against the empirical pdf",
            "segmentation": "manual override" if cfg.segmentation.manual else "double-threshold moving-RMS detector output",
            "lrt_df": "naive free-parameter difference; the mixture-weight boundary is ignored",
            "zero_mean": "locations pinned at 0" if cfg.em.zero_mean else "locations estimated",
        },
        "trials": entries,
        "averages": {"overall": average(entries), "by_condition": by_condition},
        "lrt_summary": lrt_summary,
    }


def relative_name(path, root):
    path, root = Path(path), Path(root) if root is not None else None
    if root is not None:
        try:
            return path.resolve().relative_to(root.resolve()).as_posix()
        except ValueError:
            pass
    return path.as_posix()
