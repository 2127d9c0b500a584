"""Aggregate analyses over trial results and report emission.

Aggregation order is fixed: success rates are averaged over seeds first,
giving one rate per (model, layout) where a model is a (pipeline, data
fraction) pair. Relative success divides that rate by the baseline's rate at
the same data fraction and layout; it is undefined (``None``) when the
baseline never succeeded. Cross-layout and cross-model means skip undefined
entries and tally them separately.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import KINDS, enumerate_pipelines
from .experiment import BASELINE, TrialResult

TRAIN_LAYOUT = "train"
TEST_LAYOUTS = ("test1", "test2", "test3", "test4")

# per-augmentation means reported for the original game environment, shown
# next to the computed values for comparison only
REFERENCE_GROUP_MEANS = {"sca": 1.27, "sm": 1.26, "drc": 1.26, "gauss": 1.25, "uni": 1.02, "drs": 0.50}
REFERENCE_COMBINATIONS = 38


class ReportError(ValueError):
    pass


def relative_success(model_rate: float, baseline_rate: float):
    """``model_rate / baseline_rate``, or None when the baseline rate is 0."""
    for r in (model_rate, baseline_rate):
        if not 0.0 <= r <= 1.0:
            raise ReportError(f"success rate {r} outside [0, 1]")
    if baseline_rate <= 0.0:
        return None
    return model_rate / baseline_rate


def model_label(pipeline: str, fraction: float) -> str:
    """Plot label, e.g. ``sca+sm_r80``."""
    return f"{pipeline}_r{int(round(fraction * 100))}"


def _mean(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def _std(values):
    vals = [v for v in values if v is not None]
    return float(np.std(vals)) if vals else None


def _kinds(pipeline: str) -> set:
    if pipeline == BASELINE:
        return set()
    return {tok.split("_")[0] for tok in pipeline.split("+")}


@dataclass
class SweepReport:
    trials: list
    test_layouts: tuple = TEST_LAYOUTS
    train_layout: str = TRAIN_LAYOUT
    failures: list = field(default_factory=list)
    jobs_run: int = 0

    @classmethod
    def from_trials(cls, trials, test_layouts=None, train_layout=TRAIN_LAYOUT) -> "SweepReport":
        """Test layouts default to every evaluated layout other than the training one."""
        trials = sorted(trials, key=lambda t: t.key)
        keys = [t.key for t in trials]
        if len(set(keys)) != len(keys):
            raise ReportError("duplicate trial keys")
        if test_layouts is None:
            present = {t.layout for t in trials} - {train_layout}
            test_layouts = sorted(present) if present else TEST_LAYOUTS
        return cls(trials, tuple(test_layouts), train_layout)

    # raw aggregation ----------------------------------------------------
    @property
    def layouts(self) -> list:
        return sorted({t.layout for t in self.trials}, key=lambda l: (l != self.train_layout, l))

    def models(self, include_baseline: bool = False) -> list:
        ms = sorted({t.model for t in self.trials})
        return [m for m in ms if include_baseline or m[0] != BASELINE]

    def rates(self) -> dict:
        """{(model, layout): [success_rate per seed, ordered by seed]}"""
        out = defaultdict(list)
        for t in sorted(self.trials, key=lambda t: (t.model, t.layout, t.seed)):
            out[(t.model, t.layout)].append(t.success_rate)
        return dict(out)

    def mean_rates(self) -> dict:
        return {k: float(np.mean(v)) for k, v in self.rates().items()}

    def std_rates(self) -> dict:
        return {k: float(np.std(v)) for k, v in self.rates().items()}

    def relative(self) -> dict:
        """{(model, layout): relative success or None}"""
        means = self.mean_rates()
        out = {}
        for (model, layout), rate in means.items():
            base = means.get(((BASELINE, model[1]), layout))
            if base is None:
                continue
            out[(model, layout)] = relative_success(rate, base)
        return out

    def baseline_failed(self) -> list:
        return sorted(k for k, v in self.relative().items() if v is None and k[0][0] != BASELINE)

    def check_baselines(self) -> list:
        """(fraction, layout) pairs used by augmented models but lacking baseline trials."""
        have = {(t.data_fraction, t.layout) for t in self.trials if t.pipeline == BASELINE}
        need = {(t.data_fraction, t.layout) for t in self.trials if t.pipeline != BASELINE}
        return sorted(need - have)

    # analyses --------------------------------------------------------------
    def select_cohorts(self, top_k: int = 19, bottom_band: tuple = (0.0, 0.39)):
        """Top models by mean training-layout success (plus the best baseline)
        and the models whose training-layout relative rate lies in the band."""
        models = self.models()
        if not models:
            raise ReportError("report has no augmented models")
        if top_k > len(models):
            warnings.warn(f"top_k={top_k} exceeds the {len(models)} models; taking all", stacklevel=2)
        means = self.mean_rates()
        rel = self.relative()
        ranked = sorted(models, key=lambda m: (-means.get((m, self.train_layout), -1.0), m[0], m[1]))
        top = ranked[:top_k]
        baselines = self.models(include_baseline=True)
        baselines = [m for m in baselines if m[0] == BASELINE]
        if baselines:
            best = sorted(baselines, key=lambda m: (-means.get((m, self.train_layout), -1.0), m[1]))[0]
            top = top + [best]
        lo, hi = bottom_band
        bottom = [m for m in models
                  if rel.get((m, self.train_layout)) is not None and lo <= rel[(m, self.train_layout)] <= hi]
        return top, bottom

    def consistency_table(self) -> list:
        """[(model, count of layouts with relative > 1, complete flag)], best first."""
        rel = self.relative()
        layouts = [self.train_layout] + list(self.test_layouts)
        rows = []
        for m in self.models():
            vals = [rel.get((m, l)) for l in layouts]
            count = sum(1 for v in vals if v is not None and v > 1.0)
            complete = all((m, l) in rel for l in layouts)
            rows.append((m, count, complete))
        rows.sort(key=lambda r: (-r[1], r[0]))
        return rows

    def model_test_means(self) -> dict:
        """Mean relative success over test layouts for each augmented model."""
        rel = self.relative()
        out = {}
        for m in self.models():
            out[m] = _mean(rel.get((m, l)) for l in self.test_layouts)
        return out

    def group_by_augmentation(self, models=None) -> dict:
        """{kind: (mean relative success over member models, member count)}."""
        per_model = self.model_test_means()
        if models is not None:
            per_model = {m: v for m, v in per_model.items() if m in set(models)}
        out = {}
        for kind in KINDS:
            members = [v for m, v in per_model.items() if kind in _kinds(m[0]) and v is not None]
            out[kind] = (float(np.mean(members)) if members else None, len(members))
        return out

    def cohort_table(self, cohort) -> list:
        """Per-layout mean/std of relative success over a cohort and the number
        of its models beating the baseline."""
        rel = self.relative()
        rows = []
        for layout in [self.train_layout] + list(self.test_layouts):
            vals = [rel.get((m, layout)) for m in cohort if m[0] != BASELINE]
            defined = [v for v in vals if v is not None]
            rows.append({
                "layout": layout,
                "mean_relative": _mean(defined),
                "std_relative": _std(defined),
                "outperform_count": sum(1 for v in defined if v > 1.0),
                "undefined_count": len(vals) - len(defined),
            })
        return rows

    def best_model(self, min_defined: int = 2):
        """Augmented model with the highest mean test-layout relative success."""
        rel = self.relative()
        best, best_val = None, -math.inf
        for m, v in sorted(self.model_test_means().items()):
            defined = sum(1 for l in self.test_layouts if rel.get((m, l)) is not None)
            if v is not None and defined >= min_defined and v > best_val:
                best, best_val = m, v
        return best

    def summary(self, top_k: int = 19, bottom_band=(0.0, 0.39)) -> dict:
        if not self.trials:
            raise ReportError("no trials")
        means, stds, rel = self.mean_rates(), self.std_rates(), self.relative()
        layouts = self.layouts
        top, bottom = self.select_cohorts(min(top_k, len(self.models())), bottom_band) if self.models() else ([], [])
        n_enum = len(enumerate_pipelines(3))
        models_out = []
        for m in self.models(include_baseline=True):
            models_out.append({
                "label": model_label(*m),
                "pipeline": m[0],
                "data_fraction": m[1],
                "mean_success": {l: means.get((m, l)) for l in layouts},
                "std_success": {l: stds.get((m, l)) for l in layouts},
                "relative_success": {l: rel.get((m, l)) for l in layouts},
            })
        best = self.best_model()
        return {
            "trial_count": len(self.trials),
            "layouts": layouts,
            "test_layouts": list(self.test_layouts),
            "aggregation_order": ["seeds", "layouts", "models"],
            "models": models_out,
            "top_cohort": [model_label(*m) for m in top],
            "bottom_cohort": [model_label(*m) for m in bottom],
            "cohort_table": self.cohort_table(top),
            "consistency": [{"label": model_label(*m), "count": c, "complete": ok}
                            for m, c, ok in self.consistency_table()],
            "groups": {k: {"mean_relative": v, "models": n, "reference_mean": REFERENCE_GROUP_MEANS[k]}
                       for k, (v, n) in self.group_by_augmentation().items()},
            "best_model": model_label(*best) if best else None,
            "baseline_failed": [{"label": model_label(*m), "layout": l} for m, l in self.baseline_failed()],
            "missing_baselines": [{"data_fraction": f, "layout": l} for f, l in self.check_baselines()],
            "combination_count": {"enumerated": n_enum, "reference": REFERENCE_COMBINATIONS,
                                  "delta": n_enum - REFERENCE_COMBINATIONS, "status": "unresolved"},
            "failures": len(self.failures),
        }


# --- emission -------------------------------------------------------------

TRIAL_FIELDS = ("pipeline", "data_fraction", "seed", "layout", "successes", "episodes",
                "success_rate", "mean_episode_length")


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")  # RFC 4180 line endings
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in r])
    return buf.getvalue()


def emit_report(report: SweepReport, out_dir, top_k: int = 19, bottom_band=(0.0, 0.39)) -> list:
    """Write trials.csv, summary.json, consistency.csv, groups.csv and plot data."""
    if not report.trials:
        raise ReportError("no trials")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = report.summary(top_k, bottom_band)
    files = {}
    files["trials.csv"] = _csv([[getattr(t, f) for f in TRIAL_FIELDS] for t in report.trials], TRIAL_FIELDS)
    files["summary.json"] = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    files["consistency.csv"] = _csv(
        [[c["label"], c["count"], int(c["complete"])] for c in summary["consistency"]],
        ("model", "layouts_beating_baseline", "complete"))
    files["groups.csv"] = _csv(
        [[k, g["mean_relative"], g["models"], g["reference_mean"]] for k, g in summary["groups"].items()],
        ("augmentation", "mean_relative_success", "models", "reference_mean"))
    files["cohort_table.csv"] = _csv(
        [[r["layout"], r["mean_relative"], r["std_relative"], r["outperform_count"], r["undefined_count"]]
         for r in summary["cohort_table"]],
        ("layout", "mean_relative_success", "std_relative_success", "outperform_count", "undefined_count"))

    rel = report.relative()
    top, bottom = (report.select_cohorts(min(top_k, len(report.models())), bottom_band)
                   if report.models() else ([], []))

    def plot_rows(models, layouts):
        rows = []
        for m in models:
            vals = [rel.get((m, l)) for l in layouts]
            defined = [v for v in vals if v is not None]
            mean = _mean(defined)
            sem = float(np.std(defined) / math.sqrt(len(defined))) if defined else None
            rows.append([model_label(*m), mean, sem, len(defined)])
        return rows

    files["plot_top_models.csv"] = _csv(plot_rows([m for m in top if m[0] != BASELINE], report.test_layouts),
                                        ("x", "y", "stderr", "n"))
    all_layouts = [report.train_layout] + list(report.test_layouts)
    files["plot_bottom_models.csv"] = _csv(plot_rows(bottom, all_layouts), ("x", "y", "stderr", "n"))
    for name, text in files.items():
        (out / name).write_bytes(text.encode("utf-8"))
    return [out / n for n in files]


def trials_from_csv(path) -> list[TrialResult]:
    """Re-read trials.csv (used to re-derive summaries independently)."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(TrialResult(
                pipeline=row["pipeline"], data_fraction=float(row["data_fraction"]),
                seed=int(row["seed"]), layout=row["layout"], successes=int(row["successes"]),
                episodes=int(row["episodes"]), success_rate=float(row["success_rate"]),
                mean_episode_length=float(row["mean_episode_length"])))
    return out
