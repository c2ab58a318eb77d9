"""Detection scores: Pearson correlation of uncertainty changes with
reconstruction changes or with the mask of an inserted artifact."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DegenerateSampleError, ShapeError

METHODS = ("inn", "mcdrop", "probout")
EXPERIMENTS = ("advdetect", "artdetect")


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    scale_a, scale_b = np.linalg.norm(a), np.linalg.norm(b)
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    # centring a constant array leaves only rounding residue
    if na <= 1e-12 * scale_a or nb <= 1e-12 * scale_b:
        raise DegenerateSampleError("correlation undefined for a constant argument")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def advdetect_score(u_clean, u_adv, rec_clean, rec_adv) -> float:
    return pearson(np.abs(np.asarray(u_clean) - u_adv), np.abs(np.asarray(rec_clean) - rec_adv))


def artdetect_score(u_clean, u_ood, mask) -> float:
    mask = np.asarray(mask)
    if not np.isin(mask, (0, 1)).all():
        raise ContractError("mask must be binary")
    return pearson(np.abs(np.asarray(u_clean) - u_ood), mask.astype(np.float64))


@dataclass
class DetectionRecord:
    sample_id: int
    method: str
    experiment: str
    task: str = ""
    run: int = 0
    pearson_r: float | None = None  # None marks a degenerate sample
    u_clean: np.ndarray | None = field(default=None, repr=False)
    u_perturbed: np.ndarray | None = field(default=None, repr=False)
    rec_clean: np.ndarray | None = field(default=None, repr=False)
    rec_perturbed: np.ndarray | None = field(default=None, repr=False)
    mask: np.ndarray | None = field(default=None, repr=False)

    def score(self) -> "DetectionRecord":
        try:
            if self.experiment == "advdetect":
                self.pearson_r = advdetect_score(self.u_clean, self.u_perturbed, self.rec_clean, self.rec_perturbed)
            else:
                self.pearson_r = artdetect_score(self.u_clean, self.u_perturbed, self.mask)
        except DegenerateSampleError:
            self.pearson_r = None
        return self

    def pooled_terms(self):
        """Arrays whose pixels enter the pooled (all-samples) correlation."""
        du = np.abs(self.u_clean - self.u_perturbed).ravel()
        if self.experiment == "advdetect":
            return du, np.abs(self.rec_clean - self.rec_perturbed).ravel()
        return du, np.asarray(self.mask, dtype=np.float64).ravel()


def aggregate(records) -> list[dict]:
    """Per (task, experiment, method): per-run means over non-degenerate
    samples, then mean and population std across runs."""
    records = list(records)
    if not records:
        raise ContractError("no records to aggregate")
    groups = defaultdict(lambda: defaultdict(list))
    for rec in records:
        groups[(rec.task, rec.experiment, rec.method)][rec.run].append(rec)
    rows = []
    for key in sorted(groups):
        runs = groups[key]
        run_means, degenerate, pooled = [], 0, []
        for run in sorted(runs):
            recs = sorted(runs[run], key=lambda r: r.sample_id)
            rs = [r.pearson_r for r in recs if r.pearson_r is not None]
            degenerate += sum(r.pearson_r is None for r in recs)
            if rs:
                run_means.append(float(np.mean(rs)))
            if recs and recs[0].u_clean is not None:
                terms = [r.pooled_terms() for r in recs]
                try:
                    pooled.append(pearson(np.concatenate([t[0] for t in terms]),
                                          np.concatenate([t[1] for t in terms])))
                except DegenerateSampleError:
                    pass
        task, experiment, method = key
        rows.append({
            "task": task,
            "experiment": experiment,
            "method": method,
            "runs": len(runs),
            "run_means": run_means,
            "mean": float(np.mean(run_means)) if run_means else None,
            "std": float(np.std(run_means)) if run_means else None,
            "pooled_mean": float(np.mean(pooled)) if pooled else None,
            "degenerate": degenerate,
        })
    return rows


def write_records_csv(path, records) -> None:
    rows = sorted(records, key=lambda r: (r.method, r.task, r.experiment, r.run, r.sample_id))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "task", "experiment", "run", "sample_id", "r"])
        for r in rows:
            w.writerow([r.method, r.task, r.experiment, r.run, r.sample_id,
                        "" if r.pearson_r is None else repr(float(r.pearson_r))])


def read_records_csv(path) -> list[DetectionRecord]:
    with open(path, newline="") as fh:
        return [
            DetectionRecord(int(row["sample_id"]), row["method"], row["experiment"], row["task"], int(row["run"]),
                            None if row["r"] == "" else float(row["r"]))
            for row in csv.DictReader(fh)
        ]


def summary_table(rows) -> dict:
    """Nested ``task -> experiment -> method`` layout of :func:`aggregate`."""
    table = {"std_convention": "population", "averaging": "per-sample r, mean over samples, then over runs",
             "results": {}}
    for row in rows:
        cell = {k: row[k] for k in ("mean", "std", "run_means", "pooled_mean", "degenerate", "runs")}
        table["results"].setdefault(row["task"], {}).setdefault(row["experiment"], {})[row["method"]] = cell
    return table


def write_summary_json(path, rows, extra: dict | None = None) -> None:
    doc = summary_table(rows)
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def format_table(rows) -> str:
    """Plain-text rendering with methods as rows and (task, experiment) columns."""
    cols = sorted({(r["task"], r["experiment"]) for r in rows})
    cell = {(r["method"], r["task"], r["experiment"]): r for r in rows}
    header = "method   " + "  ".join(f"{t}/{e}".ljust(18) for t, e in cols)
    lines = [header]
    for m in METHODS:
        parts = []
        for t, e in cols:
            r = cell.get((m, t, e))
            parts.append("-".ljust(18) if r is None or r["mean"] is None else f"{r['mean']:.3f} ± {r['std']:.3f}".ljust(18))
        lines.append(m.ljust(9) + "  ".join(parts))
    return "\n".join(lines)
