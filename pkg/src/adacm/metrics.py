"""Per-epoch run records, pseudo-label precision, multi-seed aggregation and
CSV/JSON export.

Undefined values (e.g. precision when no sample was pseudo-labeled) are
``None``: a blank CSV cell and an absent JSON key.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class AggregationError(ValueError):
    """Runs passed to :func:`aggregate` are not comparable."""


SCALAR_HEAD = ("epoch", "l_s", "l_u", "l_c", "l_total")
SCALAR_MID = ("subset1_frac", "pseudo_precision", "discard_frac", "test_acc")


def csv_columns(n_classes: int) -> list[str]:
    r = range(1, n_classes + 1)
    return (
        list(SCALAR_HEAD)
        + [f"margin_raw_{k}" for k in r]
        + [f"margin_eff_{k}" for k in r]
        + list(SCALAR_MID)
        + [f"acc_class_{k}" for k in r]
    )


def schema_string(n_classes: int) -> str:
    return ",".join(csv_columns(n_classes))


@dataclass
class EpochRecord:
    epoch: int
    l_s: float
    l_u: float
    l_c: float
    l_total: float
    margin_raw: list
    margin_eff: list
    subset1_frac: float | None
    pseudo_precision: float | None
    discard_frac: float | None
    test_acc: float
    acc_class: list

    def cells(self) -> dict:
        out = {k: getattr(self, k) for k in SCALAR_HEAD + SCALAR_MID}
        for k, v in enumerate(self.margin_raw, 1):
            out[f"margin_raw_{k}"] = v
        for k, v in enumerate(self.margin_eff, 1):
            out[f"margin_eff_{k}"] = v
        for k, v in enumerate(self.acc_class, 1):
            out[f"acc_class_{k}"] = v
        return out

    @classmethod
    def from_cells(cls, cells: dict, n_classes: int) -> EpochRecord:
        r = range(1, n_classes + 1)
        return cls(
            epoch=int(cells["epoch"]),
            l_s=cells["l_s"], l_u=cells["l_u"], l_c=cells["l_c"], l_total=cells["l_total"],
            margin_raw=[cells.get(f"margin_raw_{k}") for k in r],
            margin_eff=[cells.get(f"margin_eff_{k}") for k in r],
            subset1_frac=cells.get("subset1_frac"),
            pseudo_precision=cells.get("pseudo_precision"),
            discard_frac=cells.get("discard_frac"),
            test_acc=cells["test_acc"],
            acc_class=[cells.get(f"acc_class_{k}") for k in r],
        )


@dataclass
class RunMetrics:
    n_classes: int
    mode: str = ""
    seed: int = 0
    config_digest: str = ""
    family_digest: str = ""
    rows: list[EpochRecord] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        if not self.rows:
            raise AggregationError("run has no completed epochs")
        return self.rows[-1].test_acc


@dataclass
class AggregateReport:
    mode: str
    mean: float
    std: float
    per_seed: dict
    config_digest: str

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "mean": self.mean,
            "std": self.std,
            "per_seed": {str(k): v for k, v in self.per_seed.items()},
            "config_digest": self.config_digest,
        }

    @classmethod
    def from_dict(cls, d: dict) -> AggregateReport:
        return cls(d["mode"], d["mean"], d["std"], {int(k): v for k, v in d["per_seed"].items()}, d["config_digest"])


def pseudo_label_precision(partition, sealed, positions) -> float | None:
    """Share of subset-I pseudo labels that match the sealed ground truth.

    ``positions`` maps batch positions to unlabeled-set indices. Returns
    None when subset I is empty.
    """
    if partition.n_high == 0:
        return None
    src = np.asarray(positions)[partition.high]
    return sealed.count_correct(src, partition.pseudo_classes) / partition.n_high


def aggregate(runs: list[RunMetrics]) -> AggregateReport:
    """Mean and sample (n-1) standard deviation of final test accuracies."""
    if len(runs) < 2:
        raise AggregationError(f"need at least 2 runs, got {len(runs)}")
    families = {r.family_digest for r in runs}
    modes = {r.mode for r in runs}
    if len(families) > 1 or len(modes) > 1:
        raise AggregationError("runs differ in configuration beyond the seed")
    accs = np.array([r.final_accuracy for r in runs])
    return AggregateReport(
        mode=runs[0].mode,
        mean=float(accs.mean()),
        std=float(accs.std(ddof=1)),
        per_seed={r.seed: r.final_accuracy for r in runs},
        config_digest=runs[0].family_digest,
    )


# ---------------------------------------------------------------------------
# export / import
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def _parse(cell: str):
    return None if cell == "" else float(cell)


def _clean(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return None
    return float(v)


def run_to_csv(run: RunMetrics) -> str:
    cols = csv_columns(run.n_classes)
    lines = [",".join(cols)]
    for row in run.rows:
        cells = row.cells()
        lines.append(",".join(_fmt(cells[c]) for c in cols))
    return "\n".join(lines) + "\n"


def run_to_json(run: RunMetrics) -> str:
    rows = []
    for row in run.rows:
        cells = {k: (int(v) if k == "epoch" else _clean(v)) for k, v in row.cells().items()}
        rows.append({k: cells[k] for k in csv_columns(run.n_classes) if cells[k] is not None})
    doc = {
        "n_classes": run.n_classes,
        "mode": run.mode,
        "seed": run.seed,
        "config_digest": run.config_digest,
        "family_digest": run.family_digest,
        "rows": rows,
    }
    return json.dumps(doc, indent=2) + "\n"


def export(obj, path, fmt: str | None = None) -> Path:
    """Write a RunMetrics, AggregateReport or list of reports as CSV or JSON."""
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".")
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown export format {fmt!r}")
    if isinstance(obj, RunMetrics):
        text = run_to_csv(obj) if fmt == "csv" else run_to_json(obj)
    else:
        reports = [obj] if isinstance(obj, AggregateReport) else list(obj)
        text = reports_to_csv(reports) if fmt == "csv" else json.dumps(
            [r.to_dict() for r in reports], indent=2) + "\n"
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    return path


REPORT_COLUMNS = ("mode", "mean", "std", "n_seeds", "seeds", "per_seed", "config_digest")


def reports_to_csv(reports: list[AggregateReport]) -> str:
    lines = [",".join(REPORT_COLUMNS)]
    for r in reports:
        seeds = sorted(r.per_seed)
        lines.append(",".join([
            r.mode, _fmt(r.mean), _fmt(r.std), str(len(seeds)),
            ";".join(map(str, seeds)),
            ";".join(_fmt(r.per_seed[s]) for s in seeds),
            r.config_digest,
        ]))
    return "\n".join(lines) + "\n"


def read_reports_csv(path) -> list[AggregateReport]:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            seeds = [int(s) for s in rec["seeds"].split(";") if s]
            vals = [float(v) for v in rec["per_seed"].split(";") if v]
            std = float(rec["std"]) if rec["std"] else math.nan
            out.append(AggregateReport(rec["mode"], float(rec["mean"]), std,
                                       dict(zip(seeds, vals)), rec["config_digest"]))
    return out


def read_run_csv(path, mode: str = "", seed: int = 0) -> RunMetrics:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_classes = sum(1 for c in header if c.startswith("acc_class_"))
        if header != csv_columns(n_classes):
            raise ValueError(f"{path}: header does not match the metrics schema")
        rows = []
        for rec in reader:
            cells = {k: _parse(v) for k, v in zip(header, rec)}
            rows.append(EpochRecord.from_cells(cells, n_classes))
    return RunMetrics(n_classes, mode, seed, rows=rows)


def read_run_json(path) -> RunMetrics:
    doc = json.loads(Path(path).read_text())
    c = doc["n_classes"]
    rows = [EpochRecord.from_cells(r, c) for r in doc["rows"]]
    return RunMetrics(c, doc["mode"], doc["seed"], doc["config_digest"], doc["family_digest"], rows)
