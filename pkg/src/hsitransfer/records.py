"""Experiment result rows and their CSV form."""

import csv
from dataclasses import asdict, dataclass, fields

OK = "ok"
INFEASIBLE = "infeasible"
BAND_MISMATCH = "band_mismatch"
FAILED = "failed"

METRIC_COLUMNS = ("oa", "aa", "kappa")
TIME_COLUMNS = ("pretrain_s", "finetune_s", "infer_ms_per_sample")


@dataclass
class ExperimentRecord:
    """One (seed, dataset, variant, model, band count) run, measured on the unseen test set."""

    seed: int
    dataset: str
    variant: str
    family: str
    blocks: int
    band_count: str
    status: str = OK
    oa: float | None = None
    aa: float | None = None
    kappa: float | None = None
    pretrain_s: float | None = None
    finetune_s: float | None = None
    infer_ms_per_sample: float | None = None

    def sort_key(self):
        bands = int(self.band_count) if self.band_count.isdigit() else 10**9
        return (self.dataset, self.family, self.blocks, -bands, self.variant, self.seed)


COLUMNS = tuple(f.name for f in fields(ExperimentRecord))


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(records, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(COLUMNS)
        for rec in sorted(records, key=ExperimentRecord.sort_key):
            d = asdict(rec)
            w.writerow([_fmt(d[c]) for c in COLUMNS])


def read_csv(path):
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            rec = {}
            for c in COLUMNS:
                v = row.get(c, "")
                if c in ("seed", "blocks"):
                    rec[c] = int(v)
                elif c in METRIC_COLUMNS + TIME_COLUMNS:
                    rec[c] = float(v) if v not in ("", None) else None
                else:
                    rec[c] = v
            out.append(ExperimentRecord(**rec))
    return out
