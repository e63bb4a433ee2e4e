"""The one-row-per-operating-point metrics record and its CSV schema."""

import math
from dataclasses import dataclass, fields

CSV_COLUMNS = ("variant", "n_tx", "n_feat", "rho", "snr_db",
               "normalized_snr_db", "error_rate", "stderr", "loss",
               "samples", "seed")


@dataclass(frozen=True)
class MetricsRecord:
    variant: str
    n_tx: float
    n_feat: int
    rho: float
    snr_db: float
    normalized_snr_db: float
    error_rate: float
    stderr: float
    loss: float
    samples: int
    seed: int

    def csv_row(self):
        return ",".join(_fmt(getattr(self, c)) for c in CSV_COLUMNS)

    @staticmethod
    def csv_header():
        return ",".join(CSV_COLUMNS)

    @staticmethod
    def from_csv_row(row):
        parts = row.split(",")
        kwargs = {}
        for f, raw in zip(fields(MetricsRecord), parts):
            if f.type is str:
                kwargs[f.name] = raw
            elif f.type is int:
                kwargs[f.name] = int(raw)
            else:
                kwargs[f.name] = float(raw)
        return MetricsRecord(**kwargs)


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, int):
        return str(v)
    if v == math.inf:
        return "inf"
    if v == -math.inf:
        return "-inf"
    return f"{v:.10g}"


def write_records_csv(path, records):
    lines = [MetricsRecord.csv_header()]
    lines += [r.csv_row() for r in records]
    return "\n".join(lines) + "\n"


def binomial_stderr(p, n):
    if n <= 0:
        return math.inf
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)
