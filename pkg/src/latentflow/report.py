"""Evaluation reports: per-condition WER across the SNR grid, CSV and text."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ReportRow", "EvalReport", "write_csv", "read_csv", "write_text_table", "format_text_table"]

CSV_HEADER = "condition,snr_db,n_utts,wer"


@dataclass(frozen=True)
class ReportRow:
    condition: str
    snr_db: float | None  # None marks the per-condition average row
    n_utts: int
    wer: float


@dataclass
class EvalReport:
    grid: tuple[float, ...]
    rows: list[ReportRow]

    def conditions(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.condition not in seen:
                seen.append(r.condition)
        return seen

    def wer(self, condition: str, snr_db: float | None) -> float:
        for r in self.rows:
            if r.condition == condition and r.snr_db == snr_db:
                return r.wer
        raise KeyError(f"no row for ({condition!r}, {snr_db})")

    def average(self, condition: str) -> float:
        return self.wer(condition, None)

    def validate(self):
        """Each average row must be the unweighted mean of its per-SNR rows."""
        for cond in self.conditions():
            per_snr = [r.wer for r in self.rows if r.condition == cond and r.snr_db is not None]
            avg = self.average(cond)
            if abs(avg - float(np.mean(per_snr))) > 1e-12:
                raise ValueError(f"average row for {cond!r} is not the mean of its SNR rows")


def write_csv(report: EvalReport, path):
    lines = [CSV_HEADER]
    for r in report.rows:
        snr = "avg" if r.snr_db is None else repr(float(r.snr_db))
        lines.append(f"{r.condition},{snr},{r.n_utts},{r.wer!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path) -> EvalReport:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"expected header {CSV_HEADER!r}")
    rows = []
    for ln in lines[1:]:
        cond, snr, n, w = ln.split(",")
        rows.append(
            ReportRow(
                condition=cond,
                snr_db=None if snr == "avg" else float(snr),
                n_utts=int(n),
                wer=float(w),
            )
        )
    grid = tuple(sorted({r.snr_db for r in rows if r.snr_db is not None}))
    return EvalReport(grid=grid, rows=rows)


def format_text_table(report: EvalReport) -> str:
    """One row per condition, SNR columns in grid order plus the average."""
    headers = [f"{snr:+g} dB" for snr in report.grid] + ["Avg."]
    width = max(len(r.condition) for r in report.rows) + 2
    out = ["condition".ljust(width) + "".join(h.rjust(9) for h in headers)]
    for cond in report.conditions():
        cells = [report.wer(cond, snr) for snr in report.grid] + [report.average(cond)]
        out.append(cond.ljust(width) + "".join(f"{c:9.4f}" for c in cells))
    return "\n".join(out) + "\n"


def write_text_table(report: EvalReport, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_text_table(report))
