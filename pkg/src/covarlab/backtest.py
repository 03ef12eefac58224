"""Out-of-sample evaluation of risk forecasts.

The headline metric is the average quantile (AVQ) loss: mean pinball loss
of the realized return against the forecast quantile over an evaluation
window. Windows step in calendar months from the test-start date, growing
cumulatively three months at a time until they cover the whole test
period; a final "Full Test Period" row repeats the full-window value.
Losses are stored unscaled; the x100 display convention only applies in
the text formatter.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date as _date

import numpy as np

from .quantile import pinball


def avq_loss(preds, actuals, tau: float, window=None) -> float:
    """Mean pinball loss of (actual - pred) over the window (a boolean or
    index selector; None = everything)."""
    preds = np.asarray(preds, dtype=np.float64).reshape(-1)
    actuals = np.asarray(actuals, dtype=np.float64).reshape(-1)
    if preds.shape != actuals.shape:
        raise ValueError("prediction and actual series lengths differ")
    if window is not None:
        preds = preds[window]
        actuals = actuals[window]
    if preds.size == 0:
        raise ValueError("empty evaluation window")
    return float(np.mean(pinball(actuals - preds, tau)))


def exceedance_rate(preds, actuals) -> float:
    """Share of dates where the realized return breaches the forecast
    (actual < pred, under the negative-loss convention)."""
    preds = np.asarray(preds, dtype=np.float64).reshape(-1)
    actuals = np.asarray(actuals, dtype=np.float64).reshape(-1)
    if preds.shape != actuals.shape:
        raise ValueError("prediction and actual series lengths differ")
    return float(np.mean(actuals < preds))


def add_months(iso: str, months: int) -> str:
    """Calendar-month shift with end-of-month day clamping."""
    d = _date.fromisoformat(iso)
    month_index = d.year * 12 + (d.month - 1) + months
    year, month = divmod(month_index, 12)
    month += 1
    day = d.day
    while True:
        try:
            return _date(year, month, day).isoformat()
        except ValueError:
            day -= 1


@dataclass
class LossRow:
    label: str
    months: int | None  # None for the full-period row
    losses: dict[str, float]  # model name -> AVQ loss (unscaled)
    exceedance: dict[str, float]


@dataclass
class LossTable:
    tau: float
    start_date: str
    rows: list[LossRow]


def cumulative_table(
    preds_by_model: dict[str, np.ndarray],
    actuals,
    dates: list[str],
    tau: float,
    start_date: str | None = None,
    step_months: int = 3,
) -> LossTable:
    """Cumulative calendar-month AVQ table over the test period.

    Rows at step, 2*step, ... months; the first window that covers every
    test date closes the sequence, followed by the full-period row (whose
    values equal the covering window's, bit for bit).
    """
    actuals = np.asarray(actuals, dtype=np.float64).reshape(-1)
    if len(dates) != actuals.shape[0]:
        raise ValueError("dates and actuals lengths differ")
    if actuals.size == 0:
        raise ValueError("empty test period")
    start = start_date or dates[0]
    date_arr = np.array(dates)

    def row_for(selector, label, months):
        losses, exceed = {}, {}
        for name, preds in preds_by_model.items():
            losses[name] = avq_loss(preds, actuals, tau, selector)
            exceed[name] = exceedance_rate(
                np.asarray(preds).reshape(-1)[selector], actuals[selector]
            )
        return LossRow(label=label, months=months, losses=losses, exceedance=exceed)

    rows = []
    k = 1
    while True:
        cutoff = add_months(start, step_months * k)
        selector = date_arr < cutoff
        if not selector.any():
            raise ValueError("no test dates inside the first evaluation window")
        rows.append(row_for(selector, f"{step_months * k} months", step_months * k))
        if selector.all():
            break
        k += 1
    rows.append(row_for(np.ones(len(dates), dtype=bool), "Full Test Period", None))
    return LossTable(tau=tau, start_date=start, rows=rows)


def write_loss_csv(table: LossTable, path):
    models = list(table.rows[0].losses)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["horizon", "months"]
                   + [f"avq_{m}" for m in models]
                   + [f"exceedance_{m}" for m in models])
        for row in table.rows:
            w.writerow(
                [row.label, "" if row.months is None else row.months]
                + [repr(float(row.losses[m])) for m in models]
                + [repr(float(row.exceedance[m])) for m in models]
            )


def format_loss_table(table: LossTable, scale: float = 100.0, decimals: int = 4) -> str:
    """Aligned text table; losses displayed in units of 10^-2 by default."""
    models = list(table.rows[0].losses)
    label_w = max(len(r.label) for r in table.rows)
    col_w = max(12, *(len(m) + 2 for m in models))
    header = "".ljust(label_w) + "".join(m.rjust(col_w) for m in models)
    lines = [header]
    for row in table.rows:
        cells = "".join(f"{row.losses[m] * scale:.{decimals}f}".rjust(col_w) for m in models)
        lines.append(row.label.ljust(label_w) + cells)
    return "\n".join(lines)
