"""Dataset ingestion and the canonical file formats.

Two formats:

  * Return/macro panel CSV. Header: ``date`` first, then one column per
    ticker, then macro-state columns prefixed ``macro_``. Macro columns
    hold the lagged state aligned to the return date (row t carries the
    state observed at t-1). Floats are written with repr, so a save/load
    round trip is exact.

  * CVEM embedding tensor. Binary: magic ``CVEM``, version u32, d_e u32,
    then a record per date: date as days-since-epoch i64, article count
    u32, then count x d_e float64 little-endian vectors. Bit-exact round
    trips.

Window assembly gathers the articles of a trading-day look-back window
into a fixed-capacity matrix with a validity mask and per-article day
offsets (0 = oldest day of the window).
"""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass, field
from datetime import date as _date, timedelta as _timedelta

import numpy as np

_MACRO_PREFIX = "macro_"
_CVEM_MAGIC = b"CVEM"
_CVEM_VERSION = 1
_EPOCH = _date(1970, 1, 1)


@dataclass
class ReturnPanel:
    """Dated log returns for J institutions plus lagged macro states."""

    dates: list[str]
    tickers: list[str]
    returns: np.ndarray  # (T, J)
    macro_names: list[str]
    macro: np.ndarray  # (T, m)

    def __post_init__(self):
        self.returns = np.asarray(self.returns, dtype=np.float64)
        self.macro = np.asarray(self.macro, dtype=np.float64).reshape(len(self.dates), -1)
        T = len(self.dates)
        if self.returns.shape != (T, len(self.tickers)):
            raise ValueError("return matrix shape does not match dates/tickers")
        if self.macro.shape[1] != len(self.macro_names):
            raise ValueError("macro matrix shape does not match macro names")
        for a, b in zip(self.dates, self.dates[1:]):
            if b <= a:
                raise ValueError("non-monotone dates")
        if not (np.all(np.isfinite(self.returns)) and np.all(np.isfinite(self.macro))):
            raise ValueError("non-finite panel values")

    def column(self, ticker: str) -> np.ndarray:
        return self.returns[:, self.tickers.index(ticker)]

    def others(self, ticker: str) -> np.ndarray:
        """Returns of all institutions except `ticker`, original order kept."""
        j = self.tickers.index(ticker)
        return np.delete(self.returns, j, axis=1)

    def other_tickers(self, ticker: str) -> list[str]:
        return [t for t in self.tickers if t != ticker]


def _parse_cell(raw: str, row: int, col: str) -> float:
    s = raw.strip()
    if s == "" or s.lower() == "nan":
        return np.nan
    try:
        return float(s)
    except ValueError:
        raise ValueError(f"unparseable cell at row {row}, column {col!r}: {raw!r}") from None


def load_returns(path) -> ReturnPanel:
    """Read a panel CSV; rows with missing values are rejected with line numbers.

    Missing macro cells are forward-filled across gaps of up to 3 rows
    first; anything still missing drops the row.
    """
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("empty returns file") from None
        if not header or header[0] != "date":
            raise ValueError("first header column must be 'date'")
        tickers = [c for c in header[1:] if not c.startswith(_MACRO_PREFIX)]
        macro_names = [c for c in header[1:] if c.startswith(_MACRO_PREFIX)]
        col_kind = [(c, c.startswith(_MACRO_PREFIX)) for c in header[1:]]

        dates, rows, line_nos = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"row {line_no} has {len(row)} cells, expected {len(header)}")
            dates.append(row[0].strip())
            rows.append([_parse_cell(v, line_no, col_kind[i][0]) for i, v in enumerate(row[1:])])
            line_nos.append(line_no)

    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)
    ret_cols = [i for i, (_, is_macro) in enumerate(col_kind) if not is_macro]
    mac_cols = [i for i, (_, is_macro) in enumerate(col_kind) if is_macro]

    # forward-fill macro gaps of up to 3 consecutive rows
    for c in mac_cols:
        gap = 0
        last = np.nan
        for r in range(len(rows)):
            if np.isnan(data[r, c]):
                gap += 1
                if gap <= 3 and not np.isnan(last):
                    data[r, c] = last
            else:
                last = data[r, c]
                gap = 0

    bad = np.isnan(data).any(axis=1)
    if bad.any():
        rejected = [line_nos[i] for i in np.nonzero(bad)[0]]
        warnings.warn(f"rejected rows with missing values at lines {rejected}", stacklevel=2)
    keep = ~bad
    return ReturnPanel(
        dates=[d for d, k in zip(dates, keep) if k],
        tickers=tickers,
        returns=data[keep][:, ret_cols],
        macro_names=macro_names,
        macro=data[keep][:, mac_cols],
    )


def save_returns(panel: ReturnPanel, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["date"] + panel.tickers + panel.macro_names)
        for i, d in enumerate(panel.dates):
            w.writerow(
                [d]
                + [repr(float(v)) for v in panel.returns[i]]
                + [repr(float(v)) for v in panel.macro[i]]
            )


# ------------------------------------------------------------ embeddings


@dataclass
class EmbeddingStore:
    """Per-date article embedding vectors, constant dimension d_e."""

    d_e: int
    by_date: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, date: str, vectors):
        v = np.asarray(vectors, dtype=np.float64).reshape(-1, self.d_e)
        if not np.all(np.isfinite(v)):
            raise ValueError(f"non-finite embedding vectors on {date}")
        self.by_date[date] = v

    def count(self, date: str) -> int:
        v = self.by_date.get(date)
        return 0 if v is None else len(v)

    def article_ids(self, date: str) -> list[str]:
        return [f"{date}#{i}" for i in range(self.count(date))]


def _date_to_days(iso: str) -> int:
    return (_date.fromisoformat(iso) - _EPOCH).days


def _days_to_date(days: int) -> str:
    return (_EPOCH + _timedelta(days=days)).isoformat()


def save_embeddings(store: EmbeddingStore, path):
    with open(path, "wb") as f:
        f.write(_CVEM_MAGIC)
        f.write(struct.pack("<II", _CVEM_VERSION, store.d_e))
        for d in sorted(store.by_date):
            v = store.by_date[d]
            f.write(struct.pack("<qI", _date_to_days(d), len(v)))
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_embeddings(path) -> EmbeddingStore:
    with open(path, "rb") as f:
        if f.read(4) != _CVEM_MAGIC:
            raise ValueError("bad embedding file magic")
        head = f.read(8)
        if len(head) != 8:
            raise ValueError(f"truncated embedding header at offset {f.tell()}")
        version, d_e = struct.unpack("<II", head)
        if version != _CVEM_VERSION:
            raise ValueError(f"unsupported embedding file version {version}")
        store = EmbeddingStore(d_e=d_e)
        while True:
            rec = f.read(12)
            if not rec:
                break
            if len(rec) != 12:
                raise ValueError(f"truncated embedding record at offset {f.tell()}")
            days, count = struct.unpack("<qI", rec)
            raw = f.read(count * d_e * 8)
            if len(raw) != count * d_e * 8:
                raise ValueError(f"truncated embedding record at offset {f.tell()}")
            store.by_date[_days_to_date(days)] = (
                np.frombuffer(raw, dtype="<f8").reshape(count, d_e).astype(np.float64)
            )
    return store


# ---------------------------------------------------------------- window


@dataclass
class WindowBatch:
    """Articles of one look-back window, padded to fixed capacity."""

    E: np.ndarray  # (d_e, n_max)
    mask: np.ndarray  # (n_max,) bool
    positions: np.ndarray  # (n_max,) int day offsets, 0 = oldest window day
    ids: list[str]


def assemble_window(
    store: EmbeddingStore,
    calendar: list[str],
    t_index: int,
    window: int = 5,
    n_max: int = 97,
    include_day_t: bool = False,
) -> WindowBatch:
    """Collect the articles of the trading-day window before calendar[t_index].

    The window covers the `window` trading days up to and including t-1
    (or t with `include_day_t`). Articles are ordered oldest day first,
    source order within a day; each carries its day offset for the
    positional encoding. Overflow beyond `n_max` keeps the most recent
    articles by (day, article order). An empty window yields an all-pad
    batch.
    """
    if not 0 <= t_index < len(calendar):
        raise IndexError(f"t_index {t_index} outside the calendar")
    last = t_index if include_day_t else t_index - 1
    entries = []  # (vector, position, id), oldest day first
    for offset in range(window):
        di = last - (window - 1) + offset
        if di < 0 or di > last:
            continue
        d = calendar[di]
        vectors = store.by_date.get(d)
        if vectors is None:
            continue
        for i, vec in enumerate(vectors):
            entries.append((vec, offset, f"{d}#{i}"))
    if len(entries) > n_max:
        entries = entries[-n_max:]  # keep the most recent

    E = np.zeros((store.d_e, n_max))
    mask = np.zeros(n_max, dtype=bool)
    positions = np.zeros(n_max, dtype=np.int64)
    ids = []
    for j, (vec, pos, aid) in enumerate(entries):
        E[:, j] = vec
        mask[j] = True
        positions[j] = pos
        ids.append(aid)
    return WindowBatch(E=E, mask=mask, positions=positions, ids=ids)
