"""
Plain-text formats: long-format measurement tables, fitted models, configs.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bicop import Family, PairCopula
from .dvine import DVineSpec
from .margins import LongitudinalDataset, MarginalModel

MODEL_HEADER = "repvine-model v1"
REQUIRED = ("id", "meas_index", "y")


class InputError(ValueError):
    """Malformed input file."""


def _id_key(ids: Iterable[str]):
    ids = list(ids)
    try:
        [int(i) for i in ids]
    except ValueError:
        return lambda s: (0, s)
    return lambda s: (int(s), s)


def _number(text: str, what: str, row: int, allow_empty: bool) -> float:
    text = text.strip()
    if text == "" or text.lower() in ("na", "nan"):
        if allow_empty:
            return math.nan
        raise InputError(f"row {row}: {what} is missing")
    try:
        return float(text)
    except ValueError:
        raise InputError(f"row {row}: {what} is not numeric: {text!r}") from None


def parse_long(lines: Iterable[str], delimiter: str = ",",
               allow_missing_y: bool = False) -> LongitudinalDataset:
    """Parse a long-format table with columns ``id, meas_index, y, covariates...``.

    Row numbers in error messages count the header as row 1. Individuals are
    ordered by id (numerically when every id is an integer).
    """
    reader = csv.reader(lines, delimiter=delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise InputError("input is empty") from None
    missing = [c for c in REQUIRED if c not in header]
    if missing:
        raise InputError(f"missing required column(s): {', '.join(missing)}")
    col = {name: i for i, name in enumerate(header)}
    covs = [h for h in header if h not in REQUIRED]
    seen: dict = {}
    records = []
    for rowno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise InputError(f"row {rowno}: expected {len(header)} fields, got {len(row)}")
        ident = row[col["id"]].strip()
        try:
            j = int(row[col["meas_index"]])
        except ValueError:
            raise InputError(f"row {rowno}: meas_index must be an integer") from None
        if j < 1:
            raise InputError(f"row {rowno}: meas_index must be >= 1")
        if (ident, j) in seen:
            raise InputError(f"duplicate measurement (id={ident}, meas_index={j}) "
                             f"in rows {seen[(ident, j)]} and {rowno}")
        seen[(ident, j)] = rowno
        y = _number(row[col["y"]], "y", rowno, allow_missing_y)
        cov = {c: _number(row[col[c]], f"covariate {c!r}", rowno, True) for c in covs}
        records.append((ident, j, y, cov))
    if not records:
        raise InputError("input has no data rows")
    key = _id_key(r[0] for r in records)
    records.sort(key=lambda r: (key(r[0]), r[1]))
    ds = LongitudinalDataset.from_records(records)
    for name in covs:
        ds.covariates.setdefault(name, np.full(ds.y.shape, np.nan))
    return ds


def ingest(path, delimiter: str = ",", allow_missing_y: bool = False) -> LongitudinalDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_long(fh, delimiter, allow_missing_y)


def format_long(data: LongitudinalDataset, delimiter: str = ",",
                include_missing_y: bool = False) -> str:
    """Inverse of :func:`parse_long` (floats written with ``repr``)."""
    import io

    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    names = data.covariate_names
    w.writerow([*REQUIRED, *names])
    for i, ident in enumerate(data.ids):
        for j in range(data.dim):
            y = data.y[i, j]
            has_cov = any(not math.isnan(data.covariates[c][i, j]) for c in names)
            if math.isnan(y) and not (include_missing_y and has_cov):
                continue
            cells = ["" if math.isnan(y) else repr(float(y))]
            cells += ["" if math.isnan(data.covariates[c][i, j])
                      else repr(float(data.covariates[c][i, j])) for c in names]
            w.writerow([ident, j + 1, *cells])
    return buf.getvalue()


def export(data: LongitudinalDataset, path, delimiter: str = ",") -> None:
    Path(path).write_text(format_long(data, delimiter), encoding="utf-8")


# --------------------------------------------------------------------------
# fitted models


def format_model(spec: DVineSpec, margins: Sequence[MarginalModel | None]) -> str:
    lines = [MODEL_HEADER, f"dim {spec.dim}"]
    for m in margins:
        if m is None:
            continue
        coefs = " ".join(f"{k}={float(v)!r}" for k, v in m.coefficients.items())
        lines.append(f"margin {m.index} sigma={float(m.sigma)!r} pooled={int(m.pooled)} {coefs}")
    for (k, l), pc in spec.pairs.items():
        lines.append(f"edge {k} {l} {pc.family.value} {pc.rotation} {float(pc.theta)!r}")
    return "\n".join(lines) + "\n"


def parse_model(text: str) -> tuple[DVineSpec, list[MarginalModel | None]]:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0] != MODEL_HEADER:
        raise InputError(f"not a model file (expected header {MODEL_HEADER!r})")
    dim = None
    margins: dict = {}
    pairs = {}
    for ln in lines[1:]:
        parts = ln.split()
        tag = parts[0]
        try:
            if tag == "dim":
                dim = int(parts[1])
            elif tag == "margin":
                j = int(parts[1])
                kv = dict(p.split("=", 1) for p in parts[2:])
                sigma = float(kv.pop("sigma"))
                pooled = bool(int(kv.pop("pooled", "0")))
                margins[j] = MarginalModel(j, {k: float(v) for k, v in kv.items()}, sigma, pooled)
            elif tag == "edge":
                k, l = int(parts[1]), int(parts[2])
                pairs[(k, l)] = PairCopula(Family.parse(parts[3]), int(parts[4]), float(parts[5]))
            else:
                raise InputError(f"unknown model line: {ln!r}")
        except (IndexError, KeyError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"malformed model line {ln!r}: {exc}") from None
    if dim is None:
        raise InputError("model file lacks a dim line")
    spec = DVineSpec(dim, pairs)
    return spec, [margins.get(j) for j in range(1, dim + 1)]


def save_model(path, spec: DVineSpec, margins: Sequence[MarginalModel | None]) -> None:
    Path(path).write_text(format_model(spec, margins), encoding="utf-8")


def load_model(path) -> tuple[DVineSpec, list[MarginalModel | None]]:
    return parse_model(Path(path).read_text(encoding="utf-8"))


# --------------------------------------------------------------------------
# configs


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def write_table(rows: Sequence[dict], path=None, delimiter: str = "\t") -> str:
    """Delimited text of ``rows`` (keys of the first row as header)."""
    import io

    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), delimiter=delimiter,
                       lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt_exact(v) for k, v in r.items()})
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def _fmt_exact(v):
    return repr(v) if isinstance(v, float) else v


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}" if math.isfinite(v) else str(v)
    return v


def pretty_table(rows: Sequence[dict]) -> str:
    if not rows:
        return "(empty)\n"
    cols = list(rows[0])
    cells = [[str(_fmt(r[c])) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(x.rjust(w) for x, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"
