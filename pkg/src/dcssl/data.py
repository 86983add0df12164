"""Doubly censored cohort data: records, invariants, CSV ingestion.

One subject carries the windowed observation of the true event time
(x, delta), the always-observed window [l, u], the surrogate observation
(x_star, delta_star) censored by the same window, the covariate vector z,
and a labeled flag.  Unlabeled subjects have no (x, delta).

CSV schema (header names): id, labeled, x, delta, l, u, x_star,
delta_star, z1..zp.  Delta coding on disk: 1=exact, 2=right, 3=left.
Unlabeled rows leave x and delta empty.
"""

import csv
import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

# absolute tolerance when checking x against l/u after text round-trips
EDGE_TOL = 1e-9

_FLOAT_FMT = "%.17g"


class CensoringCode(enum.IntEnum):
    EXACT = 1
    RIGHT = 2
    LEFT = 3


def derive_observation(t, l, u):
    """Window the event time t into (x, delta) for the window [l, u]."""
    if not (np.isfinite(t) and t > 0.0):
        raise DataError(f"event time must be finite and positive, got {t}")
    if not l < u:
        raise DataError(f"censoring window requires l < u, got l={l}, u={u}")
    if t < l:
        return l, CensoringCode.LEFT
    if t > u:
        return u, CensoringCode.RIGHT
    return t, CensoringCode.EXACT


def _check_outcome(x, delta, l, u, what, where):
    if delta == CensoringCode.LEFT:
        if abs(x - l) > EDGE_TOL:
            raise DataError(f"{where}: {what} is left-censored but x={x} != l={l}")
    elif delta == CensoringCode.RIGHT:
        if abs(x - u) > EDGE_TOL:
            raise DataError(f"{where}: {what} is right-censored but x={x} != u={u}")
    else:
        if not (l - EDGE_TOL <= x <= u + EDGE_TOL):
            raise DataError(f"{where}: {what} is exact but x={x} outside [{l}, {u}]")


@dataclass(frozen=True)
class SubjectRecord:
    """One subject's observed tuple; x/delta are None for unlabeled subjects."""

    id: str
    x: float | None
    delta: CensoringCode | None
    l: float
    u: float
    x_star: float
    delta_star: CensoringCode
    z: tuple
    labeled: bool

    def validate(self, where="record"):
        if not self.l < self.u:
            raise DataError(f"{where}: requires l < u, got l={self.l}, u={self.u}")
        if self.labeled:
            if self.x is None or self.delta is None:
                raise DataError(f"{where}: labeled record missing x or delta")
            _check_outcome(self.x, self.delta, self.l, self.u, "outcome", where)
        else:
            if self.x is not None or self.delta is not None:
                raise DataError(f"{where}: unlabeled record carries x or delta")
        _check_outcome(
            self.x_star, self.delta_star, self.l, self.u, "surrogate", where
        )
        if not all(np.isfinite(self.z)):
            raise DataError(f"{where}: non-finite covariate value")


class Cohort:
    """Immutable collection of subject records with shared covariate dimension.

    Numpy views of the columns are built once and cached; the surrogate
    outcome can be promoted to the primary outcome slot via
    `surrogate_view()` so the same estimation code serves both.
    """

    def __init__(self, records, meta=None, p=None):
        records = tuple(records)
        if not records:
            if p is None:
                raise DataError("empty cohort needs an explicit covariate dimension")
        else:
            p = len(records[0].z)
        for i, rec in enumerate(records):
            if len(rec.z) != p:
                raise DataError(
                    f"record {rec.id!r}: covariate length {len(rec.z)} != {p}"
                )
            rec.validate(where=f"record {i} (id={rec.id!r})")
        self.records = records
        self.p = p
        self.meta = dict(meta) if meta else {}
        lab = np.array([r.labeled for r in records], dtype=bool)
        self.labeled_mask = lab
        self.n_labeled = int(lab.sum())
        self.n_unlabeled = int((~lab).sum())
        self.l = np.array([r.l for r in records])
        self.u = np.array([r.u for r in records])
        self.x = np.array(
            [r.x if r.x is not None else np.nan for r in records]
        )
        self.delta = np.array(
            [int(r.delta) if r.delta is not None else 0 for r in records],
            dtype=np.int64,
        )
        self.x_star = np.array([r.x_star for r in records])
        self.delta_star = np.array([int(r.delta_star) for r in records], dtype=np.int64)
        self.z = np.array([r.z for r in records], dtype=float).reshape(
            len(records), p
        )

    def __len__(self):
        return len(self.records)

    @property
    def rho(self):
        if self.n_unlabeled == 0:
            raise DataError("rho undefined: no unlabeled records")
        return self.n_labeled / len(self.records)

    def split(self):
        """Partition into (labeled, unlabeled) preserving order."""
        lab = [r for r in self.records if r.labeled]
        unlab = [r for r in self.records if not r.labeled]
        return (
            Cohort(lab, meta=self.meta, p=self.p),
            Cohort(unlab, meta=self.meta, p=self.p),
        )

    def surrogate_view(self):
        """Cohort whose primary outcome is the surrogate observation.

        Every subject observes the surrogate, so all rows are labeled in
        the view.
        """
        recs = [
            SubjectRecord(
                id=r.id,
                x=r.x_star,
                delta=r.delta_star,
                l=r.l,
                u=r.u,
                x_star=r.x_star,
                delta_star=r.delta_star,
                z=r.z,
                labeled=True,
            )
            for r in self.records
        ]
        return Cohort(recs, meta=self.meta)


def split(cohort):
    """Module-level alias of Cohort.split."""
    return cohort.split()


_BASE_COLS = ["id", "labeled", "x", "delta", "l", "u", "x_star", "delta_star"]


def _fmt(value):
    return _FLOAT_FMT % value


def save_cohort(cohort, path, header_comment=None):
    """Write the cohort as CSV, times with 17 significant digits.

    `header_comment` (a '#'-prefixed line) is written before the header;
    load_cohort skips such lines.
    """
    zcols = [f"z{j + 1}" for j in range(cohort.p)]
    with open(path, "w", newline="") as fh:
        if header_comment is not None:
            if not header_comment.startswith("#"):
                raise DataError("header comment must start with '#'")
            fh.write(header_comment.rstrip("\n") + "\n")
        writer = csv.writer(fh)
        writer.writerow(_BASE_COLS + zcols)
        for rec in cohort.records:
            row = [
                rec.id,
                "1" if rec.labeled else "0",
                _fmt(rec.x) if rec.x is not None else "",
                str(int(rec.delta)) if rec.delta is not None else "",
                _fmt(rec.l),
                _fmt(rec.u),
                _fmt(rec.x_star),
                str(int(rec.delta_star)),
            ] + [_fmt(zv) for zv in rec.z]
            writer.writerow(row)


def _parse_float(text, col, where):
    try:
        return float(text)
    except ValueError:
        raise DataError(f"{where}: malformed number {text!r} in column {col!r}")


def _parse_delta(text, col, where):
    try:
        return CensoringCode(int(text))
    except ValueError:
        raise DataError(f"{where}: invalid censoring code {text!r} in column {col!r}")


def load_cohort(path, schema=None):
    """Load a cohort CSV.

    `schema` optionally maps canonical column names (id, labeled, x,
    delta, l, u, x_star, delta_star) to the actual header names.
    Covariates are the z1..zp columns (always canonical).  Rows that
    violate the record invariants are reported with their row number.
    """
    colmap = dict(schema) if schema else {}

    def actual(name):
        return colmap.get(name, name)

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = None
        skipped = 0
        for row in reader:
            if row and row[0].startswith("#"):
                skipped += 1
                continue
            header = row
            break
        if header is None:
            raise DataError(f"{path}: empty file")
        index = {name: i for i, name in enumerate(header)}
        for name in _BASE_COLS:
            if actual(name) not in index:
                raise DataError(f"{path}: missing column {actual(name)!r}")
        zcols = []
        j = 1
        while f"z{j}" in index:
            zcols.append(index[f"z{j}"])
            j += 1
        if not zcols:
            raise DataError(f"{path}: no covariate columns z1..zp found")

        records = []
        for rownum, row in enumerate(reader, start=skipped + 2):
            where = f"{path}:{rownum}"
            if len(row) != len(header):
                raise DataError(f"{where}: expected {len(header)} fields, got {len(row)}")

            def cell(name):
                return row[index[actual(name)]].strip()

            labeled_txt = cell("labeled")
            if labeled_txt not in ("0", "1"):
                raise DataError(f"{where}: labeled must be 0 or 1, got {labeled_txt!r}")
            labeled = labeled_txt == "1"
            x_txt, d_txt = cell("x"), cell("delta")
            if labeled:
                if x_txt == "" or d_txt == "":
                    raise DataError(f"{where}: labeled row with empty x or delta")
                x = _parse_float(x_txt, actual("x"), where)
                delta = _parse_delta(d_txt, actual("delta"), where)
            else:
                if x_txt != "" or d_txt != "":
                    raise DataError(
                        f"{where}: unlabeled row must leave x and delta empty"
                    )
                x, delta = None, None
            rec = SubjectRecord(
                id=cell("id"),
                x=x,
                delta=delta,
                l=_parse_float(cell("l"), actual("l"), where),
                u=_parse_float(cell("u"), actual("u"), where),
                x_star=_parse_float(cell("x_star"), actual("x_star"), where),
                delta_star=_parse_delta(cell("delta_star"), actual("delta_star"), where),
                z=tuple(_parse_float(row[c], header[c], where) for c in zcols),
                labeled=labeled,
            )
            rec.validate(where=where)
            records.append(rec)

    if not records:
        raise DataError(f"{path}: no data rows")
    return Cohort(records)
