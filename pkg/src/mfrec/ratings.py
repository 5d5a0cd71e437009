"""Rating ingestion, the compressed sparse user-item store, and dense imputed views."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, NamedTuple

import numpy as np


class RatingError(ValueError):
    """Base class for data problems in rating files and matrices."""


class ParseError(RatingError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ValidationError(RatingError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateRatingError(RatingError):
    pass


@dataclass(frozen=True)
class RatingScale:
    min: float
    max: float

    def __post_init__(self):
        if not (math.isfinite(self.min) and math.isfinite(self.max)):
            raise ValueError(f"rating scale bounds must be finite, got [{self.min}, {self.max}]")
        if not self.min < self.max:
            raise ValueError(f"rating scale needs min < max, got [{self.min}, {self.max}]")

    @classmethod
    def parse(cls, text: str) -> "RatingScale":
        """Parse ``"MIN:MAX"`` (e.g. ``"1:5"``)."""
        try:
            lo, hi = text.split(":")
            return cls(float(lo), float(hi))
        except ValueError as exc:
            raise ValueError(f"bad rating scale {text!r}, expected MIN:MAX") from exc

    def contains(self, value: float) -> bool:
        return self.min <= value <= self.max

    def clamp(self, value):
        return np.clip(value, self.min, self.max)

    def __str__(self):
        return f"{self.min:g}:{self.max:g}"


class RatingTriple(NamedTuple):
    user_raw: str
    item_raw: str
    rating: float
    timestamp: int | None = None


def rescale(value: float, scale: RatingScale, direction: str = "to_unit") -> float:
    """Map a rating between its original scale and [0, 1]."""
    span = scale.max - scale.min
    if direction == "to_unit":
        if not scale.contains(value):
            raise ValueError(f"{value} outside rating scale [{scale.min}, {scale.max}]")
        return (value - scale.min) / span
    if direction == "from_unit":
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{value} outside the unit interval")
        return value * span + scale.min
    raise ValueError(f"unknown direction {direction!r}")


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def _text_stream(source) -> IO[str]:
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8"), newline="")
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def _parse_record(lineno, user, item, rating, timestamp, scale, on_out_of_range):
    try:
        value = float(rating)
    except ValueError:
        raise ParseError(lineno, f"non-numeric rating {rating!r}") from None
    if not math.isfinite(value):
        raise ParseError(lineno, f"non-finite rating {rating!r}")
    ts = None
    if timestamp is not None and timestamp.strip():
        try:
            ts = int(timestamp)
        except ValueError:
            raise ParseError(lineno, f"non-integer timestamp {timestamp!r}") from None
    if not scale.contains(value):
        if on_out_of_range == "clamp":
            value = float(scale.clamp(value))
        else:
            raise ValidationError(
                lineno, f"rating {value:g} outside scale [{scale.min:g}, {scale.max:g}]")
    return RatingTriple(user.strip(), item.strip(), value, ts)


def load_ratings(source, format: str = "tsv", scale: RatingScale = RatingScale(1, 5),
                 on_out_of_range: str = "error") -> list[RatingTriple]:
    """Read rating triples from a UTF-8 byte stream.

    Args:
        source: binary file object, or raw ``bytes``.
        format: ``"tsv"`` (``user<TAB>item<TAB>rating[<TAB>timestamp]``, no header)
            or ``"csv"`` (header row naming ``user,item,rating[,timestamp]``).
        scale: declared rating bounds.
        on_out_of_range: ``"error"`` rejects ratings outside ``scale``,
            ``"clamp"`` pulls them to the nearest bound.

    Columns beyond the recognised ones are ignored. Blank lines are skipped.
    """
    if format not in ("tsv", "csv"):
        raise ValueError(f"unknown rating format {format!r}")
    if on_out_of_range not in ("error", "clamp"):
        raise ValueError(f"unknown out-of-range policy {on_out_of_range!r}")

    text = _text_stream(source)
    triples = []
    if format == "tsv":
        for lineno, line in enumerate(text, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) < 3:
                raise ParseError(lineno, f"expected at least 3 tab-separated fields, got {len(parts)}")
            ts = parts[3] if len(parts) > 3 else None
            triples.append(_parse_record(lineno, parts[0], parts[1], parts[2], ts,
                                         scale, on_out_of_range))
        return triples

    reader = csv.reader(text)
    header = next(reader, None)
    if header is None:
        return triples
    names = [h.strip().lower() for h in header]
    try:
        cols = [names.index(name) for name in ("user", "item", "rating")]
    except ValueError:
        raise ParseError(1, f"csv header must name user,item,rating; got {header!r}") from None
    ts_col = names.index("timestamp") if "timestamp" in names else None
    width = max(cols) + 1
    for row in reader:
        lineno = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < width:
            raise ParseError(lineno, f"expected at least {width} fields, got {len(row)}")
        ts = row[ts_col] if ts_col is not None and ts_col < len(row) else None
        triples.append(_parse_record(lineno, row[cols[0]], row[cols[1]], row[cols[2]], ts,
                                     scale, on_out_of_range))
    return triples


def load_ratings_file(path, format: str = "tsv", scale: RatingScale = RatingScale(1, 5),
                      on_out_of_range: str = "error") -> list[RatingTriple]:
    with open(path, "rb") as fh:
        return load_ratings(fh, format, scale, on_out_of_range)


# ---------------------------------------------------------------------------
# Sparse store
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SparseRatingMatrix:
    """Observed ratings in compressed-row layout.

    ``row_offsets[u]:row_offsets[u+1]`` slices ``col_indices``/``values`` for
    user ``u``; columns are strictly increasing within a row. ``user_ids`` and
    ``item_ids`` hold the raw ids in dense-index order.
    """

    n_users: int
    n_items: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    user_ids: tuple
    item_ids: tuple
    scale: RatingScale
    user_index: dict = field(init=False, repr=False)
    item_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "user_index", {u: i for i, u in enumerate(self.user_ids)})
        object.__setattr__(self, "item_index", {t: i for i, t in enumerate(self.item_ids)})
        for arr in (self.row_offsets, self.col_indices, self.values):
            arr.flags.writeable = False

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_users, self.n_items

    def row(self, user: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.row_offsets[user], self.row_offsets[user + 1]
        return self.col_indices[lo:hi], self.values[lo:hi]

    def row_indices(self) -> np.ndarray:
        """Dense user index of every stored entry, aligned with ``col_indices``."""
        return np.repeat(np.arange(self.n_users), np.diff(self.row_offsets))

    def entries(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.row_indices(), self.col_indices, self.values

    def mask(self) -> np.ndarray:
        observed = np.zeros(self.shape, dtype=bool)
        observed[self.row_indices(), self.col_indices] = True
        return observed

    def to_dense(self, missing: float = np.nan) -> np.ndarray:
        out = np.full(self.shape, missing, dtype=float)
        out[self.row_indices(), self.col_indices] = self.values
        return out

    def global_mean(self) -> float:
        if self.nnz == 0:
            raise RatingError("no observed ratings, mean is undefined")
        return float(self.values.mean())

    def user_means(self) -> np.ndarray:
        """Per-user mean rating; users without ratings get the global mean."""
        counts = np.diff(self.row_offsets)
        sums = np.bincount(self.row_indices(), weights=self.values, minlength=self.n_users)
        return _means_with_fallback(sums, counts, self.global_mean())

    def item_means(self) -> np.ndarray:
        """Per-item mean rating; unrated items get the global mean."""
        counts = np.bincount(self.col_indices, minlength=self.n_items)
        sums = np.bincount(self.col_indices, weights=self.values, minlength=self.n_items)
        return _means_with_fallback(sums, counts, self.global_mean())

    def with_entries(self, users, items, values) -> "SparseRatingMatrix":
        """A matrix over the same id spaces holding only the given entries."""
        return _pack(np.asarray(users, dtype=np.int64), np.asarray(items, dtype=np.int64),
                     np.asarray(values, dtype=float),
                     self.user_ids, self.item_ids, self.scale)

    def check(self) -> None:
        """Raise ``AssertionError`` if any structural invariant is broken."""
        ro = self.row_offsets
        assert len(ro) == self.n_users + 1 and ro[0] == 0
        assert np.all(np.diff(ro) >= 0)
        assert ro[-1] == len(self.col_indices) == len(self.values)
        for u in range(self.n_users):
            cols, _ = self.row(u)
            assert np.all(np.diff(cols) > 0)
        if self.nnz:
            assert self.col_indices.min() >= 0 and self.col_indices.max() < self.n_items
            assert self.values.min() >= self.scale.min and self.values.max() <= self.scale.max
        assert len(self.user_ids) == len(self.user_index) == self.n_users
        assert len(self.item_ids) == len(self.item_index) == self.n_items


def _means_with_fallback(sums, counts, fallback):
    means = np.full(len(sums), fallback, dtype=float)
    rated = counts > 0
    means[rated] = sums[rated] / counts[rated]
    return means


def _pack(users, items, values, user_ids, item_ids, scale):
    order = np.lexsort((items, users))
    users, items, values = users[order], items[order], values[order]
    counts = np.bincount(users, minlength=len(user_ids))
    offsets = np.zeros(len(user_ids) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return SparseRatingMatrix(
        n_users=len(user_ids), n_items=len(item_ids), row_offsets=offsets,
        col_indices=items.astype(np.int64), values=values.astype(float),
        user_ids=tuple(user_ids), item_ids=tuple(item_ids), scale=scale)


def build_matrix(triples: Iterable[RatingTriple], duplicate_policy: str = "error",
                 scale: RatingScale = RatingScale(1, 5)) -> SparseRatingMatrix:
    """Pack rating triples into a :class:`SparseRatingMatrix`.

    Dense indices follow first appearance of each raw id. Repeated
    ``(user, item)`` pairs are rejected (``"error"``), averaged (``"mean"``)
    or resolved to the later rating (``"last"``).

    ``scale`` should be the one the triples were loaded with.
    """
    if duplicate_policy not in ("error", "mean", "last"):
        raise ValueError(f"unknown duplicate policy {duplicate_policy!r}")
    triples = list(triples)
    if not triples:
        raise RatingError("cannot build a rating matrix from zero ratings")

    user_index: dict = {}
    item_index: dict = {}
    cells: dict = {}
    for t in triples:
        u = user_index.setdefault(t.user_raw, len(user_index))
        i = item_index.setdefault(t.item_raw, len(item_index))
        key = (u, i)
        if key in cells:
            if duplicate_policy == "error":
                raise DuplicateRatingError(
                    f"duplicate rating for user {t.user_raw!r}, item {t.item_raw!r}")
            cells[key].append(t.rating)
        else:
            cells[key] = [t.rating]

    if duplicate_policy == "mean":
        resolved = {k: math.fsum(v) / len(v) for k, v in cells.items()}
    else:
        resolved = {k: v[-1] for k, v in cells.items()}

    keys = np.array(list(resolved.keys()), dtype=np.int64).reshape(-1, 2)
    vals = np.fromiter(resolved.values(), dtype=float, count=len(resolved))
    if vals.min() < scale.min or vals.max() > scale.max:
        raise RatingError(f"ratings fall outside scale [{scale.min:g}, {scale.max:g}]")
    return _pack(keys[:, 0], keys[:, 1], vals, list(user_index), list(item_index), scale)


# ---------------------------------------------------------------------------
# Imputation
# ---------------------------------------------------------------------------

class FillKind(enum.Enum):
    GLOBAL_MEAN = "global_mean"
    USER_MEAN = "user_mean"
    ITEM_MEAN = "item_mean"
    ZERO = "zero"
    CONSTANT = "constant"


_FILL_ORDER = {kind: n for n, kind in enumerate(FillKind)}


@dataclass(frozen=True)
class FillStrategy:
    """How unobserved cells are filled before dense factorization."""

    kind: FillKind
    constant: float | None = None

    def __post_init__(self):
        if (self.kind is FillKind.CONSTANT) != (self.constant is not None):
            raise ValueError("a constant value is required for, and only for, constant fill")

    @classmethod
    def parse(cls, text: str) -> "FillStrategy":
        """Parse ``user_mean``, ``item_mean``, ``global_mean``, ``zero`` or ``constant:C``."""
        text = text.strip().lower()
        if text.startswith("constant"):
            _, _, value = text.partition(":")
            try:
                return cls(FillKind.CONSTANT, float(value))
            except ValueError:
                raise ValueError(f"constant fill needs a value, e.g. constant:3; got {text!r}") from None
        try:
            return cls(FillKind(text))
        except ValueError:
            names = ", ".join(k.value for k in FillKind)
            raise ValueError(f"unknown fill strategy {text!r} (expected one of {names})") from None

    @property
    def name(self) -> str:
        if self.kind is FillKind.CONSTANT:
            return f"constant:{self.constant:g}"
        return self.kind.value

    def sort_key(self):
        return _FILL_ORDER[self.kind], self.constant or 0.0

    def __str__(self):
        return self.name


GLOBAL_MEAN = FillStrategy(FillKind.GLOBAL_MEAN)
USER_MEAN = FillStrategy(FillKind.USER_MEAN)
ITEM_MEAN = FillStrategy(FillKind.ITEM_MEAN)
ZERO = FillStrategy(FillKind.ZERO)


def impute_dense(m: SparseRatingMatrix, strategy: FillStrategy) -> np.ndarray:
    """Dense ``n_users x n_items`` copy of ``m`` with unobserved cells filled."""
    kind = strategy.kind
    if kind is FillKind.ZERO:
        out = np.zeros(m.shape)
    elif kind is FillKind.CONSTANT:
        if not m.scale.contains(strategy.constant):
            raise ValueError(f"constant fill {strategy.constant:g} outside scale "
                             f"[{m.scale.min:g}, {m.scale.max:g}]")
        out = np.full(m.shape, strategy.constant, dtype=float)
    elif kind is FillKind.GLOBAL_MEAN:
        out = np.full(m.shape, m.global_mean())
    elif kind is FillKind.USER_MEAN:
        out = np.repeat(m.user_means()[:, None], m.n_items, axis=1)
    else:
        out = np.repeat(m.item_means()[None, :], m.n_users, axis=0)
    out[m.row_indices(), m.col_indices] = m.values
    return out
