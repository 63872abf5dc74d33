"""Interaction log ingestion, temporal splitting, block construction and statistics.

An interaction log is stored column-wise in numpy arrays, grouped by user and
sorted by (timestamp, original input order) within each user. External ids are
interned to dense integers in first-appearance order, which makes re-ingestion
of the same file bit-reproducible.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, SchemaError

_DATA_MAGIC = b"MOSAICD1"


@dataclass(frozen=True)
class ColumnSchema:
    """Positions of the four required columns in a delimited text file."""

    user_col: int = 0
    item_col: int = 1
    feedback_col: int = 2
    timestamp_col: int = 3
    delimiter: str = "\t"

    @property
    def max_col(self) -> int:
        return max(self.user_col, self.item_col, self.feedback_col, self.timestamp_col)


@dataclass(frozen=True)
class PositiveRule:
    """Decides whether a raw feedback field is a positive interaction.

    Two forms are supported: a numeric threshold ("rating>=4") and an exact
    label match ("label==1").
    """

    kind: str  # "threshold" | "label"
    threshold: float = 0.0
    label: str = "1"

    @classmethod
    def parse(cls, text: str) -> "PositiveRule":
        text = text.strip().replace(" ", "")
        if text.startswith("rating>="):
            return cls(kind="threshold", threshold=float(text[len("rating>=") :]))
        if text.startswith("label=="):
            return cls(kind="label", label=text[len("label==") :])
        raise ValueError(f"unrecognized positive rule: {text!r}")

    def is_positive(self, feedback: str) -> bool:
        if self.kind == "threshold":
            return float(feedback) >= self.threshold
        return feedback.strip() == self.label

    def __str__(self) -> str:
        if self.kind == "threshold":
            return f"rating>={self.threshold:g}"
        return f"label=={self.label}"


@dataclass
class InteractionLog:
    """Column-wise interaction records grouped by user.

    Rows are ordered by (user, timestamp, input order); ``user_ptr`` holds
    CSR-style offsets so user ``u`` owns rows ``user_ptr[u]:user_ptr[u+1]``.
    """

    users: np.ndarray  # uint32, interned user per row
    items: np.ndarray  # uint32, interned item per row
    timestamps: np.ndarray  # int64
    labels: np.ndarray  # bool, True = positive
    user_index: dict  # external id -> interned id
    item_index: dict
    user_ptr: np.ndarray = field(default=None)  # int64, len n_users + 1

    def __post_init__(self):
        if self.user_ptr is None:
            self.user_ptr = _build_user_ptr(self.users, len(self.user_index))

    @property
    def n_users(self) -> int:
        return len(self.user_index)

    @property
    def n_items(self) -> int:
        return len(self.item_index)

    def __len__(self) -> int:
        return len(self.users)

    def user_rows(self, u: int) -> slice:
        return slice(int(self.user_ptr[u]), int(self.user_ptr[u + 1]))

    def user_counts(self) -> np.ndarray:
        return np.diff(self.user_ptr)


def _build_user_ptr(users: np.ndarray, n_users: int) -> np.ndarray:
    counts = np.bincount(users, minlength=n_users)
    ptr = np.zeros(n_users + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return ptr


@dataclass(frozen=True)
class Block:
    """One maximal run of negatives followed by the maximal run of positives."""

    user: int
    negatives: tuple  # ordered, duplicate-free item ids
    positives: tuple
    index_t: int  # 1-based ordinal within the user's block sequence


@dataclass
class SplitDataset:
    train: InteractionLog
    test: InteractionLog
    split_ratio: float
    dropped_users: int = 0


@dataclass
class DatasetStats:
    n_users: int
    n_items: int
    n_interactions: int
    sparsity: float
    avg_positives: float
    avg_negatives: float
    total_blocks: int

    def to_csv(self) -> str:
        header = "n_users,n_items,n_interactions,sparsity,avg_positives,avg_negatives,total_blocks"
        row = (
            f"{self.n_users},{self.n_items},{self.n_interactions},"
            f"{self.sparsity:.6f},{self.avg_positives:.4f},{self.avg_negatives:.4f},"
            f"{self.total_blocks}"
        )
        return header + "\n" + row + "\n"


def parse_interactions(stream, schema: ColumnSchema, positive_rule: PositiveRule) -> InteractionLog:
    """Parse a delimited text stream into an InteractionLog.

    Malformed rows (missing columns, unparseable fields) are counted and
    skipped. Raises SchemaError when no row ever exposes the declared
    columns, EmptyInput when the stream yields zero valid rows.
    """
    user_index: dict = {}
    item_index: dict = {}
    users, items, stamps, labels = [], [], [], []
    n_rows = 0
    n_skipped = 0
    saw_wide_enough_row = False
    need = schema.max_col + 1

    for line in stream:
        line = line.rstrip("\n").rstrip("\r")
        if not line:
            continue
        n_rows += 1
        parts = line.split(schema.delimiter)
        if len(parts) < need:
            n_skipped += 1
            continue
        saw_wide_enough_row = True
        try:
            ts = int(parts[schema.timestamp_col])
            pos = positive_rule.is_positive(parts[schema.feedback_col])
        except ValueError:
            n_skipped += 1
            continue
        u_ext = parts[schema.user_col]
        i_ext = parts[schema.item_col]
        u = user_index.setdefault(u_ext, len(user_index))
        i = item_index.setdefault(i_ext, len(item_index))
        users.append(u)
        items.append(i)
        stamps.append(ts)
        labels.append(pos)

    if not users:
        if n_rows > 0 and not saw_wide_enough_row:
            raise SchemaError(
                f"no row exposes column {schema.max_col} "
                f"with delimiter {schema.delimiter!r}"
            )
        raise EmptyInput(f"zero valid rows ({n_skipped} skipped of {n_rows})")

    users_a = np.asarray(users, dtype=np.uint32)
    items_a = np.asarray(items, dtype=np.uint32)
    stamps_a = np.asarray(stamps, dtype=np.int64)
    labels_a = np.asarray(labels, dtype=bool)

    # Stable group-and-sort: user, then timestamp, input order as tie-break.
    order = np.lexsort((np.arange(len(users_a)), stamps_a, users_a))
    log = InteractionLog(
        users=users_a[order],
        items=items_a[order],
        timestamps=stamps_a[order],
        labels=labels_a[order],
        user_index=user_index,
        item_index=item_index,
    )
    log.skipped_rows = n_skipped
    return log


def temporal_split(log: InteractionLog, ratio: float) -> SplitDataset:
    """Per-user temporal split: the oldest ceil(ratio * n_u) rows go to train.

    Users with fewer than two interactions are dropped (they cannot appear on
    both sides); surviving users are re-interned densely in their original
    order. A user whose test side would come out empty donates its most
    recent interaction to test instead.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("split ratio must lie in (0, 1)")
    counts = log.user_counts()
    keep = counts >= 2
    dropped = int(np.count_nonzero(~keep))

    old_ids = np.flatnonzero(keep)
    ext_by_old = {v: k for k, v in log.user_index.items()}
    new_user_index = {ext_by_old[int(u)]: new for new, u in enumerate(old_ids)}

    tr_idx, te_idx, tr_users, te_users = [], [], [], []
    for new_u, old_u in enumerate(old_ids):
        rows = log.user_rows(int(old_u))
        n = rows.stop - rows.start
        n_train = math.ceil(ratio * n)
        if n_train >= n:
            n_train = n - 1
        cut = rows.start + n_train
        tr_idx.append(np.arange(rows.start, cut))
        te_idx.append(np.arange(cut, rows.stop))
        tr_users.append(np.full(n_train, new_u, dtype=np.uint32))
        te_users.append(np.full(n - n_train, new_u, dtype=np.uint32))

    if not tr_idx:
        raise EmptyInput("no user has two or more interactions")

    def _take(idx_parts, user_parts):
        idx = np.concatenate(idx_parts)
        return InteractionLog(
            users=np.concatenate(user_parts),
            items=log.items[idx],
            timestamps=log.timestamps[idx],
            labels=log.labels[idx],
            user_index=new_user_index,
            item_index=log.item_index,
        )

    return SplitDataset(
        train=_take(tr_idx, tr_users),
        test=_take(te_idx, te_users),
        split_ratio=ratio,
        dropped_users=dropped,
    )


def _dedup_keep_order(seq) -> tuple:
    return tuple(dict.fromkeys(int(x) for x in seq))


def build_blocks(user: int, items: np.ndarray, labels: np.ndarray) -> list:
    """Run-length scan of one user's time-ordered rows into Blocks.

    Each maximal run of negatives immediately followed by a maximal run of
    positives yields one Block; leading positives and trailing negatives are
    discarded.
    """
    labels = np.asarray(labels, dtype=bool)
    n = len(labels)
    if n == 0:
        return []
    change = (np.flatnonzero(labels[1:] != labels[:-1]) + 1).tolist()
    starts = [0] + change
    ends = change + [n]
    run_is_pos = labels[starts].tolist()
    item_list = items.tolist() if isinstance(items, np.ndarray) else list(items)

    blocks = []
    t = 0
    for r in range(len(starts) - 1):
        if not run_is_pos[r] and run_is_pos[r + 1]:
            t += 1
            blocks.append(
                Block(
                    user=user,
                    negatives=tuple(dict.fromkeys(item_list[starts[r] : ends[r]])),
                    positives=tuple(dict.fromkeys(item_list[starts[r + 1] : ends[r + 1]])),
                    index_t=t,
                )
            )
    return blocks


def _gather_segments(values: np.ndarray, starts: np.ndarray, ends: np.ndarray):
    """Concatenate values[starts[b]:ends[b]] for every segment b, returning
    the flat array and the per-segment length vector."""
    lengths = ends - starts
    total = int(lengths.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64), lengths
    step = np.ones(total, dtype=np.int64)
    step[0] = starts[0]
    cuts = np.cumsum(lengths)[:-1]
    step[cuts] = starts[1:] - ends[:-1] + 1
    return values[np.cumsum(step)], lengths


def _dedup_segments(flat: np.ndarray, lengths: np.ndarray):
    """Drop repeats of an item within a segment, keeping first occurrence."""
    seg_id = np.repeat(np.arange(len(lengths)), lengths)
    order = np.lexsort((flat, seg_id))  # stable: ties keep time order
    dup = (seg_id[order][1:] == seg_id[order][:-1]) & (flat[order][1:] == flat[order][:-1])
    if not dup.any():
        return flat, lengths
    keep = np.ones(len(flat), dtype=bool)
    keep[order[1:][dup]] = False
    return flat[keep], np.bincount(seg_id[keep], minlength=len(lengths))


def build_block_arrays(items: np.ndarray, labels: np.ndarray):
    """Vectorized equivalent of build_blocks for one user's rows.

    Returns (neg_flat, neg_ptr, pos_flat, pos_ptr): block b's negatives are
    neg_flat[neg_ptr[b]:neg_ptr[b+1]] (deduplicated, time order), likewise
    positives; block order and contents match build_blocks exactly.
    """
    labels = np.asarray(labels, dtype=bool)
    items = np.asarray(items, dtype=np.int64)
    n = len(labels)
    empty = np.empty(0, dtype=np.int64), np.zeros(1, dtype=np.int64)
    if n == 0:
        return (*empty, *empty)
    change = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [n]))
    run_is_pos = labels[starts]
    pair = np.flatnonzero(~run_is_pos[:-1] & run_is_pos[1:])
    if len(pair) == 0:
        return (*empty, *empty)
    neg_flat, neg_len = _gather_segments(items, starts[pair], ends[pair])
    pos_flat, pos_len = _gather_segments(items, starts[pair + 1], ends[pair + 1])
    neg_flat, neg_len = _dedup_segments(neg_flat, neg_len)
    pos_flat, pos_len = _dedup_segments(pos_flat, pos_len)
    ptr = lambda lens: np.concatenate(([0], np.cumsum(lens))).astype(np.int64)
    return neg_flat, ptr(neg_len), pos_flat, ptr(pos_len)


def iter_user_blocks(log: InteractionLog):
    """Yield (user, blocks) for every user in interned-id order."""
    for u in range(log.n_users):
        rows = log.user_rows(u)
        yield u, build_blocks(u, log.items[rows], log.labels[rows])


def dataset_stats(log: InteractionLog) -> DatasetStats:
    if len(log) == 0:
        raise EmptyInput("empty log")
    n_u, n_i = log.n_users, log.n_items
    n = len(log)
    n_pos = int(np.count_nonzero(log.labels))
    total_blocks = sum(len(b) for _, b in iter_user_blocks(log))
    return DatasetStats(
        n_users=n_u,
        n_items=n_i,
        n_interactions=n,
        sparsity=1.0 - n / (n_u * n_i),
        avg_positives=n_pos / n_u,
        avg_negatives=(n - n_pos) / n_u,
        total_blocks=total_blocks,
    )


def write_interactions(log: InteractionLog, path, ids_sidecar: bool = True) -> None:
    """Persist a log as a compact binary file (header + column blocks).

    Layout: magic, u32 n_users, u32 n_items, u64 n_rows, then users (u32),
    items (u32), timestamps (i64), labels (u8), all little-endian.
    """
    with open(path, "wb") as fh:
        fh.write(_DATA_MAGIC)
        fh.write(struct.pack("<IIQ", log.n_users, log.n_items, len(log)))
        fh.write(log.users.astype("<u4").tobytes())
        fh.write(log.items.astype("<u4").tobytes())
        fh.write(log.timestamps.astype("<i8").tobytes())
        fh.write(log.labels.astype("<u1").tobytes())
    if ids_sidecar:
        sidecar = {
            "users": [str(k) for k in log.user_index],
            "items": [str(k) for k in log.item_index],
        }
        with open(str(path) + ".ids.json", "w") as fh:
            json.dump(sidecar, fh)


def read_interactions(path) -> InteractionLog:
    with open(path, "rb") as fh:
        magic = fh.read(len(_DATA_MAGIC))
        if magic != _DATA_MAGIC:
            raise SchemaError(f"{path}: not a normalized interaction file")
        n_users, n_items, n_rows = struct.unpack("<IIQ", fh.read(16))
        users = np.frombuffer(fh.read(4 * n_rows), dtype="<u4").astype(np.uint32)
        items = np.frombuffer(fh.read(4 * n_rows), dtype="<u4").astype(np.uint32)
        stamps = np.frombuffer(fh.read(8 * n_rows), dtype="<i8").astype(np.int64)
        labels = np.frombuffer(fh.read(n_rows), dtype="<u1").astype(bool)
    try:
        with open(str(path) + ".ids.json") as fh:
            sidecar = json.load(fh)
        user_index = {k: i for i, k in enumerate(sidecar["users"])}
        item_index = {k: i for i, k in enumerate(sidecar["items"])}
    except FileNotFoundError:
        user_index = {i: i for i in range(n_users)}
        item_index = {i: i for i in range(n_items)}
    return InteractionLog(
        users=users,
        items=items,
        timestamps=stamps,
        labels=labels,
        user_index=user_index,
        item_index=item_index,
    )


def restrict_to_users(log: InteractionLog, users: set) -> InteractionLog:
    """Keep only the rows of the given (interned) users; interning unchanged.

    The returned log intentionally keeps the full user/item index so model
    shapes stay aligned with the parent log.
    """
    mask = np.isin(log.users, np.fromiter(users, dtype=np.uint32, count=len(users)))
    return InteractionLog(
        users=log.users[mask],
        items=log.items[mask],
        timestamps=log.timestamps[mask],
        labels=log.labels[mask],
        user_index=log.user_index,
        item_index=log.item_index,
    )
