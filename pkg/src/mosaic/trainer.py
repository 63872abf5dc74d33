"""Sequential block-wise training (snape) and the bootstrap-sampled pairwise
baseline (bpr), with per-user embedding trajectory recording."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import InteractionLog, build_block_arrays
from .errors import NoEligibleUsers, NonFiniteUpdate
from .model import (
    LatentModel,
    _user_stream_core,
    init_model,
    triplet_sgd_step,
)


@dataclass
class TrainConfig:
    dim_k: int = 4
    reg_lambda: float = 0.0
    learning_rate: float = 0.05
    epochs: int = 1
    seed: int = 0
    snapshot_every: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")


@dataclass
class Trajectory:
    """Time-ordered snapshots of one user's embedding row, one per block
    update (or every snapshot_every-th update), accumulated across epochs."""

    user: int
    snapshots: list = field(default_factory=list)
    epoch_boundaries: list = field(default_factory=list)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.snapshots, dtype=float)

    def __len__(self) -> int:
        return len(self.snapshots)


def train_snape(train: InteractionLog, cfg: TrainConfig, users=None):
    """Sequential training over per-user block streams.

    For each epoch, users are visited in interned-id order and each user's
    blocks in time order; one SGD step is applied per block and a copy of the
    user's embedding row is appended to that user's trajectory. Returns the
    final model and the trajectory map. ``users`` optionally restricts
    training to a subset of interned user ids (model shape is unchanged).
    """
    if len(train) == 0:
        raise NoEligibleUsers("empty training log")
    model = init_model(train.n_users, train.n_items, cfg.dim_k, cfg.seed, cfg.reg_lambda)
    # flatten each user's block item lists once so a whole stream runs inside
    # the jitted kernel; update order is identical to one sgd_step per block
    user_arrays = []
    for u in range(train.n_users):
        if users is not None and u not in users:
            continue
        rows = train.user_rows(u)
        neg_flat, neg_ptr, pos_flat, pos_ptr = build_block_arrays(
            train.items[rows], train.labels[rows]
        )
        if len(pos_ptr) > 1:
            user_arrays.append((u, pos_flat, pos_ptr, neg_flat, neg_ptr))

    trajectories = {u: Trajectory(user=u) for u, *_ in user_arrays}
    blocks_seen = 0
    for epoch in range(cfg.epochs):
        for u, pos_flat, pos_ptr, neg_flat, neg_ptr in user_arrays:
            traj = trajectories[u]
            n_blocks = len(pos_ptr) - 1
            snaps = np.empty((n_blocks // cfg.snapshot_every, cfg.dim_k))
            ok, n_snaps, failed = _user_stream_core(
                model.U, model.V, u, pos_flat, pos_ptr, neg_flat, neg_ptr,
                cfg.learning_rate, model.reg_lambda, cfg.snapshot_every, snaps,
            )
            blocks_seen += failed if not ok else n_blocks
            traj.snapshots.extend(snaps[:n_snaps])
            if not ok:
                raise NonFiniteUpdate(
                    f"non-finite entry after update of user {u}",
                    user=u,
                    block_index=failed + 1,
                    epoch=epoch,
                )
            traj.epoch_boundaries.append(len(traj.snapshots))
    model.blocks_processed = blocks_seen
    return model, trajectories


def train_bpr(train: InteractionLog, cfg: TrainConfig, n_samples: int) -> LatentModel:
    """Pairwise baseline: bootstrap sampling of (user, positive, negative)
    triplets, one SGD step each.

    Users are eligible when they have at least one positive and one negative
    training interaction; the negative is drawn from the user's own
    viewed-but-unclicked items.
    """
    model = init_model(train.n_users, train.n_items, cfg.dim_k, cfg.seed, cfg.reg_lambda)
    pos_items, neg_items, eligible = [], [], []
    for u in range(train.n_users):
        rows = train.user_rows(u)
        items = train.items[rows]
        labels = train.labels[rows]
        p = items[labels]
        q = items[~labels]
        pos_items.append(p)
        neg_items.append(q)
        if len(p) and len(q):
            eligible.append(u)
    if not eligible:
        raise NoEligibleUsers("no user has both positive and negative interactions")
    eligible = np.asarray(eligible, dtype=np.int64)

    rng = np.random.default_rng(cfg.seed)
    for _ in range(n_samples):
        u = int(eligible[rng.integers(len(eligible))])
        p = pos_items[u]
        q = neg_items[u]
        i = int(p[rng.integers(len(p))])
        j = int(q[rng.integers(len(q))])
        triplet_sgd_step(model, u, i, j, cfg.learning_rate)
    return model


def write_trajectories(trajectories: dict, dim_k: int, path) -> None:
    """One JSON record per user: {user, dim_k, snapshots}."""
    with open(path, "w") as fh:
        for u in sorted(trajectories):
            traj = trajectories[u]
            rec = {
                "user": int(u),
                "dim_k": int(dim_k),
                "snapshots": [[float(v) for v in snap] for snap in traj.snapshots],
            }
            fh.write(json.dumps(rec) + "\n")


def read_trajectories(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            traj = Trajectory(user=int(rec["user"]))
            traj.snapshots = [np.asarray(s, dtype=float) for s in rec["snapshots"]]
            out[traj.user] = traj
    return out
