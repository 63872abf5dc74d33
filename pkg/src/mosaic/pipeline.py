"""Two-stage training with a long-memory user filter in between.

Stage 1 trains the sequential model on every user and records embedding
trajectories. Each trajectory is classified (stationarity gate, then the
memory-parameter gate); only users whose embedding components are all
stationary with memory parameter in (0, 1/2) survive. Stage 2 re-trains
from the same seed on the surviving users' interactions only.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import InteractionLog
from .errors import EmptyFilter
from .memory import MemoryConfig, VERDICT_LRD, VERDICT_NON_STATIONARY, classify_user
from .model import LatentModel
from .trainer import TrainConfig, train_snape


@dataclass
class PipelineReport:
    total_users: int
    stationary_users: int
    stationary_lrd_users: int
    removed_users: int
    stage_seconds: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "total_users": self.total_users,
            "stationary_users": self.stationary_users,
            "stationary_lrd_users": self.stationary_lrd_users,
            "removed_users": self.removed_users,
            "stage_seconds": self.stage_seconds,
        }


def filter_users(reports: dict) -> set:
    """Users whose verdict passed both gates."""
    return {u for u, rep in reports.items() if rep.verdict == VERDICT_LRD}


def classify_trajectories(trajectories: dict, mem_cfg: MemoryConfig) -> dict:
    return {
        u: classify_user(u, traj.as_array(), mem_cfg) if len(traj) else classify_user(u, np.zeros((0, 1)), mem_cfg)
        for u, traj in trajectories.items()
    }


def run_mosaic(train: InteractionLog, cfg: TrainConfig, mem_cfg: MemoryConfig = MemoryConfig()):
    """Full two-stage run. Returns (stage1 model, stage2 model, trajectories,
    reports, PipelineReport). Raises EmptyFilter when nobody survives."""
    timings = {}
    t0 = time.perf_counter()
    stage1, trajectories = train_snape(train, cfg)
    timings["stage1_train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    reports = classify_trajectories(trajectories, mem_cfg)
    survivors = filter_users(reports)
    timings["memory_filter"] = time.perf_counter() - t0

    total = len(reports)
    stationary = sum(
        1 for rep in reports.values()
        if rep.components and rep.verdict != VERDICT_NON_STATIONARY and all(c.stationary for c in rep.components)
    )
    report = PipelineReport(
        total_users=total,
        stationary_users=stationary,
        stationary_lrd_users=len(survivors),
        removed_users=total - len(survivors),
        stage_seconds=timings,
    )
    if not survivors:
        raise EmptyFilter("memory filter removed every user", report=report)

    t0 = time.perf_counter()
    stage2, _ = train_snape(train, cfg, users=survivors)
    timings["stage2_train"] = time.perf_counter() - t0
    report.stage_seconds = timings
    return stage1, stage2, trajectories, reports, report


def compose_scoring_model(
    stage1: LatentModel,
    stage2: LatentModel,
    survivors: set,
    train: InteractionLog,
) -> LatentModel:
    """Scoring model used at evaluation time after the two-stage run.

    Surviving users keep their stage-2 rows; filtered-out users fall back to
    their stage-1 rows. Item rows come from stage 2 when the item occurs in
    the survivors' training data, from stage 1 otherwise.
    """
    U = stage1.U.copy()
    surv = sorted(survivors)
    U[surv] = stage2.U[surv]
    V = stage1.V.copy()
    if surv:
        mask = np.isin(train.users, np.asarray(surv, dtype=train.users.dtype))
        stage2_items = np.unique(train.items[mask])
        V[stage2_items] = stage2.V[stage2_items]
    return LatentModel(U=U, V=V, reg_lambda=stage2.reg_lambda)
