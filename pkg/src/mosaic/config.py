"""Run configuration: one INI-style file with flat key-value sections.

Environment variables prefixed ``MOSAIC_`` override file values, e.g.
``MOSAIC_TRAIN_SEED=7`` overrides ``seed`` in the ``[train]`` section, and
command-line flags override both.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

from .data import ColumnSchema, PositiveRule
from .memory import MemoryConfig
from .trainer import TrainConfig

_DELIMITERS = {"tab": "\t", "comma": ","}


@dataclass
class RunConfig:
    schema: ColumnSchema = field(default_factory=ColumnSchema)
    positive_rule: PositiveRule = field(default_factory=lambda: PositiveRule.parse("label==1"))
    split_ratio: float = 0.8
    train: TrainConfig = field(default_factory=TrainConfig)
    bpr_samples: int = 100_000
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    k_values: tuple = (5, 10)
    seed: int = 0
    output_dir: str = "runs"

    def snapshot(self) -> str:
        """Canonical text form written into every run directory."""
        delim = "tab" if self.schema.delimiter == "\t" else "comma"
        lines = [
            "[data]",
            f"delimiter = {delim}",
            f"user_col = {self.schema.user_col}",
            f"item_col = {self.schema.item_col}",
            f"feedback_col = {self.schema.feedback_col}",
            f"timestamp_col = {self.schema.timestamp_col}",
            f"positive_rule = {self.positive_rule}",
            f"split_ratio = {self.split_ratio}",
            "",
            "[train]",
            f"dim_k = {self.train.dim_k}",
            f"reg_lambda = {self.train.reg_lambda}",
            f"learning_rate = {self.train.learning_rate}",
            f"epochs = {self.train.epochs}",
            f"snapshot_every = {self.train.snapshot_every}",
            f"bpr_samples = {self.bpr_samples}",
            "",
            "[memory]",
            f"min_length = {self.memory.min_length}",
            f"level = {self.memory.level}",
            f"m_rule = {self.memory.m_rule}",
            "",
            "[eval]",
            f"k_values = {','.join(str(k) for k in self.k_values)}",
            "",
            "[run]",
            f"seed = {self.seed}",
            f"output_dir = {self.output_dir}",
        ]
        return "\n".join(lines) + "\n"


def _get(parser, section, key, default, env=os.environ):
    env_key = f"MOSAIC_{section.upper()}_{key.upper()}"
    if env_key in env:
        return env[env_key]
    if parser.has_option(section, key):
        return parser.get(section, key)
    return default


def load_config(path=None, env=os.environ) -> RunConfig:
    parser = configparser.ConfigParser()
    if path is not None:
        with open(path) as fh:
            parser.read_file(fh)

    def get(section, key, default):
        return _get(parser, section, key, default, env)

    delim_name = str(get("data", "delimiter", "tab")).lower()
    delimiter = _DELIMITERS.get(delim_name, delim_name)
    schema = ColumnSchema(
        user_col=int(get("data", "user_col", 0)),
        item_col=int(get("data", "item_col", 1)),
        feedback_col=int(get("data", "feedback_col", 2)),
        timestamp_col=int(get("data", "timestamp_col", 3)),
        delimiter=delimiter,
    )
    seed = int(get("run", "seed", 0))
    train = TrainConfig(
        dim_k=int(get("train", "dim_k", 4)),
        reg_lambda=float(get("train", "reg_lambda", 0.0)),
        learning_rate=float(get("train", "learning_rate", 0.05)),
        epochs=int(get("train", "epochs", 1)),
        seed=seed,
        snapshot_every=int(get("train", "snapshot_every", 1)),
    )
    memory = MemoryConfig(
        min_length=int(get("memory", "min_length", 32)),
        level=float(get("memory", "level", 0.05)),
        m_rule=str(get("memory", "m_rule", "sqrt")),
    )
    k_values = tuple(
        int(k) for k in str(get("eval", "k_values", "5,10")).replace(" ", "").split(",") if k
    )
    if any(k < 1 for k in k_values):
        raise ValueError("eval k_values must all be >= 1")
    return RunConfig(
        schema=schema,
        positive_rule=PositiveRule.parse(str(get("data", "positive_rule", "label==1"))),
        split_ratio=float(get("data", "split_ratio", 0.8)),
        train=train,
        bpr_samples=int(get("train", "bpr_samples", 100_000)),
        memory=memory,
        k_values=k_values,
        seed=seed,
        output_dir=str(get("run", "output_dir", "runs")),
    )
