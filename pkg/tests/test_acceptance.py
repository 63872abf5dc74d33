"""Acceptance suite: one test per shipped claim, pinned tolerances.

Criteria touching the MovieLens-1M dataset run only when MOSAIC_ML1M_PATH
points at a ratings.dat file (UserID::MovieID::Rating::Timestamp); they skip
with an explicit message otherwise.
"""

import io
import itertools
import json
import math
import os
import time

import numpy as np
import pytest

from mosaic.data import (
    ColumnSchema,
    InteractionLog,
    PositiveRule,
    build_blocks,
    dataset_stats,
    parse_interactions,
    temporal_split,
)
from mosaic.evaluate import (
    RankedList,
    average_precision_at_k,
    build_ranked_lists,
    evaluate_model,
    ndcg_at_k,
)
from mosaic.memory import gph_estimate, periodogram, simulate_arfima, stationarity_test
from mosaic.model import Block, LatentModel, block_gradient, block_loss, init_model
from mosaic.pipeline import compose_scoring_model, filter_users, run_mosaic
from mosaic.trainer import TrainConfig, train_bpr, train_snape
from mosaic.cli import main as cli_main

ML1M_PATH = os.environ.get("MOSAIC_ML1M_PATH")
needs_ml1m = pytest.mark.skipif(
    not (ML1M_PATH and os.path.exists(ML1M_PATH)),
    reason="MovieLens-1M not available; set MOSAIC_ML1M_PATH to ratings.dat",
)


def load_ml1m():
    schema = ColumnSchema(delimiter="::")
    rule = PositiveRule.parse("rating>=4")
    with open(ML1M_PATH) as fh:
        return parse_interactions(fh, schema, rule)


@needs_ml1m
def test_criterion_1_dataset_reproduction():
    t0 = time.time()
    log = load_ml1m()
    stats = dataset_stats(log)
    assert stats.n_users == 6040
    assert stats.n_items == 3706
    assert abs(stats.sparsity - 0.9553) <= 1e-4
    assert abs(stats.avg_positives - 95.27) <= 0.05
    assert abs(stats.avg_negatives - 70.46) <= 0.05
    split = temporal_split(log, 0.8)
    assert len(split.train) == 797_758
    assert len(split.test) == 202_451
    train_pos = split.train.labels.mean() * 100
    test_pos = split.test.labels.mean() * 100
    assert abs(train_pos - 58.82) <= 0.05
    assert abs(test_pos - 52.39) <= 0.05
    assert time.time() - t0 <= 60


def test_criterion_2_periodogram_vs_direct_dft_oracle():
    def direct(x, k):
        n = len(x)
        xc = x - x.mean()
        lam = 2.0 * math.pi * k / n
        t = np.arange(1, n + 1)
        s = np.sum(xc * np.exp(1j * lam * t))
        return abs(s) ** 2 / n

    rng = np.random.default_rng(2024)
    count = 0
    for n in (16, 64, 257):
        for _ in range(34 if n == 257 else 33):
            x = rng.normal(size=n)
            ks = range(1, (n - 1) // 2 + 1)
            vals = periodogram(x, ks)
            for k in ks:
                assert abs(vals[k] - direct(x, k)) <= 1e-9
            count += 1
    assert count == 100


def test_criterion_3_estimator_calibration():
    t0 = time.time()
    m = 64
    for d in (0.0, 0.1, 0.2, 0.3, 0.4):
        est = np.array(
            [
                gph_estimate(simulate_arfima(4096, d, seed=int(1000 * d) + r), m).d_hat
                for r in range(100)
            ]
        )
        assert abs(est.mean() - d) <= 0.05, f"bias at d={d}: {est.mean():.4f}"
        assert est.std() <= 2.5 * math.pi / math.sqrt(24 * m), f"spread at d={d}"
    assert time.time() - t0 <= 120


def test_criterion_4_stationarity_test_power():
    rng = np.random.default_rng(4)
    iid_hits = sum(stationarity_test(rng.normal(size=512)) for _ in range(100))
    walk_hits = sum(
        not stationarity_test(np.cumsum(rng.normal(size=512))) for _ in range(100)
    )
    assert iid_hits >= 90
    assert walk_hits >= 90


def test_criterion_5_gradient_vs_finite_differences():
    def loss_at(U, V, block, lam):
        return block_loss(LatentModel(U=U, V=V, reg_lambda=lam), block)

    rng = np.random.default_rng(5)
    for _ in range(200):
        k = int(rng.integers(1, 9))
        n_items = int(rng.integers(2, 12))
        P = min(int(rng.integers(1, 6)), n_items - 1)
        N = int(rng.integers(1, 6))
        lam = float(rng.uniform(0, 0.2))
        U = rng.normal(size=(1, k))
        V = rng.normal(size=(n_items, k))
        pos = tuple(int(i) for i in rng.choice(n_items, size=P, replace=False))
        remaining = [i for i in range(n_items) if i not in pos]
        N = min(N, len(remaining))
        if N == 0:
            continue
        neg = tuple(int(i) for i in rng.choice(remaining, size=N, replace=False))
        block = Block(user=0, negatives=neg, positives=pos, index_t=1)
        model = LatentModel(U=U.copy(), V=V.copy(), reg_lambda=lam)
        g_user, ids, g_items = block_gradient(model, block)

        eps = 1e-6
        for c in range(k):
            Up, Um = U.copy(), U.copy()
            Up[0, c] += eps
            Um[0, c] -= eps
            fd = (loss_at(Up, V, block, lam) - loss_at(Um, V, block, lam)) / (2 * eps)
            assert g_user[c] == pytest.approx(fd, rel=1e-5, abs=1e-7)
        for j, item in enumerate(ids):
            for c in range(k):
                Vp, Vm = V.copy(), V.copy()
                Vp[item, c] += eps
                Vm[item, c] -= eps
                fd = (loss_at(U, Vp, block, lam) - loss_at(U, Vm, block, lam)) / (2 * eps)
                assert g_items[j, c] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_criterion_6_metric_oracles_exhaustive():
    def ap_oracle(items, relevant, k):
        if not relevant:
            return 0.0
        total, hits = 0.0, 0
        for rank, item in enumerate(items[:k], start=1):
            if item in relevant:
                hits += 1
                total += hits / rank
        return total / min(k, len(relevant))

    def ndcg_oracle(items, relevant, k):
        if not relevant:
            return 0.0
        dcg = sum(
            1.0 / math.log2(r + 1)
            for r, item in enumerate(items[:k], start=1)
            if item in relevant
        )
        idcg = sum(1.0 / math.log2(r + 1) for r in range(1, min(k, len(relevant)) + 1))
        return dcg / idcg

    for n in range(1, 7):
        items = list(range(n))
        for perm in itertools.permutations(items):
            for bits in range(2**n):
                relevant = {i for i in items if (bits >> i) & 1}
                r = RankedList(user=0, items=list(perm), relevant=relevant)
                for k in (1, 2, 5):
                    assert abs(average_precision_at_k(r, k) - ap_oracle(list(perm), relevant, k)) <= 1e-12
                    assert abs(ndcg_at_k(r, k) - ndcg_oracle(list(perm), relevant, k)) <= 1e-12


def blocks_oracle(labels):
    out, i, n = [], 0, len(labels)
    while i < n:
        if labels[i]:
            i += 1
            continue
        j = i
        while j < n and not labels[j]:
            j += 1
        if j == n:
            break
        k = j
        while k < n and labels[k]:
            k += 1
        out.append((list(range(i, j)), list(range(j, k))))
        i = k
    return out


def test_criterion_7_block_construction_oracle():
    def check(labels):
        items = np.arange(len(labels), dtype=np.uint32)
        got = build_blocks(0, items, np.asarray(labels, dtype=bool))
        want = blocks_oracle(labels)
        assert len(got) == len(want)
        for b, (negs, poss) in zip(got, want):
            assert list(b.negatives) == negs
            assert list(b.positives) == poss

    for length in range(1, 13):
        for bits in range(2**length):
            check([(bits >> p) & 1 == 1 for p in range(length)])
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        length = int(rng.integers(13, 200))
        check(rng.integers(2, size=length).astype(bool).tolist())


# --- criterion 8: two-stage filter on a known-ground-truth cohort ----------

COHORT = dict(
    n_good=100, n_bad=100, T=4096, bad_mult=2, n_items=1000, k=4, d_drift=0.45, J=5, regime=16
)
COHORT_LR = 1.0


def make_cohort(seed, n_good, n_bad, T, bad_mult, n_items, k, d_drift, J, regime):
    """100 users whose clicks follow a slowly drifting long-memory preference
    and 100 erratic users whose taste re-randomizes every `regime` blocks (so
    their labels are noise with respect to any persistent preference), in
    identical block structure: J-1 shown-but-unclicked items followed by one
    clicked item. Erratic users are bad_mult times as active, so their clicks
    measurably corrupt the stage-1 item factors; their regimes flip well above
    the log-periodogram band, keeping their trajectories short-memory."""
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n_items, k))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    n_users = n_good + n_bad
    users, items, labels, stamps = [], [], [], []
    lab = np.zeros(J, dtype=bool)
    lab[-1] = True
    for u in range(n_users):
        Tu = T if u < n_good else T * bad_mult
        cand = rng.integers(0, n_items, size=(Tu, J))
        if u < n_good:
            p = np.column_stack(
                [simulate_arfima(Tu, d_drift, seed=int(rng.integers(2**31))) for _ in range(k)]
            )
        else:
            n_reg = -(-Tu // regime)
            p = np.repeat(rng.normal(size=(n_reg, k)), regime, axis=0)[:Tu]
        pos_idx = np.einsum("tc,tjc->tj", p, q[cand]).argmax(axis=1)
        rows = np.arange(Tu)
        mask = np.ones((Tu, J), dtype=bool)
        mask[rows, pos_idx] = False
        negs = cand[mask].reshape(Tu, J - 1)
        stream = np.column_stack([negs, cand[rows, pos_idx]]).ravel()
        users.append(np.full(J * Tu, u, dtype=np.uint32))
        items.append(stream.astype(np.uint32))
        labels.append(np.tile(lab, Tu))
        stamps.append(np.arange(J * Tu, dtype=np.int64))
    return InteractionLog(
        np.concatenate(users),
        np.concatenate(items),
        np.concatenate(stamps),
        np.concatenate(labels),
        {u: u for u in range(n_users)},
        {i: i for i in range(n_items)},
    )


def test_criterion_8_pipeline_filter_and_map():
    t0 = time.time()
    n_good = COHORT["n_good"]
    passes = 0
    details = []
    for seed in range(10):
        log = make_cohort(seed, **COHORT)
        split = temporal_split(log, 0.8)
        cfg = TrainConfig(dim_k=COHORT["k"], learning_rate=COHORT_LR, epochs=1, seed=seed)
        stage1, stage2, _, reports, _ = run_mosaic(split.train, cfg)
        survivors = filter_users(reports)
        tp = sum(1 for u in survivors if u < n_good)
        fp = len(survivors) - tp
        precision = tp / max(1, tp + fp)
        recall = tp / n_good
        scoring = compose_scoring_model(stage1, stage2, survivors, split.train)
        map1 = evaluate_model(stage1, split.test, (5,))[("map", 5)]
        map2 = evaluate_model(scoring, split.test, (5,))[("map", 5)]
        ok = precision >= 0.8 and recall >= 0.8 and map2 >= map1
        passes += ok
        details.append(
            f"seed={seed} precision={precision:.2f} recall={recall:.2f} "
            f"map1={map1:.4f} map2={map2:.4f} {'pass' if ok else 'FAIL'}"
        )
    elapsed = time.time() - t0
    assert passes >= 8, "\n".join(details)
    assert elapsed <= 300, f"cohort suite took {elapsed:.0f}s"


@needs_ml1m
def test_criterion_9_snape_vs_bpr_on_ml1m_subpopulation():
    t0 = time.time()
    log = load_ml1m()
    rng = np.random.default_rng(9)
    chosen = set(rng.choice(log.n_users, size=1000, replace=False).tolist())
    from mosaic.data import restrict_to_users

    sub = restrict_to_users(log, chosen)
    split = temporal_split(sub, 0.8)
    cfg = TrainConfig(dim_k=16, learning_rate=0.05, epochs=1, seed=0)
    snape, _ = train_snape(split.train, cfg)
    bpr = train_bpr(split.train, cfg, 1_000_000)
    map_snape = evaluate_model(snape, split.test, (10,))[("map", 10)]
    map_bpr = evaluate_model(bpr, split.test, (10,))[("map", 10)]
    assert map_snape >= map_bpr - 0.01, f"snape {map_snape:.4f} vs bpr {map_bpr:.4f}"
    assert time.time() - t0 <= 600


def test_criterion_10_subcommand_reruns_byte_identical(tmp_path):
    rng = np.random.default_rng(10)
    raw = tmp_path / "raw.tsv"
    raw.write_text(
        "".join(
            f"u{rng.integers(6)}\ti{rng.integers(15)}\t{rng.integers(2)}\t{t}\n"
            for t in range(600)
        )
    )

    def run_all(tag):
        out = tmp_path / tag
        assert cli_main(["ingest", "--input", str(raw), "--out", str(out / "ing")]) == 0
        data = out / "ing" / "interactions.bin"
        assert cli_main(["train", "--data", str(data), "--algo", "snape", "--out", str(out / "tr")]) == 0
        assert cli_main(["analyze", "--trajectories", str(out / "tr" / "trajectories.jsonl"),
                         "--out", str(out / "an")]) == 0
        assert cli_main(["evaluate", "--data", str(data),
                         "--checkpoint", f"snape={out / 'tr' / 'snape.ckpt'}",
                         "--out", str(out / "ev")]) == 0
        assert cli_main(["simulate", "--n", "256", "--d", "0.3", "--seed", "1",
                         "--out", str(out / "sim.csv")]) == 0
        return out

    a, b = run_all("a"), run_all("b")
    compared = 0
    for path_a in sorted(a.rglob("*")):
        if path_a.is_dir() or path_a.name == "timings.json":
            continue
        path_b = b / path_a.relative_to(a)
        assert path_a.read_bytes() == path_b.read_bytes(), path_a.name
        compared += 1
    assert compared >= 8
