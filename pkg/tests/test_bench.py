import csv

import numpy as np
import pytest

from feat_video.backbone import ModelConfig
from feat_video.bench import AblationReport, BenchRow, ablate, bench, doubling_ratios, time_call, write_bench_csv
from feat_video.training import TrainConfig


def test_time_call_counts_reps():
    calls = []
    samples = time_call(lambda: calls.append(1), reps=30, warmup=2)
    assert len(samples) == 30 and len(calls) == 32 and (samples >= 0).all()


def test_bench_rows_and_rep_floor():
    rows = bench(sizes=(32, 64), D=4, reps=30)
    assert {(r.kernel, r.T) for r in rows} == {(k, T) for k in ("wkv_scan", "channel_attention", "softmax_attention") for T in (32, 64)}
    assert all(r.p10_ns <= r.median_ns <= r.p90_ns for r in rows)
    with pytest.raises(ValueError):
        bench(sizes=(32,), reps=10)


def test_doubling_ratios_skip_flagged_rows(tmp_path):
    rows = [
        BenchRow("k", 1, 4, 10, 9, 11, note="excluded: below timer resolution"),
        BenchRow("k", 2, 4, 100, 90, 110),
        BenchRow("k", 4, 4, 250, 240, 260),
        BenchRow("k", 8, 4, 500, 480, 520),
    ]
    assert doubling_ratios(rows) == {"k": [(2, 2.5), (4, 2.0)]}
    assert doubling_ratios(rows, min_T=4) == {"k": [(4, 2.0)]}
    write_bench_csv(rows, tmp_path / "b.csv")
    assert len(list(csv.reader(open(tmp_path / "b.csv")))) == 4


def test_ablation_report():
    r = AblationReport(
        {"baseline": {0: 1.0, 1: 0.9}, "wkv": {0: 0.8, 1: 0.9}, "wkv_channel": {0: 0.7, 1: 0.85}, "full": {0: 0.6, 1: 0.92}}
    )
    assert r.mean("full") == pytest.approx(0.76)
    assert r.ordering_holds()
    assert r.wins() == 1
    r.results["full"][1] = 2.0
    assert not r.ordering_holds()


def test_ablate_is_deterministic_and_full_equals_wkv_channel_at_init(tmp_path):
    cfg = TrainConfig(
        model=ModelConfig(d=16, n_triplets=1, patch=4, frames=2, height=16, width=16),
        steps=1,
        batch_size=2,
        n_train=4,
        n_val=2,
        val_draws=1,
        lr=1e-12,  # effectively untrained
        radius_min=2.0,
        radius_max=3.0,
    )
    a = ablate(cfg, seeds=(0, 1))
    b = ablate(cfg, seeds=(0, 1))
    assert a.rows() == b.rows()
    for s in (0, 1):
        assert a.results["full"][s] == pytest.approx(a.results["wkv_channel"][s], rel=1e-6)
    a.write_csv(tmp_path / "a.csv")
    assert len(list(csv.reader(open(tmp_path / "a.csv")))) == 1 + 4 * 2
