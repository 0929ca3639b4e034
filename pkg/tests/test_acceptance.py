"""Acceptance suite: one test per criterion, run at the stated tolerances.

A summary line per criterion is printed at the end of the session.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from adeptheq import ckks, dp, federation, gradcheck, metrics, quantum, server
from adeptheq.config import parse_config

from oracles import explicit_unitary, mean_client_entropy, plaintext_weighted_sum, reference_dirichlet_partition

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).parent.parent / "configs"
ROOT = Path(__file__).parent.parent


def test_criterion_1_end_to_end_gradient_check():
    start = time.perf_counter()
    res = gradcheck.check_gradients(gradcheck.REDUCED_MODEL, n_coords=60, seed=0)
    elapsed = time.perf_counter() - start
    print(f"grad-check: {res.n_coords} coords, max rel error {res.max_rel_error:.3e}, {elapsed:.1f}s")
    assert res.n_coords >= 50
    assert set(res.per_tag) == {"classical", "quantum", "final_classifier"}
    assert res.max_rel_error <= 1e-3
    assert elapsed < 120


def test_criterion_2_quantum_oracle_equivalence():
    rng = np.random.default_rng(2024)
    n = 4
    sched = quantum.ring_schedule(n, 2)
    worst = 0.0
    for _ in range(100):
        th = rng.uniform(0, 2 * np.pi, (2, n, 3))
        x = rng.normal(size=16)
        x /= np.linalg.norm(x)
        U = explicit_unitary(th, sched, n)
        assert U.shape == (16, 16)
        got = quantum.strongly_entangling_layers(quantum.amplitude_embed(x), th, sched)
        worst = max(worst, float(np.abs(got - U @ x).max()))
    assert worst <= 1e-10

    h = 1e-5
    for _ in range(5):
        th = rng.uniform(0, 2 * np.pi, (2, n, 3))
        x = rng.normal(size=16)
        x /= np.linalg.norm(x)
        ps = quantum.parameter_shift_grad(x, th, sched)
        for idx in np.ndindex(th.shape):
            e = np.zeros_like(th)
            e[idx] = h
            fd = (quantum.circuit_expectations(x, th + e, sched)
                  - quantum.circuit_expectations(x, th - e, sched)) / (2 * h)
            np.testing.assert_allclose(ps[idx], fd, atol=1e-6)


def _he_aggregation_error(params, seed):
    rng = np.random.default_rng(seed)
    keys = ckks.keygen(params, rng)
    updates = rng.uniform(-1, 1, size=(10, 10 * 4 + 10))  # FC4 of a 4-qubit, 10-class model
    w = server.compute_weights(rng.uniform(0, 1, 10), 0.5).weights
    cts = [ckks.encrypt_vector(u, keys.public, rng) for u in updates]
    out = ckks.decrypt_vector(ckks.secure_weighted_sum(cts, w), keys.secret, updates.shape[1])
    return float(np.abs(out - plaintext_weighted_sum(updates, w)).max())


def test_criterion_3_he_plaintext_aggregation_equivalence():
    start = time.perf_counter()
    desk = _he_aggregation_error(ckks.HeParams.desk(), 3)
    elapsed = time.perf_counter() - start
    large = _he_aggregation_error(ckks.HeParams.large(), 3)
    print(f"HE aggregation error: N=4096 {desk:.2e} ({elapsed:.2f}s), N=8192 {large:.2e}")
    assert desk <= 1e-3
    assert elapsed < 300
    assert large <= 1e-4


def test_criterion_4_dp_statistics():
    m, eps = 50, 1.0
    x = dp.laplace_sample(1 / (m * eps), dp.stream_rng(4, dp.STREAM_DP), size=100_000)
    target = math.sqrt(2) / (m * eps)
    assert abs(x.std() / target - 1) <= 0.05
    total = dp.compose_privacy(dp.PrivacySpec(1.0, 1e-5, 20))
    assert abs(total - 55.826) <= 1e-3
    readme = (ROOT / "README.md").read_text()
    assert "55.83" in readme and "(10, 1e-5)" in readme


def test_criterion_5_weight_formula():
    w = server.compute_weights([0.9, 0.5], 0.5).weights
    np.testing.assert_allclose(w, [0.6900, 0.3100], atol=1e-4)
    u = server.compute_weights([0.37] * 7, 0.5).weights
    assert np.all(u == u[0]) and u[0] == pytest.approx(1 / 7, abs=1e-15)
    rng = np.random.default_rng(5)
    for _ in range(1000):
        k = int(rng.integers(1, 20))
        a = rng.uniform(0, 1, k)
        tau = float(rng.uniform(0.05, 5))
        w = server.compute_weights(a, tau).weights
        assert np.all(w >= 0) and abs(w.sum() - 1) <= 1e-12
        order = np.argsort(a)
        assert np.all(np.diff(w[order]) >= -1e-15)


@pytest.mark.slow
def test_criterion_6_freezing_behavior():
    cfg = parse_config(CONFIGS / "freeze.cfg")
    snapshots = []
    series = federation.run_federation(cfg, on_round=lambda s, m: snapshots.append(s.global_params.copy()))
    sizes = snapshots[0].sizes()
    frozen_by_round = [set(m.frozen_layers) for m in series]
    newly = [(r, name) for r in range(1, len(series)) for name in frozen_by_round[r] - frozen_by_round[r - 1]]
    assert newly, f"no layer froze; EMA scores {series[-1].ema_scores}"
    for r, name in newly:
        assert name != "pqc"
        assert series[r - 1].ema_scores[name] < 1e-3
        frozen_at = snapshots[r - 1][name].flat().tobytes()
        for later in snapshots[r:]:
            assert later[name].flat().tobytes() == frozen_at
        newly_here = {n for rr, n in newly if rr == r}
        drop = series[r - 1].params_per_client - series[r].params_per_client
        assert drop == sum(sizes[n] for n in newly_here)
    for a, b in zip(snapshots, snapshots[1:]):
        assert not np.array_equal(a["pqc"].flat(), b["pqc"].flat())
    print("frozen:", [(r + 1, n) for r, n in newly],
          "params/client:", [m.params_per_client for m in series])


@pytest.fixture(scope="module")
def toy_series():
    cfg = parse_config(CONFIGS / "toy.cfg")
    start = time.perf_counter()
    series = federation.run_federation(cfg)
    return cfg, series, time.perf_counter() - start


@pytest.mark.slow
def test_criterion_7_toy_federation_run(toy_series):
    cfg, series, elapsed = toy_series
    assert (cfg.n_clients, cfg.rounds, cfg.local_epochs, cfg.dirichlet_alpha) == (4, 5, 5, 0.1)
    assert (cfg.n_train, cfg.n_test, cfg.n_classes, cfg.image_size) == (800, 200, 2, 8)
    print("test acc:", [m.test_accuracy for m in series], "loss:", [round(m.test_loss, 4) for m in series],
          f"{elapsed:.1f}s")
    assert series[-1].test_accuracy >= 0.80
    assert series[4].test_loss < series[0].test_loss
    assert elapsed < 600


def test_criterion_8_non_iid_sanity():
    y = np.arange(5000) % 10
    iid = math.log(10)
    for s in range(5):
        ours = federation.dirichlet_partition(y, 10, 0.1, np.random.default_rng(s))
        ref = reference_dirichlet_partition(y, 10, 0.1, s)
        assert mean_client_entropy(ours, y, 10) <= 0.7 * iid
        assert mean_client_entropy(ref, y, 10) <= 0.7 * iid
        ours = federation.dirichlet_partition(y, 10, 1e6, np.random.default_rng(s))
        ref = reference_dirichlet_partition(y, 10, 1e6, s)
        assert abs(mean_client_entropy(ours, y, 10) / iid - 1) <= 0.05
        assert abs(mean_client_entropy(ref, y, 10) / iid - 1) <= 0.05


@pytest.mark.slow
def test_criterion_9_reproducibility(toy_series):
    cfg, first, _ = toy_series
    second = federation.run_federation(cfg)
    a = metrics.strip_timing(metrics.metrics_table(first))
    b = metrics.strip_timing(metrics.metrics_table(second))
    assert a.encode() == b.encode()
    assert metrics.metrics_table(first) != metrics.strip_timing(metrics.metrics_table(first))
