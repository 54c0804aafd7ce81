import math

import pytest

import priorfuse as pf


def test_fusion_examples():
    assert pf.empirical_bias(-1.0, 0.8, 4) == pytest.approx(2.99)
    f = pf.fuse(-1.0, 4, 0.8)
    assert f.w_hat == pytest.approx(2.99 / 3.24)
    assert f.mu_star == pytest.approx(-0.861, abs=1e-3)
    accepted = pf.fuse(0.5, 4, 0.8)
    assert accepted.w_hat == 0.0
    assert accepted.mu_star == pytest.approx(0.8)
    adv = pf.advantages([1, 1, 1, -1], accepted)
    assert adv[3] == pytest.approx(-3.0)
    assert pf.fused_std(1.0) == pytest.approx(1e-6)


def test_weights_and_mse():
    assert pf.optimal_weight(0.25, 0.09) == pytest.approx(0.09 / 0.34)
    assert pf.theoretical_mse(0.5, 0.25, 0.09) == pytest.approx(0.085)
    with pytest.raises(ValueError):
        pf.optimal_weight(0.0, 0.0)
    with pytest.raises(ValueError):
        pf.empirical_mean([])


def test_allocator():
    assert pf.target_budget(0.0, 0.0039) == -math.inf
    assert pf.target_budget(0.25, 0.0039) == pytest.approx(12.0128, abs=1e-4)
    assert pf.marginal_return_lower_bound(4, 1.0) == pytest.approx(1 / 36)
    d = pf.decide(4, 0, 0.8)
    assert d.action == pf.Action.RolloutMore
    assert d.n == 2
    assert pf.decide(4, 3, 0.8).action == pf.Action.Stop
    cfg = pf.AllocatorConfig()
    cfg.k_min = 2
    with pytest.raises(ValueError, match="k_min"):
        cfg.validate()


def test_batch_with_exact_prior_stops_at_cold_start():
    p = [i / 31 for i in range(32)]
    out = pf.simulate_batch(p, prior="exact", seed=3)
    assert len(out) == 32
    assert all(4 <= o["k"] <= 16 for o in out)
    accepted = [o for o in out if o["w_hat"] == 0.0]
    assert accepted
    assert all(o["mu_star"] == pytest.approx(o["prior_value"]) for o in accepted)


def test_batch_is_deterministic():
    p = [0.1, 0.5, 0.9] * 8
    a = pf.simulate_batch(p, prior="hallucinated", prior_param=0.8, seed=5)
    b = pf.simulate_batch(p, prior="hallucinated", prior_param=0.8, seed=5)
    assert a == b


def test_enumeration_and_oracle():
    m = pf.enumerate_estimator_moments(0.9, 0.0, 16)
    assert abs(m.bias) <= 0.25
    assert pf.false_rejection_exact(1.0, 4) == 0.0
    assert pf.oracle_stop(0.0, 0.0039).k_oracle == 4


def test_run_config(tmp_path):
    text = "mode: allocate\nseed: 2\nallocate:\n  scenarios:\n    - {p_true: 0.7, count: 32}\n"
    res = pf.run_config(text, str(tmp_path / "out"))
    assert res["exit_code"] == 0
    assert "summary.txt" in res["files"]
    assert (tmp_path / "out" / "reports.json").exists()
    with pytest.raises(pf.ConfigError, match="seed"):
        pf.run_config("mode: allocate\n", str(tmp_path / "bad"))
