"""Smoke test for the dashsim extension module.

Build and install it first, e.g. `maturin develop -m crates/python/Cargo.toml`,
then run `python python/smoke_test.py`.
"""

import math

import dashsim


def main():
    names = dashsim.scenarios()
    assert "markov" in names and len(names) == 7, names

    cfg = dashsim.RunConfig.scenario("markov", episodes=2)
    cfg.seed = 3
    cfg.controller = "imms:100"
    assert cfg.controller == "imms:100"
    assert dashsim.RunConfig.from_toml(cfg.to_toml()).to_toml() == cfg.to_toml()

    log = dashsim.run(cfg)
    assert len(log) == 800
    summary = log.summary()
    rewards = log.rewards()
    assert math.isclose(summary["lt_qoe"], sum(rewards) / len(rewards), rel_tol=1e-12)
    assert summary["total_rebuffer_s"] >= 0.0

    again = dashsim.SessionLog.from_csv(log.to_csv(), cfg.segment_duration)
    assert again.to_csv() == log.to_csv()

    sim = dashsim.Simulation(cfg)
    stepped = []
    while (rec := sim.step()) is not None:
        stepped.append(rec["reward"])
    assert stepped == rewards
    assert sim.done
    assert len(sim.q_table_csv().splitlines()) > 1

    for row in dashsim.markov_matrix(5, 0.5):
        assert math.isclose(sum(row), 1.0)
    eta, k_p, k_d = dashsim.pd_gains(2.0, 1.0)
    assert math.isclose(k_p, eta * math.sqrt(3.0))
    assert dashsim.reward(0.9, 0.9, 6.0, 0.0) <= 0.9
    assert dashsim.iams_select([[0.1, 0.2], [0.5, 0.6]], 2, 0) == 1
    assert dashsim.imms_select([[0.1, 0.2], [0.5, 0.6]], 2, 0) == 1
    assert 0.0 < dashsim.quality_of(1, 1) <= 1.0

    try:
        dashsim.RunConfig.scenario("nosuch")
    except ValueError as e:
        assert "markov" in str(e)
    else:
        raise AssertionError("unknown scenario accepted")

    print("smoke test ok:", {k: summary[k] for k in ("lt_qoe", "qoe_a", "qoe_b")})


if __name__ == "__main__":
    main()
