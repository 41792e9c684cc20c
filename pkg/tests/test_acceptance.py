"""One test per acceptance criterion; a summary line per criterion is printed at the end of the run."""

from collections import defaultdict
from pathlib import Path

import numpy as np
import pytest

from heatlab import phy
from heatlab.agent import HeatAgent
from heatlab.cli import main
from heatlab.config import ALGORITHMS, parse_config
from heatlab.env import NodeState, encode_states, reward
from heatlab.nn import Encoder, EncoderConfig, ParamStore, gather, no_grad, tensor
from heatlab.sweep import run_sweep, thread_cap
from oracles import (
    BANDIT_REWARDS, DATA_RATES, drive_gateway, expectile_oracle, finite_difference, grad_check,
    offline_values_after, oracle_verdicts, random_scenario, rel_error, scripted_gateway_cases,
)
from test_nn import OPS

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def criterion(number, title):
    return pytest.mark.criterion(number, title)


@criterion(1, "bit rates reproduce the SF table within 1 bit/s")
def test_c1_bit_rates():
    errors = {sf: abs(phy.bit_rate(sf) - DATA_RATES[sf]) for sf in phy.SF_RANGE}
    print("bit-rate errors", errors)
    assert max(errors.values()) <= 1.0, errors


@criterion(2, "noise floor -117.031 dBm")
def test_c2_noise_floor():
    nf = phy.noise_floor(125e3, 6.0, -174.0)
    assert abs(nf - (-117.031)) <= 1e-3, nf


@criterion(3, "scripted gateway verdicts match the constraint-order oracle")
def test_c3_gateway_suite():
    names = []
    for name, sigs, cap, dls, expected in scripted_gateway_cases():
        assert oracle_verdicts(sigs, cap, dls) == expected, name
        assert drive_gateway(sigs, cap, dls) == expected, name
        names.append(name)
    assert sum(n.startswith("sensitivity-fail") for n in names) == 6


@criterion(4, "200/200 random small scenarios agree with the brute-force oracle")
def test_c4_small_instance_equivalence():
    rng = np.random.default_rng(2024)
    agree = 0
    for _ in range(200):
        sigs, cap, dls = random_scenario(rng)
        agree += drive_gateway(sigs, cap, dls) == oracle_verdicts(sigs, cap, dls)
    assert agree == 200, f"{agree}/200"


def _full_model_worst():
    agent = HeatAgent(model_dim=8, ff_dim=12, pretrain_steps=0, random_state=11).fit(None)
    r = np.random.default_rng(11)
    sp = agent.space_
    states = [NodeState(float(r.uniform(10, 2000)), int(r.choice(sp.sf_set)), float(r.choice(sp.power_set)),
                        int(r.choice(sp.sf_set)), int(r.choice(sp.window_set))) for _ in range(5)]
    S = encode_states(states, sp, agent.radius_m)
    A = sp.all_indices()[r.integers(sp.n_joint, size=5)]
    probe = r.normal(size=5)

    G = agent.encoder_(S)
    q = agent.q_on_[0](S, G, A)
    heads = agent.actor_.log_probs(S, G)
    total = (q * tensor(probe)).sum()
    for k, h in enumerate(heads):
        total = total + gather(h, A[:, k:k + 1], axis=1).sum()
    agent.store_.zero_grad()
    total.backward()

    def f():
        with no_grad():
            G = agent.encoder_(S)
            v = float(np.sum(agent.q_on_[0](S, G, A).data * probe))
            for k, h in enumerate(agent.actor_.log_probs(S, G)):
                v += float(h.data[np.arange(5), A[:, k]].sum())
            return v

    worst = 0.0
    names = [n for n in agent.store_.names() if n.startswith(("enc.", "actor.", "q_on1."))]
    for n in names[:: max(1, len(names) // 12)]:
        p = agent.store_[n]
        if p.data.size > 400:
            continue
        worst = max(worst, rel_error(p.grad, finite_difference(f, p.data)))
    return worst


@criterion(5, "finite-difference gradients, full-model spot checks, encoder equivariance")
def test_c5_numerical_core():
    op_errors = {name: grad_check(fn, inputs) for name, (fn, inputs) in OPS.items()}
    worst_op = max(op_errors, key=op_errors.get)
    assert op_errors[worst_op] <= 1e-4, (worst_op, op_errors[worst_op])
    full = _full_model_worst()
    assert full <= 1e-3, full
    store = ParamStore(0)
    enc = Encoder(store, "enc", 5, EncoderConfig(layers=2, model_dim=8, heads=2, ff_dim=12))
    x = np.random.default_rng(1).normal(size=(9, 5))
    perm = np.random.default_rng(2).permutation(9)
    with no_grad():
        dev = np.max(np.abs(enc(x[perm]).data - enc(x).data[perm]))
    assert dev <= 1e-5, dev
    print(f"worst op {worst_op} {op_errors[worst_op]:.2e}, full model {full:.2e}, equivariance {dev:.2e}")


@criterion(6, "offline V converges to the rho-expectile for rho in {0.6, 0.7, 0.9}")
def test_c6_expectile_fixed_point():
    for rho in (0.6, 0.7, 0.9):
        V, _ = offline_values_after(rho)
        for si, rewards in enumerate(BANDIT_REWARDS):
            target = expectile_oracle(rewards, rho)
            err = float(np.max(np.abs(V[:, si] - target)))
            print(f"rho={rho} state={si} target={target:.4f} V={V[:, si]} err={err:.2e}")
            assert err <= 1e-2, (rho, si, err)


@criterion(7, "reward examples and monotonicity")
def test_c7_reward():
    assert reward(0, 1, 0.0) == 0.0
    assert reward(1, 1, 0.0, 0.5) == 2.0
    assert round(reward(1, 1, 1.0), 3) == 39.863
    grid = np.linspace(0.0, 0.999, 100)
    for h in (0.0, 0.5):
        r = [reward(p, 1.0, h) for p in grid]
        assert all(a < b for a, b in zip(r, r[1:]))
        r = [reward(h, 1.0, p) for p in grid]
        assert all(a < b for a, b in zip(r, r[1:]))


@criterion(8, "two sweep executions give byte-identical CSVs")
def test_c8_determinism(tmp_path):
    cfg = tmp_path / "det.ini"
    cfg.write_text(
        "[experiment]\nnodes = 6, 12\ndelta = 2\nduration_s = 600\nseeds = 0-1\n"
        "algorithms = heat, heat-online, adrx, random\noffline_minutes = 5\ntrain_every = 8\n"
        "[heat]\npretrain_steps = 10\n"
    )
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["sweep", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["sweep", "--config", str(cfg), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(a.read_text().splitlines()) == 1 + 4 * 2 * 2


def _means(rows, key):
    acc = defaultdict(list)
    for r in rows:
        assert r["status"] == "ok", r
        acc[(r["algo"], r["N"], r["delta"])].append(r[key])
    return {k: float(np.mean(v)) for k, v in acc.items()}


@pytest.mark.slow
@criterion(9, "learning trend at N=32, delta=2, 120 min, 4 seeds")
def test_c9_learning_trend(tmp_path):
    cfg = parse_config(CONFIGS / "learning_trend.ini")
    rows = run_sweep(cfg, tmp_path / "trend.csv", threads=thread_cap())
    pdr, eer = _means(rows, "pdr"), _means(rows, "eer")
    get = lambda m, algo: m[(algo, 32, 2.0)]
    summary = {a: (round(get(pdr, a), 4), round(get(eer, a), 1)) for a in ALGORITHMS}
    print("mean (PDR, EER) per algorithm:", summary)
    checks = {
        "PDR(heat) >= PDR(random) + 0.05": get(pdr, "heat") >= get(pdr, "random") + 0.05,
        "EER(heat) >= 1.2 EER(adrx)": get(eer, "heat") >= 1.2 * get(eer, "adrx"),
        "PDR(heat) >= PDR(heat-online)": get(pdr, "heat") >= get(pdr, "heat-online"),
    }
    failed = [k for k, ok in checks.items() if not ok]
    assert not failed, f"failed clauses: {failed}; means {summary}"


def _non_increasing(series):
    return all(b <= a for a, b in zip(series, series[1:]))


@pytest.mark.slow
@criterion(10, "PDR non-increasing in N and in delta for every algorithm")
def test_c10_qualitative_trends(tmp_path):
    bad = []
    for name, axis in (("fig4_small.ini", 1), ("fig5_small.ini", 2)):
        cfg = parse_config(CONFIGS / name)
        rows = run_sweep(cfg, tmp_path / name.replace(".ini", ".csv"), algorithms=ALGORITHMS, threads=thread_cap())
        pdr = _means(rows, "pdr")
        for algo in ALGORITHMS:
            keys = sorted((k for k in pdr if k[0] == algo), key=lambda k: k[axis])
            series = [round(pdr[k], 4) for k in keys]
            print(name, algo, series)
            if not _non_increasing(series):
                bad.append((name, algo, series))
    assert not bad, bad
