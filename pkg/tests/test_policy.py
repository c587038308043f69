"""Behavioral checks for the attention policy.

Symmetry properties (market permutation equivariance, product
permutation invariance), probability-mass accounting against the
environment masks, log-probability replay audits, and an end-to-end
gradient smoke test. Small embedding dims keep the suite fast; one
test pins the default-config shapes.
"""

import numpy as np
import pytest

import tppsolve.autodiff as ad
import tppsolve.policy as pol
from tppsolve.env import action_mask, reset, step, terminal_reward
from tppsolve.generate import GeneratorSpec, generate, generate_indexed
from tppsolve.model import TppInstance, Variant, check_solution

SMALL = pol.PolicyConfig(embedding_dim=16, num_encoder_layers=1, num_heads=2)


@pytest.fixture
def inst():
    return generate(GeneratorSpec(Variant.RESTRICTED, markets=5, products=4, lam=0.95, seed=3))


@pytest.fixture
def params():
    return pol.init_policy_params(SMALL, np.random.default_rng(0))


def _permute_markets(inst: TppInstance, perm: dict[int, int]) -> TppInstance:
    markets = [None] * len(inst.markets)
    for old, new in perm.items():
        markets[new - 1] = inst.markets[old - 1]
    offers = {(perm[i], k): off for (i, k), off in inst.offers.items()}
    return TppInstance(
        depot=inst.depot, markets=tuple(markets), demands=inst.demands,
        offers=offers, variant=inst.variant, lam=inst.lam,
    )


def _permute_products(inst: TppInstance, perm: dict[int, int]) -> TppInstance:
    demands = [0] * len(inst.demands)
    for old, new in perm.items():
        demands[new] = inst.demands[old]
    offers = {(i, perm[k]): off for (i, k), off in inst.offers.items()}
    return TppInstance(
        depot=inst.depot, markets=inst.markets, demands=tuple(demands),
        offers=offers, variant=inst.variant, lam=inst.lam,
    )


# ---------------------------------------------------------------------------
# config and parameters
# ---------------------------------------------------------------------------


def test_config_defaults_and_roundtrip():
    c = pol.PolicyConfig()
    assert c.embedding_dim == 128
    assert c.num_encoder_layers == 3
    assert c.num_heads == 8
    assert c.resolved_key_dim == 16
    assert c.logit_clip == 10.0
    assert c.resolved_ff_hidden == 512
    assert not c.raw_demand_weights
    again = pol.PolicyConfig.from_dict(c.to_dict())
    assert again.resolved_key_dim == 16
    assert again.to_dict() == c.to_dict()


def test_config_rejects_indivisible_heads():
    with pytest.raises(ValueError):
        pol.PolicyConfig(embedding_dim=10, num_heads=4)


def test_init_params_shapes_and_determinism():
    a = pol.init_policy_params(SMALL, np.random.default_rng(5))
    b = pol.init_policy_params(SMALL, np.random.default_rng(5))
    assert a.names() == b.names()
    for n in a.names():
        assert np.array_equal(a.params[n].data, b.params[n].data)
    d = SMALL.embedding_dim
    assert a.params["embed.market.w"].shape == (2, d)
    assert a.params["dec.glimpse.wq"].shape == (3 * d, d)
    assert a.params["dec.out.wk"].shape == (d, SMALL.resolved_key_dim)
    assert a.params["dec.lstm.wx"].shape == (d, 4 * d)
    assert a.buffers[f"enc0.bn1.mean"].shape == (d,)
    assert a.n_parameters() > 0


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------


def test_build_bipartite_normalization(inst):
    g = pol.build_bipartite(inst)
    m1 = inst.num_markets + 1
    assert g.market_features.shape == (m1, 2)
    assert np.allclose(g.market_features[0], np.array(inst.depot) / 1000.0)
    assert g.product_features.max() == 1.0
    assert g.edges.shape[0] == len(inst.offers)
    assert (g.edges[:, 0] >= 1).all()  # depot has no edges
    p_max = inst.max_price()
    for (i, k), row in zip(map(tuple, g.edges), g.edge_features):
        off = inst.offers[(i, k)]
        assert row[0] == off.price / p_max
        assert row[1] == off.quantity / inst.demands[k]


def test_unit_demand_edges_have_unit_quantity_feature():
    u = generate(GeneratorSpec(Variant.UNRESTRICTED, markets=4, products=3, seed=9))
    g = pol.build_bipartite(u)
    assert np.allclose(g.edge_features[:, 1], 1.0)


def test_depot_centered_feature():
    inst = generate(GeneratorSpec(Variant.UNRESTRICTED, markets=3, products=2, seed=1))
    inst = TppInstance(
        depot=(500, 500), markets=inst.markets, demands=inst.demands,
        offers=inst.offers, variant=inst.variant,
    )
    g = pol.build_bipartite(inst)
    assert tuple(g.market_features[0]) == (0.5, 0.5)


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------


def test_encode_default_config_shapes(inst):
    config = pol.PolicyConfig()
    params = pol.init_policy_params(config, np.random.default_rng(2))
    enc = pol.encode([inst], params, config)
    m1 = inst.num_markets + 1
    assert enc.hN.shape == (1, m1, 128)
    assert enc.hM.shape == (1, 128)
    assert enc.g0.shape == (1, inst.num_products, 128)
    assert enc.pointer_k.shape == (1, m1, 16)


def test_identical_rows_stay_identical(params):
    # encoder treats rows symmetrically: equal inputs give equal outputs
    d = SMALL.embedding_dim
    h0 = ad.Tensor(np.tile(np.linspace(-1, 1, d), (1, 5, 1)))
    hn, hm = pol.encode_markets(h0, params, SMALL, bn_training=False)
    assert np.allclose(hn.data[0, 0], hn.data[0, 3], atol=1e-12)
    assert np.allclose(hm.data[0], hn.data[0, 0], atol=1e-12)


def test_market_permutation_equivariance(inst, params):
    rng = np.random.default_rng(11)
    order = rng.permutation(inst.num_markets) + 1
    perm = {old: int(new) for old, new in zip(range(1, inst.num_markets + 1), order)}
    permuted = _permute_markets(inst, perm)
    enc_a = pol.encode([inst], params, SMALL)
    enc_b = pol.encode([permuted], params, SMALL)
    for old, new in perm.items():
        assert np.allclose(enc_a.hN.data[0, old], enc_b.hN.data[0, new], atol=1e-8)
    assert np.allclose(enc_a.hN.data[0, 0], enc_b.hN.data[0, 0], atol=1e-8)
    assert np.allclose(enc_a.hM.data, enc_b.hM.data, atol=1e-8)
    # the greedy tour relabels through the same permutation
    sol_a, _ = pol.rollout(inst, params, SMALL)
    sol_b, _ = pol.rollout(permuted, params, SMALL)
    mapped = tuple(perm[v] if v else 0 for v in sol_a.route)
    assert mapped == sol_b.route
    assert sol_a.objective == sol_b.objective


def test_product_permutation_leaves_route(inst, params):
    perm = {0: 2, 1: 0, 2: 3, 3: 1}
    permuted = _permute_products(inst, perm)
    sol_a, logp_a = pol.rollout(inst, params, SMALL)
    sol_b, logp_b = pol.rollout(permuted, params, SMALL)
    assert sol_a.route == sol_b.route
    assert sol_a.objective == sol_b.objective
    assert abs(logp_a - logp_b) < 1e-8


def test_one_parameter_set_spans_sizes(params):
    small = generate(GeneratorSpec(Variant.UNRESTRICTED, markets=4, products=3, seed=0))
    large = generate(GeneratorSpec(Variant.UNRESTRICTED, markets=9, products=6, seed=0))
    for inst in (small, large):
        sol, _ = pol.rollout(inst, params, SMALL)
        assert check_solution(sol, inst) == []


# ---------------------------------------------------------------------------
# decoder distribution
# ---------------------------------------------------------------------------


def test_action_distribution_masks_and_sums(inst, params):
    enc = pol.encode([inst], params, SMALL)
    state = reset(inst)
    mask = action_mask(state)
    probs, _ = pol.decode_step(
        enc, params, np.array(state.remaining), mask, state.current,
        pol.init_lstm_state(1, SMALL),
    )
    assert abs(probs.sum() - 1.0) < 1e-9
    assert (probs[~mask] == 0.0).all()
    assert probs[0] == 0.0  # demands outstanding: depot masked


def test_single_allowed_action_gets_probability_one(inst, params):
    enc = pol.encode([inst], params, SMALL)
    mask = np.zeros(inst.num_markets + 1, dtype=bool)
    mask[3] = True
    probs, _ = pol.decode_step(
        enc, params, np.array(inst.demands), mask, 0, pol.init_lstm_state(1, SMALL)
    )
    assert probs[3] == 1.0
    assert probs.sum() == 1.0


def test_empty_mask_asserts(inst, params):
    enc = pol.encode([inst], params, SMALL)
    with pytest.raises(AssertionError):
        pol.decode_step(
            enc, params, np.array(inst.demands),
            np.zeros(inst.num_markets + 1, dtype=bool), 0,
            pol.init_lstm_state(1, SMALL),
        )


def test_logit_spread_bounded_by_clip(inst, params):
    # u = C*tanh(.) confines finite logits to [-C, C], so log-probability
    # gaps between unmasked actions can never exceed 2C
    enc = pol.encode([inst], params, SMALL)
    state = reset(inst)
    mask = action_mask(state)
    probs, _ = pol.decode_step(
        enc, params, np.array(state.remaining), mask, 0, pol.init_lstm_state(1, SMALL)
    )
    logs = np.log(probs[mask])
    assert logs.max() - logs.min() <= 2 * SMALL.logit_clip + 1e-9


def test_zero_remaining_demand_zeroes_context(inst, params):
    weights = pol._context_weights(
        np.zeros((1, inst.num_products)), np.array([inst.demands], dtype=np.float64), SMALL
    )
    assert (weights == 0).all()
    enc = pol.encode([inst], params, SMALL)
    gk = ad.matmul(ad.Tensor(weights[:, None, :]), enc.g0)
    assert np.array_equal(gk.data, np.zeros_like(gk.data))


def test_context_weight_modes(inst):
    remaining = np.array([[3.0, 0.0, 2.0, 1.0]])
    demands = np.array([[6.0, 2.0, 2.0, 4.0]])
    norm = pol._context_weights(remaining, demands, SMALL)
    assert np.allclose(norm, [[0.5, 0.0, 1.0, 0.25]])
    raw_cfg = pol.PolicyConfig(embedding_dim=16, num_encoder_layers=1, num_heads=2,
                               raw_demand_weights=True)
    raw = pol._context_weights(remaining, demands, raw_cfg)
    assert np.allclose(raw, remaining)


def test_sample_rows_never_hits_zero_probability():
    rng = np.random.default_rng(0)
    probs = np.array([[0.5, 0.0, 0.5]])
    draws = {int(pol._sample_rows(probs, rng)[0]) for _ in range(500)}
    assert 1 not in draws
    assert draws == {0, 2}


# ---------------------------------------------------------------------------
# rollouts
# ---------------------------------------------------------------------------


def test_greedy_rollout_deterministic(inst, params):
    a, logp_a = pol.rollout(inst, params, SMALL)
    b, logp_b = pol.rollout(inst, params, SMALL)
    assert a.route == b.route
    assert a.objective == b.objective
    assert logp_a == logp_b
    assert check_solution(a, inst) == []


def test_sampled_rollouts_always_feasible(inst, params):
    rng = np.random.default_rng(4)
    for _ in range(20):
        sol, logp = pol.rollout(inst, params, SMALL, mode="sample", rng=rng)
        assert check_solution(sol, inst) == []
        assert np.isfinite(logp)
        assert logp <= 0.0


def test_rollout_agrees_with_environment(inst, params):
    # replay the greedy tour through the reference environment
    sol, _ = pol.rollout(inst, params, SMALL)
    state = reset(inst)
    for action in sol.route[1:]:
        assert action_mask(state)[action]
        state = step(state, action)
    assert state.terminal
    reward, env_sol = terminal_reward(state)
    assert reward == -sol.objective
    assert env_sol.objective == sol.objective


def test_replay_reproduces_sampled_logprob(inst, params):
    spec = GeneratorSpec(Variant.UNRESTRICTED, markets=5, products=4, seed=21)
    batch = [generate_indexed(spec, i) for i in range(3)]
    rng = np.random.default_rng(8)
    sampled = pol.rollout_batch(batch, params, SMALL, mode="sample", rng=rng)
    replay = pol.rollout_batch(batch, params, SMALL, mode="replay", forced=sampled.actions)
    assert np.allclose(sampled.logp.data, replay.logp.data, atol=1e-12)
    for a, b in zip(sampled.solutions, replay.solutions):
        assert a.route == b.route


def test_logprob_equals_sum_of_step_logs(inst, params):
    rng = np.random.default_rng(13)
    sol, total = pol.rollout(inst, params, SMALL, mode="sample", rng=rng)
    enc = pol.encode([inst], params, SMALL)
    state = reset(inst)
    lstm = pol.init_lstm_state(1, SMALL)
    acc = 0.0
    for action in sol.route[1:]:
        probs, lstm = pol.decode_step(
            enc, params, np.array(state.remaining), action_mask(state),
            state.current, lstm,
        )
        acc += float(np.log(probs[action]))
        state = step(state, action)
    assert abs(acc - total) < 1e-9


def test_batched_greedy_matches_single(params):
    spec = GeneratorSpec(Variant.RESTRICTED, markets=5, products=4, lam=0.9, seed=31)
    batch = [generate_indexed(spec, i) for i in range(4)]
    out = pol.rollout_batch(batch, params, SMALL, mode="greedy")
    for inst_i, sol in zip(batch, out.solutions):
        single, _ = pol.rollout(inst_i, params, SMALL)
        assert single.route == sol.route
        assert single.objective == sol.objective
    assert np.array_equal(out.objectives, [s.objective for s in out.solutions])


def test_bn_buffers_move_only_in_training_mode(inst, params):
    before = params.buffers["enc0.bn1.mean"].copy()
    pol.rollout_batch([inst, inst], params, SMALL, mode="greedy")
    assert np.array_equal(params.buffers["enc0.bn1.mean"], before)
    pol.rollout_batch([inst, inst], params, SMALL, mode="greedy", bn_training=True)
    assert not np.array_equal(params.buffers["enc0.bn1.mean"], before)


def test_rollout_gradient_reaches_every_parameter(params):
    spec = GeneratorSpec(Variant.UNRESTRICTED, markets=4, products=3, seed=17)
    batch = [generate_indexed(spec, i) for i in range(2)]
    rng = np.random.default_rng(3)
    out = pol.rollout_batch(batch, params, SMALL, mode="sample", rng=rng, bn_training=True)
    ad.backward(ad.mean(out.logp))
    for name in params.names():
        grad = params.params[name].grad
        assert grad is not None, name
    total = sum(np.abs(params.params[n].grad).sum() for n in params.names())
    assert total > 0


def test_model_card_mentions_choices():
    card = pol.model_card(pol.PolicyConfig())
    assert "128" in card
    assert "coordinates / 1000" in card
    assert "remaining / initial demand" in card
    raw = pol.model_card(pol.PolicyConfig(raw_demand_weights=True))
    assert "raw remaining units" in raw
