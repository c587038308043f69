"""Attention policy over purchase tours.

The model reads an instance as a bipartite market/product graph, embeds
it with a two-phase message-passing pass (product nodes first, then
market nodes, GIN-style with a fixed self-weight), refines market
embeddings with a stack of attention layers, and decodes a tour one
node at a time. The decoding context concatenates the global graph
embedding, a demand-weighted product summary, and an LSTM route state;
a masked attention glimpse sharpens it before a clipped single-head
pointer produces the action distribution.

One parameter set is size-agnostic: every weight touches only the
embedding dimension, never the market or product count.

Everything here runs batched over instances that share a (markets,
products) shape; the single-instance entry points wrap a batch of one.
"""

from __future__ import annotations

from contextlib import nullcontext
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .model import COORD_MAX, Route, Solution, TppInstance, distance_matrix, route_travel_cost
from .planner import optimal_purchase

GIN_EPSILON = 0.0  # fixed, non-learnable self-loop weight


@dataclass(frozen=True)
class PolicyConfig:
    """Model hyperparameters. Defaults follow the training table."""

    embedding_dim: int = 128
    num_encoder_layers: int = 3
    num_heads: int = 8
    key_dim: int | None = None  # pointer key width; None -> dim / heads
    logit_clip: float = 10.0
    ff_hidden: int | None = None  # None -> 4 * dim
    raw_demand_weights: bool = False  # True: weight products by raw units

    def __post_init__(self):
        if self.embedding_dim % self.num_heads:
            raise ValueError("embedding_dim must be divisible by num_heads")

    @property
    def resolved_key_dim(self) -> int:
        return self.key_dim if self.key_dim is not None else self.embedding_dim // self.num_heads

    @property
    def resolved_ff_hidden(self) -> int:
        return self.ff_hidden if self.ff_hidden is not None else 4 * self.embedding_dim

    def to_dict(self) -> dict:
        return {
            "embedding_dim": self.embedding_dim,
            "num_encoder_layers": self.num_encoder_layers,
            "num_heads": self.num_heads,
            "key_dim": self.resolved_key_dim,
            "logit_clip": self.logit_clip,
            "ff_hidden": self.resolved_ff_hidden,
            "raw_demand_weights": self.raw_demand_weights,
        }

    @staticmethod
    def from_dict(d: dict) -> "PolicyConfig":
        return PolicyConfig(
            embedding_dim=int(d["embedding_dim"]),
            num_encoder_layers=int(d["num_encoder_layers"]),
            num_heads=int(d["num_heads"]),
            key_dim=int(d["key_dim"]) if d.get("key_dim") is not None else None,
            logit_clip=float(d["logit_clip"]),
            ff_hidden=int(d["ff_hidden"]) if d.get("ff_hidden") is not None else None,
            raw_demand_weights=bool(d.get("raw_demand_weights", False)),
        )


def model_card(config: PolicyConfig) -> str:
    """Human-readable record of architecture and feature normalization."""
    c = config
    lines = [
        "policy model card",
        f"  embedding dim          {c.embedding_dim}",
        f"  encoder layers         {c.num_encoder_layers}",
        f"  attention heads        {c.num_heads}",
        f"  pointer key dim        {c.resolved_key_dim}",
        f"  logit clip             {c.logit_clip}",
        f"  feed-forward hidden    {c.resolved_ff_hidden}",
        f"  gin self-weight (1+e)  {1.0 + GIN_EPSILON}",
        "  market features        coordinates / 1000",
        "  product features       demand / max demand",
        "  edge features          price / max price, quantity / demand",
        "  demand-context weights "
        + ("raw remaining units" if c.raw_demand_weights else "remaining / initial demand"),
        "  route context          LSTM, zero init, first input = depot embedding",
    ]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def _add_affine(store: ParamStore, rng, name: str, din: int, dout: int,
                bias: bool = True) -> None:
    store.add_param(f"{name}.w", ad.uniform_init(rng, (din, dout), fan_in=din))
    if bias:
        store.add_param(f"{name}.b", ad.uniform_init(rng, (dout,), fan_in=din))


def init_policy_params(config: PolicyConfig, rng: np.random.Generator) -> ParamStore:
    """Fresh parameter store; creation order is fixed for reproducibility."""
    d = config.embedding_dim
    ff = config.resolved_ff_hidden
    kd = config.resolved_key_dim
    store = ParamStore()
    _add_affine(store, rng, "embed.market", 2, d)
    _add_affine(store, rng, "embed.product", 1, d)
    _add_affine(store, rng, "embed.edge", 2, d)
    for side in ("product", "market"):
        _add_affine(store, rng, f"gin.{side}.l1", d, d)
        _add_affine(store, rng, f"gin.{side}.l2", d, d)
    for i in range(config.num_encoder_layers):
        for proj in ("wq", "wk", "wv", "wo"):
            store.add_param(f"enc{i}.{proj}", ad.uniform_init(rng, (d, d), fan_in=d))
        _add_affine(store, rng, f"enc{i}.ff1", d, ff)
        _add_affine(store, rng, f"enc{i}.ff2", ff, d)
        for bn in ("bn1", "bn2"):
            store.add_param(f"enc{i}.{bn}.gamma", np.ones(d))
            store.add_param(f"enc{i}.{bn}.beta", np.zeros(d))
            store.add_buffer(f"enc{i}.{bn}.mean", np.zeros(d))
            store.add_buffer(f"enc{i}.{bn}.var", np.ones(d))
    store.add_param("dec.lstm.wx", ad.uniform_init(rng, (d, 4 * d), fan_in=d))
    store.add_param("dec.lstm.wh", ad.uniform_init(rng, (d, 4 * d), fan_in=d))
    store.add_param("dec.lstm.b", ad.uniform_init(rng, (4 * d,), fan_in=d))
    store.add_param("dec.glimpse.wq", ad.uniform_init(rng, (3 * d, d), fan_in=3 * d))
    for proj in ("wk", "wv", "wo"):
        store.add_param(f"dec.glimpse.{proj}", ad.uniform_init(rng, (d, d), fan_in=d))
    store.add_param("dec.out.wq", ad.uniform_init(rng, (d, kd), fan_in=d))
    store.add_param("dec.out.wk", ad.uniform_init(rng, (d, kd), fan_in=d))
    return store


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BipartiteGraph:
    """Normalized instance features.

    Market rows include the depot at index 0. Edges exist exactly where
    offers do; the depot therefore has none.
    """

    market_features: np.ndarray  # (M+1, 2)
    product_features: np.ndarray  # (K, 1)
    edges: np.ndarray  # (E, 2): market node index, product index
    edge_features: np.ndarray  # (E, 2): price, quantity (normalized)


def build_bipartite(inst: TppInstance) -> BipartiteGraph:
    m1 = inst.num_markets + 1
    coords = np.array([inst.coord(i) for i in range(m1)], dtype=np.float64)
    market = coords / COORD_MAX
    demands = np.array(inst.demands, dtype=np.float64)
    product = (demands / demands.max()).reshape(-1, 1)
    p_max = float(inst.max_price())
    rows = []
    feats = []
    for (i, k), offer in sorted(inst.offers.items()):
        rows.append((i, k))
        feats.append((offer.price / p_max, offer.quantity / demands[k]))
    return BipartiteGraph(
        market_features=market,
        product_features=product,
        edges=np.array(rows, dtype=np.int64).reshape(-1, 2),
        edge_features=np.array(feats, dtype=np.float64).reshape(-1, 2),
    )


@dataclass(frozen=True)
class _BatchFeatures:
    market: np.ndarray  # (B, M+1, 2)
    product: np.ndarray  # (B, K, 1)
    edge_flat: np.ndarray  # (B*K, M+1, 2) zero-filled where no edge
    edge_mask_flat: np.ndarray  # (B*K, M+1) bool
    quantities: np.ndarray  # (B, M+1, K) int64, 0 where no offer
    demands: np.ndarray  # (B, K) int64


def _batch_features(instances: Sequence[TppInstance]) -> _BatchFeatures:
    first = instances[0]
    m1, k = first.num_markets + 1, first.num_products
    for inst in instances:
        if inst.num_markets + 1 != m1 or inst.num_products != k:
            raise ValueError("batched instances must share (markets, products) shape")
    b = len(instances)
    market = np.empty((b, m1, 2))
    product = np.empty((b, k, 1))
    edge = np.zeros((b, k, m1, 2))
    emask = np.zeros((b, k, m1), dtype=bool)
    quantities = np.zeros((b, m1, k), dtype=np.int64)
    demands = np.empty((b, k), dtype=np.int64)
    for bi, inst in enumerate(instances):
        g = build_bipartite(inst)
        market[bi] = g.market_features
        product[bi] = g.product_features
        mi, ki = g.edges[:, 0], g.edges[:, 1]
        edge[bi, ki, mi] = g.edge_features
        emask[bi, ki, mi] = True
        demands[bi] = inst.demands
        for (i, kk), offer in inst.offers.items():
            quantities[bi, i, kk] = offer.quantity
    if not emask.any(axis=2).all():
        raise ValueError("a product with no offering market cannot be embedded")
    return _BatchFeatures(
        market=market,
        product=product,
        edge_flat=edge.reshape(b * k, m1, 2),
        edge_mask_flat=emask.reshape(b * k, m1),
        quantities=quantities,
        demands=demands,
    )


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------


@dataclass
class Encoded:
    """Per-batch encoder outputs shared across all decode steps."""

    g0: Tensor  # (B, K, d) product embeddings
    hN: Tensor  # (B, M+1, d) final market embeddings
    hM: Tensor  # (B, d) global embedding (row mean of hN)
    glimpse_k: Tensor  # (B, M+1, d)
    glimpse_v: Tensor  # (B, M+1, d)
    pointer_k: Tensor  # (B, M+1, key_dim)
    feats: _BatchFeatures
    config: PolicyConfig = field(repr=False)


def _mlp(x: Tensor, params: ParamStore, prefix: str) -> Tensor:
    hidden = ad.relu(ad.affine(x, params[f"{prefix}.l1.w"], params[f"{prefix}.l1.b"]))
    return ad.affine(hidden, params[f"{prefix}.l2.w"], params[f"{prefix}.l2.b"])


def embed_inputs(feats: _BatchFeatures, params: ParamStore) -> tuple[Tensor, Tensor]:
    """Two-phase message passing; returns (g0 products, h0 markets)."""
    b, m1, _ = feats.market.shape
    k = feats.product.shape[1]
    h_init = ad.affine(Tensor(feats.market), params["embed.market.w"], params["embed.market.b"])
    g_init = ad.affine(Tensor(feats.product), params["embed.product.w"], params["embed.product.b"])
    e_init = ad.affine(Tensor(feats.edge_flat), params["embed.edge.w"], params["embed.edge.b"])
    emask = feats.edge_mask_flat[:, :, None]
    # phase 1: products aggregate from offering markets
    msg = ad.where_mask(ad.relu(ad.add(ad.repeat_interleave0(h_init, k), e_init)), emask, 0.0)
    agg_k = ad.reshape(ad.sum_(msg, axis=1), (b, k, -1))
    g0 = _mlp(ad.add(ad.mul(g_init, 1.0 + GIN_EPSILON), agg_k), params, "gin.product")
    # phase 2 consumes phase-1 output; depot rows get an empty sum
    g0_rows = ad.reshape(g0, (b * k, 1, -1))
    msg2 = ad.where_mask(ad.relu(ad.add(g0_rows, e_init)), emask, 0.0)
    agg_m = ad.sum_blocks0(msg2, k)
    h0 = _mlp(ad.add(ad.mul(h_init, 1.0 + GIN_EPSILON), agg_m), params, "gin.market")
    return g0, h0


def encode_markets(
    h0: Tensor, params: ParamStore, config: PolicyConfig, bn_training: bool,
) -> tuple[Tensor, Tensor]:
    """Attention encoder stack; returns (hN, global mean embedding)."""
    store = params
    h = h0
    for i in range(config.num_encoder_layers):
        att = ad.mha(
            h, h, h,
            store[f"enc{i}.wq"], store[f"enc{i}.wk"],
            store[f"enc{i}.wv"], store[f"enc{i}.wo"],
            config.num_heads,
        )
        h = ad.batchnorm(
            ad.add(h, att),
            store[f"enc{i}.bn1.gamma"], store[f"enc{i}.bn1.beta"],
            store.buffer(f"enc{i}.bn1.mean"), store.buffer(f"enc{i}.bn1.var"),
            training=bn_training,
        )
        ff = ad.affine(
            ad.relu(ad.affine(h, store[f"enc{i}.ff1.w"], store[f"enc{i}.ff1.b"])),
            store[f"enc{i}.ff2.w"], store[f"enc{i}.ff2.b"],
        )
        h = ad.batchnorm(
            ad.add(h, ff),
            store[f"enc{i}.bn2.gamma"], store[f"enc{i}.bn2.beta"],
            store.buffer(f"enc{i}.bn2.mean"), store.buffer(f"enc{i}.bn2.var"),
            training=bn_training,
        )
    return h, ad.mean(h, axis=1)


def encode(
    instances: Sequence[TppInstance],
    params: ParamStore,
    config: PolicyConfig,
    bn_training: bool = False,
) -> Encoded:
    """Run embedding and encoder once; decode steps reuse the result."""
    feats = _batch_features(instances)
    g0, h0 = embed_inputs(feats, params)
    hn, hm = encode_markets(h0, params, config, bn_training)
    return Encoded(
        g0=g0,
        hN=hn,
        hM=hm,
        glimpse_k=ad.matmul(hn, params["dec.glimpse.wk"]),
        glimpse_v=ad.matmul(hn, params["dec.glimpse.wv"]),
        pointer_k=ad.matmul(hn, params["dec.out.wk"]),
        feats=feats,
        config=config,
    )


# ---------------------------------------------------------------------------
# decoder
# ---------------------------------------------------------------------------


def _decode_logprobs(
    enc: Encoded,
    params: ParamStore,
    weights: np.ndarray,  # (B, K) demand-context weights
    mask: np.ndarray,  # (B, M+1) True where selectable
    current: np.ndarray,  # (B,) node the walker stands on
    lstm_state: tuple[Tensor, Tensor],
) -> tuple[Tensor, tuple[Tensor, Tensor]]:
    config = enc.config
    b, m1, d = enc.hN.shape
    heads = config.num_heads
    dh = d // heads
    x = ad.take_nodes(enc.hN, current)
    h_l, c_l = ad.lstm_cell(
        x, lstm_state[0], lstm_state[1],
        params["dec.lstm.wx"], params["dec.lstm.wh"], params["dec.lstm.b"],
    )
    gk = ad.reshape(ad.matmul(Tensor(weights[:, None, :]), enc.g0), (b, d))
    hd = ad.concat([enc.hM, gk, h_l], axis=-1)
    # one attention glimpse over unmasked markets, query from the context
    q = ad.matmul(ad.reshape(hd, (b, 1, 3 * d)), params["dec.glimpse.wq"])
    mask3 = mask[:, None, :]
    scale = 1.0 / np.sqrt(dh)
    pieces = []
    for h in range(heads):
        lo, hi = h * dh, (h + 1) * dh
        qs = ad.slice_lastdim(q, lo, hi)
        ks = ad.slice_lastdim(enc.glimpse_k, lo, hi)
        vs = ad.slice_lastdim(enc.glimpse_v, lo, hi)
        scores = ad.where_mask(ad.mul(ad.matmul(qs, ad.swap_last2(ks)), scale), mask3)
        pieces.append(ad.matmul(ad.softmax(scores, axis=-1), vs))
    hd2 = ad.matmul(ad.concat(pieces, axis=-1), params["dec.glimpse.wo"])
    # clipped single-head pointer
    qp = ad.matmul(hd2, params["dec.out.wq"])
    kd = config.resolved_key_dim
    raw = ad.mul(ad.matmul(qp, ad.swap_last2(enc.pointer_k)), 1.0 / np.sqrt(kd))
    u = ad.where_mask(ad.reshape(ad.mul(ad.tanh(raw), config.logit_clip), (b, m1)), mask)
    return ad.log_softmax(u, axis=-1), (h_l, c_l)


def _context_weights(remaining: np.ndarray, demands: np.ndarray,
                     config: PolicyConfig) -> np.ndarray:
    if config.raw_demand_weights:
        return remaining.astype(np.float64)
    return remaining / demands


def init_lstm_state(batch: int, config: PolicyConfig) -> tuple[Tensor, Tensor]:
    d = config.embedding_dim
    return Tensor(np.zeros((batch, d))), Tensor(np.zeros((batch, d)))


def decode_step(
    enc: Encoded,
    params: ParamStore,
    remaining: np.ndarray,
    mask: np.ndarray,
    current: int,
    lstm_state: tuple[Tensor, Tensor],
) -> tuple[np.ndarray, tuple[Tensor, Tensor]]:
    """Single-instance action distribution for the current state.

    Returns (probabilities over nodes, next LSTM state). The encoder
    output must come from a batch of one.
    """
    if not mask.any():
        raise AssertionError("no selectable action; environment violated its mask contract")
    weights = _context_weights(
        remaining.reshape(1, -1), enc.feats.demands.astype(np.float64), enc.config
    )
    logp, state = _decode_logprobs(
        enc, params, weights, mask.reshape(1, -1), np.array([current]), lstm_state
    )
    return np.exp(logp.data[0]), state


# ---------------------------------------------------------------------------
# rollout
# ---------------------------------------------------------------------------


@dataclass
class RolloutBatch:
    solutions: list[Solution]
    logp: Tensor  # (B,) sum of selected log-probabilities
    actions: np.ndarray  # (T, B) actions per step, depot-padded after finish
    objectives: np.ndarray  # (B,) int64


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sample per row; zero-probability entries are never hit."""
    cum = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cum[:, -1]
    return np.minimum((cum < u[:, None]).sum(axis=1), probs.shape[1] - 1)


def rollout_batch(
    instances: Sequence[TppInstance],
    params: ParamStore,
    config: PolicyConfig,
    mode: str = "greedy",
    rng: np.random.Generator | None = None,
    bn_training: bool = False,
    forced: np.ndarray | None = None,
    enc: Encoded | None = None,
) -> RolloutBatch:
    """Decode complete tours for a shape-homogeneous batch.

    mode "greedy" takes the argmax action, "sample" draws from the
    distribution (requires rng), "replay" follows the given forced
    action matrix (T, B). The returned log-probability tensor carries
    gradients; finished rows contribute exactly zero per step.
    """
    if mode == "sample" and rng is None:
        raise ValueError("sample mode needs an rng")
    if mode == "replay" and forced is None:
        raise ValueError("replay mode needs forced actions")
    if enc is None:
        enc = encode(instances, params, config, bn_training=bn_training)
    b = len(instances)
    m1 = instances[0].num_markets + 1
    demands0 = enc.feats.demands.astype(np.float64)
    remaining = enc.feats.demands.copy()
    visited = np.zeros((b, m1), dtype=bool)
    visited[:, 0] = True
    done = np.zeros(b, dtype=bool)
    current = np.zeros(b, dtype=np.int64)
    routes: list[list[int]] = [[0] for _ in range(b)]
    lstm_state = init_lstm_state(b, config)
    contribs: list[Tensor] = []
    actions_log = []
    rows = np.arange(b)
    for t in range(m1 + 1):
        if done.all():
            break
        mask = ~visited
        mask[:, 0] = (remaining <= 0).all(axis=1)
        mask[done] = False
        mask[done, 0] = True
        weights = _context_weights(remaining.astype(np.float64), demands0, config)
        logp, lstm_state = _decode_logprobs(enc, params, weights, mask, current, lstm_state)
        if mode == "greedy":
            actions = np.argmax(logp.data, axis=1)
        elif mode == "sample":
            actions = _sample_rows(np.exp(logp.data), rng)
        else:
            actions = np.asarray(forced[t], dtype=np.int64)
        actions = np.where(done, 0, actions)
        if not mask[rows, actions].all():
            raise AssertionError("decoder selected a masked action")
        alive = (~done).astype(np.float64)
        contribs.append(ad.mul(ad.take_per_row(logp, actions), Tensor(alive)))
        actions_log.append(actions)
        for bi in np.flatnonzero(~done):
            a = int(actions[bi])
            routes[bi].append(a)
            if a == 0:
                done[bi] = True
            else:
                visited[bi, a] = True
                np.maximum(remaining[bi] - enc.feats.quantities[bi, a], 0, out=remaining[bi])
                current[bi] = a
    if not done.all():
        raise AssertionError("rollout exceeded the step budget without closing")
    total = contribs[0]
    for extra in contribs[1:]:
        total = ad.add(total, extra)
    solutions = []
    for bi, inst in enumerate(instances):
        route: Route = tuple(routes[bi])
        plan, purchase = optimal_purchase(inst, [v for v in route if v != 0])
        travel = route_travel_cost(route, distance_matrix(inst))
        solutions.append(Solution(route=route, plan=plan, travel_cost=travel,
                                  purchase_cost=purchase))
    return RolloutBatch(
        solutions=solutions,
        logp=total,
        actions=np.array(actions_log, dtype=np.int64),
        objectives=np.array([s.objective for s in solutions], dtype=np.int64),
    )


def rollout(
    inst: TppInstance,
    params: ParamStore,
    config: PolicyConfig,
    mode: str = "greedy",
    rng: np.random.Generator | None = None,
) -> tuple[Solution, float]:
    """Single-instance tour; returns (Solution, total log-probability)."""
    with ad.no_grad() if mode == "greedy" else nullcontext():
        batch = rollout_batch([inst], params, config, mode=mode, rng=rng)
    return batch.solutions[0], float(batch.logp.data[0])
