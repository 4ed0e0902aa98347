"""
The collection/token price model.

Per day, node embeddings are initialised from identity embeddings, feature MLPs
and community pooling, then refined by `gnn_layers` rounds of per-relation
attention with a residual sum over relations. A collection's per-day embeddings
over [T - H, T] run through an LSTM and temporal attention to give its window
embedding, which feeds the trend classifier and the token price regressor.
"""
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.autodiff.functional import concat, segment_softmax, segment_sum, stack
from src.autodiff.tensor import Tensor
from src.community.louvain import CommunityAssignment
from src.config.config_definitions import ModelConfig
from src.config.enums import Relation
from src.graph.snapshot import (
    COLLECTION_DYNAMIC_FEATURES, RELATIONS, WALLET_FEATURES, EdgeSet, NodeUniverse, SnapshotGraph,
)
from src.model.ablation import AblationFlags
from src.model.layers import (
    EVAL, LSTM, MLP, ForwardContext, Linear, Module, TemporalAttention, TransformerEncoderLayer,
    glorot, positional_encoding,
)

SALE_EVENT_FEATURES: tuple[str, ...] = ("sale_price", "eth_usd", "collection_price")
TOKEN_GLOBAL_FEATURES: tuple[str, ...] = ("rarity", "mint_count", "sale_count", "transfer_count", "burn_count")
TOKEN_HEAD_PREFIXES: tuple[str, ...] = ("event_proj.", "sale_transformer.", "sale_lstm.", "token_global.", "token_head.")

_IDENTITY_STD: float = 0.1


@dataclass(frozen=True)
class GraphInputs:
    """
    Normalized daily snapshots with the node universe and contiguous cluster ids.

    Attributes:
        snapshots (Mapping[int, SnapshotGraph]): Schema-normalized snapshots by day.
        universe (NodeUniverse): Node index space.
        clusters (np.ndarray): (n_wallets,) cluster index of every wallet.
        n_clusters (int): Number of clusters.
    """
    snapshots: Mapping[int, SnapshotGraph]
    universe: NodeUniverse
    clusters: np.ndarray
    n_clusters: int

    @classmethod
    def build(
        cls,
        snapshots: Mapping[int, SnapshotGraph],
        universe: NodeUniverse,
        communities: CommunityAssignment,
    ) -> "GraphInputs":
        communities = communities.with_wallets(universe.wallets)
        raw = [communities.cluster(w) for w in universe.wallets]
        index = {c: i for i, c in enumerate(sorted(set(raw)))}
        clusters = np.asarray([index[c] for c in raw], dtype=np.int64)
        return cls(snapshots, universe, clusters, len(index))


class RelationAttention(Module):
    """Attention-weighted neighbour sum under one relation, in both edge directions."""

    def __init__(self, relation: Relation, dim: int, rng: np.random.Generator) -> None:
        self.theta_w = Linear(dim, dim, rng)
        self.theta_v = glorot(rng, dim, 1)
        self.edge_proj = Linear(1, dim, rng) if relation.has_feature else None

    def attention(self, h: Tensor, edges: EdgeSet) -> tuple[Tensor, np.ndarray, np.ndarray]:
        """Return (alpha, receivers, senders) over the doubled edge list."""
        receivers = np.concatenate([edges.dst, edges.src])
        senders = np.concatenate([edges.src, edges.dst])
        combined = h[receivers] + h[senders]
        if self.edge_proj is not None:
            combined = combined + self.edge_proj(Tensor(np.concatenate([edges.features, edges.features])))
        scores = self.theta_w(combined).leaky_relu(0.2) @ self.theta_v
        alpha = segment_softmax(scores.reshape(len(receivers)), receivers, h.shape[0])
        return alpha, receivers, senders

    def __call__(self, h: Tensor, edges: EdgeSet) -> Tensor:
        if len(edges) == 0:
            return h
        alpha, receivers, senders = self.attention(h, edges)
        messages = h[senders] * alpha.reshape(len(receivers), 1)
        return h + segment_sum(messages, receivers, h.shape[0])


class CometModel(Module):
    """
    Parameters:
        universe (NodeUniverse): Wallet and collection index space.
        static_dim (int): Width of the static collection features.
        config (ModelConfig): Hyperparameters.
        flags (AblationFlags): Structural ablations.
        seed (int): Initialisation seed.
    """

    def __init__(
        self,
        universe: NodeUniverse,
        static_dim: int,
        config: ModelConfig = ModelConfig(),
        flags: AblationFlags = AblationFlags(),
        seed: int = 0,
    ) -> None:
        rng = np.random.default_rng(seed)
        d = config.hidden_dim
        self.config = config
        self.flags = flags
        self.n_wallets = universe.n_wallets
        self.n_collections = universe.n_collections

        trainable = flags.identity_embeddings
        scale = _IDENTITY_STD if trainable else 0.0
        self.wallet_identity = Tensor(rng.normal(0.0, 1.0, (self.n_wallets, d)) * scale, requires_grad=trainable)
        self.collection_identity = Tensor(rng.normal(0.0, 1.0, (self.n_collections, d)) * scale, requires_grad=trainable)
        self.wallet_features = MLP(len(WALLET_FEATURES), d, d, rng, config.dropout)
        self.collection_dynamic = MLP(len(COLLECTION_DYNAMIC_FEATURES), d, d, rng, config.dropout)
        self.collection_static = MLP(static_dim, d, d, rng, config.dropout)
        self.fusion = MLP(2 * d, d, d, rng, config.dropout)
        self.relations = {relation: RelationAttention(relation, d, rng) for relation in RELATIONS}
        self.lstm = LSTM(d, d, rng)
        self.temporal = TemporalAttention(d, rng)
        self.collection_head = MLP(d, d, 1, rng, config.dropout)

        self.event_proj = Linear(len(SALE_EVENT_FEATURES), d, rng)
        if flags.transformer:
            self.sale_transformer = [
                TransformerEncoderLayer(d, config.transformer_heads, rng, config.dropout)
                for _ in range(config.transformer_layers)
            ]
        else:
            self.sale_lstm = LSTM(d, d, rng)
        self.token_global = MLP(len(TOKEN_GLOBAL_FEATURES), d, d, rng, config.dropout)
        self.token_head = MLP(d, d, 1, rng, config.dropout)

    # parameter groups

    def token_head_parameters(self) -> dict[str, Tensor]:
        return {name: p for name, p in self.named_parameters() if name.startswith(TOKEN_HEAD_PREFIXES)}

    def backbone_parameters(self) -> dict[str, Tensor]:
        return {name: p for name, p in self.named_parameters() if not name.startswith(TOKEN_HEAD_PREFIXES)}

    # graph network

    def community_pool(self, h_tilde: Tensor, clusters: np.ndarray, n_clusters: int) -> Tensor:
        """Mean embedding of each wallet's cluster, one row per wallet."""
        counts = np.maximum(np.bincount(clusters, minlength=n_clusters), 1).astype(np.float64)
        pooled = segment_sum(h_tilde, clusters, n_clusters) * (1.0 / counts)[:, None]
        return pooled[clusters]

    def init_nodes(self, snapshot: SnapshotGraph, inputs: GraphInputs, ctx: ForwardContext = EVAL) -> Tensor:
        """Initial embeddings of all nodes, wallets first."""
        h_tilde = self.wallet_identity + self.wallet_features(Tensor(snapshot.wallet_features), ctx)
        if self.flags.community_fusion:
            pooled = self.community_pool(h_tilde, inputs.clusters, inputs.n_clusters)
            h_wallet = self.fusion(concat([h_tilde, pooled], axis=1), ctx)
        else:
            h_wallet = h_tilde
        h_collection = (
            self.collection_identity
            + self.collection_dynamic(Tensor(snapshot.collection_dynamic), ctx)
            + self.collection_static(Tensor(snapshot.collection_static), ctx)
        )
        return concat([h_wallet, h_collection], axis=0)

    def relation_edges(self, snapshot: SnapshotGraph, relation: Relation) -> EdgeSet:
        if self.flags.uses(relation):
            return snapshot.edges[relation]
        return EdgeSet.empty(relation)

    def layer_aggregate(self, h0: Tensor, relation_outputs: Sequence[Tensor], ctx: ForwardContext = EVAL) -> Tensor:
        total = relation_outputs[0]
        for h_r in relation_outputs[1:]:
            total = total + h_r
        return h0 + ctx.dropout(total, self.config.dropout)

    def encode_day(self, snapshot: SnapshotGraph, inputs: GraphInputs, ctx: ForwardContext = EVAL) -> Tensor:
        """Final-layer embeddings of all nodes on one day."""
        h0 = self.init_nodes(snapshot, inputs, ctx)
        h = h0
        for _ in range(self.config.gnn_layers):
            outputs = [self.relations[r](h, self.relation_edges(snapshot, r)) for r in RELATIONS]
            h = self.layer_aggregate(h0, outputs, ctx)
        return h

    def encode_days(
        self,
        days: Iterable[int],
        inputs: GraphInputs,
        ctx: ForwardContext = EVAL,
        cache: Optional[dict[int, Tensor]] = None,
    ) -> dict[int, Tensor]:
        """Collection rows of each day's encoding, memoized in `cache`."""
        cache = {} if cache is None else cache
        for day in sorted(set(days)):
            if day not in cache:
                cache[day] = self.encode_day(inputs.snapshots[day], inputs, ctx)[self.n_wallets:]
        return cache

    def encode_window(
        self,
        positions: Sequence[int],
        ends: Sequence[int],
        inputs: GraphInputs,
        ctx: ForwardContext = EVAL,
        cache: Optional[dict[int, Tensor]] = None,
    ) -> tuple[Tensor, Optional[Tensor]]:
        """
        Window embeddings of collections (rows `positions`) ending on days `ends`.

        Returns:
            tuple[Tensor, Tensor | None]: (batch, dim) embeddings and the (batch, H + 1)
            temporal attention weights, None when temporal attention is ablated.
        """
        history = self.config.history
        positions = np.asarray(positions, dtype=np.int64)
        ends = np.asarray(ends, dtype=np.int64)
        needed = {int(end) - k for end in ends for k in range(history + 1)}
        cache = self.encode_days(needed, inputs, ctx, cache)
        days = sorted(needed)
        day_index = {day: i for i, day in enumerate(days)}
        encoded = stack([cache[day] for day in days], axis=0)

        steps = []
        for k in range(history + 1):
            rows = np.asarray([day_index[int(end) - history + k] for end in ends], dtype=np.int64)
            steps.append(encoded[rows, positions])
        states = self.lstm(steps)
        if not self.flags.temporal_attention:
            return states[-1], None
        return self.temporal(states)

    def predict_collection(self, window: Tensor, ctx: ForwardContext = EVAL) -> Tensor:
        """Logits of the upward-trend probability; apply `.sigmoid()` for probabilities."""
        return self.collection_head(window, ctx).reshape(window.shape[0])

    # token head

    def encode_sales(self, events: np.ndarray, valid: np.ndarray, ctx: ForwardContext = EVAL) -> Tensor:
        """
        Encode padded sale sequences.

        Parameters:
            events (np.ndarray): (batch, length, 3) normalized event features.
            valid (np.ndarray): (batch, length) mask of real events.

        Returns:
            Tensor: (batch, dim); exactly zero for sequences without events.
        """
        batch, length, _ = events.shape
        x = self.event_proj(Tensor(events))
        if self.flags.transformer:
            x = x + positional_encoding(length, self.config.hidden_dim)[None, :, :]
            for layer in self.sale_transformer:
                x = layer(x, valid, ctx)
            counts = np.maximum(valid.sum(axis=1, keepdims=True), 1)
            weights = (valid / counts)[:, :, None]
            return (x * weights).sum(axis=1)
        states = self.sale_lstm([x[:, t, :] for t in range(length)], [valid[:, t] for t in range(length)])
        return states[-1]

    def predict_token(
        self,
        sales: Tensor,
        global_features: np.ndarray,
        window: Optional[Tensor],
        ctx: ForwardContext = EVAL,
    ) -> Tensor:
        """Nonnegative log1p price predictions, (batch,)."""
        combined = sales + self.token_global(Tensor(global_features), ctx)
        if window is not None and self.flags.collection_embedding:
            combined = combined + window
        return self.token_head(combined, ctx).reshape(sales.shape[0]).relu()
