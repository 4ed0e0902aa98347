"""
Synthetic NFT market with planted phenomena.

The generator writes the same files real ingestion reads, plus `truth.json`:

    transactions.csv      tx_id,timestamp,kind,from_wallet,to_wallet,collection,token,price_eth
    rates.csv             day,eth_usd
    collections.csv       collection,total_supply
    properties.csv        collection,token,property_key
    visual_embeddings.csv / textual_embeddings.csv
    truth.json            planted wash sales, smart-money wallets, bumps, outliers, latent prices

Wallet activity budgets follow a discrete power law. Every day each wallet spends
a binomial share of its remaining budget on buys and sells; a buyer never
receives a token it owned before, so only the planted rings form ownership
cycles. Collection prices follow geometric random walks, and a token sells at
the latent collection price times a rarity multiplier.
"""
import json
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from loguru import logger
from tqdm import tqdm

from src.config.config_definitions import PreprocessConfig, SyntheticSpec
from src.config.enums import EmbeddingSource, TxKind
from src.errors import ConfigError
from src.ingest.embeddings import write_embeddings
from src.ingest.records import SECONDS_PER_DAY, CollectionMeta, EmbeddingTable
from src.ingest.schema import TRANSACTION_COLUMNS
from src.preprocessor.rarity import rarity_scores
from src.utils.saver import get_saver_strategy

TRUTH_FILE: str = "truth.json"
ACCUMULATION_PROB: float = 0.1
SELL_PROB: float = 0.5
TRANSFER_PROB: float = 0.3
BURN_PROB: float = 0.05
SALE_NOISE: float = 0.05
OUTLIER_FACTORS: tuple[float, float] = (0.1, 10.0)


def sample_power_law(rng: np.random.Generator, n: int, exponent: float, xmin: int) -> np.ndarray:
    """Discrete power-law samples by rounding the continuous inverse CDF from xmin - 1/2."""
    u = rng.random(n)
    return np.floor((xmin - 0.5) * (1.0 - u) ** (-1.0 / (exponent - 1.0)) + 0.5).astype(np.int64)


def check_feasible(spec: SyntheticSpec) -> None:
    """
    Raises:
        ConfigError: When the rings need more wallets or tokens than the market parameters provide.
    """
    ring_wallets = spec.wash_rings * spec.ring_size
    if ring_wallets > spec.n_wallets - spec.smart_wallets:
        raise ConfigError(
            f"{spec.wash_rings} rings of {spec.ring_size} need {ring_wallets} wallets, "
            f"only {spec.n_wallets - spec.smart_wallets} non-smart wallets exist"
        )
    rings_per_collection = -(-spec.wash_rings // spec.n_collections)
    if rings_per_collection >= spec.tokens_per_collection:
        raise ConfigError("not enough tokens per collection for the wash rings")


@dataclass
class _Token:
    collection: int
    token: str
    multiplier: float
    holder: Optional[int] = None
    past_owners: set[int] = field(default_factory=set)
    burned: bool = False
    reserved: bool = False


class MarketSimulator:
    """
    Day-by-day simulation of one synthetic market.

    Parameters:
        spec (SyntheticSpec): Market parameters.
    """

    def __init__(self, spec: SyntheticSpec) -> None:
        check_feasible(spec)
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        self.first_day = spec.start_timestamp // SECONDS_PER_DAY

        self.wallets = [f"w{i:04d}" for i in range(spec.n_wallets)]
        self.collections = [f"c{j:03d}" for j in range(spec.n_collections)]
        self.budgets = sample_power_law(self.rng, spec.n_wallets, spec.activity_exponent, spec.activity_xmin)
        self.remaining = self.budgets.copy()
        order = sorted(range(spec.n_wallets), key=lambda i: (-self.budgets[i], i))
        self.smart = sorted(order[:spec.smart_wallets])
        self.smart_set = set(self.smart)

        self.launch = self.rng.integers(0, max(1, spec.n_days // 10), size=spec.n_collections)
        self.base_price = np.exp(self.rng.normal(np.log(0.5), 1.0, size=spec.n_collections))
        self.properties = self._draw_properties()
        self.tokens = self._make_tokens()
        self.mint_queue: list[list[int]] = [
            [i for i, t in enumerate(self.tokens) if t.collection == c and not t.reserved]
            for c in range(spec.n_collections)
        ]
        self.held: defaultdict[int, dict[int, None]] = defaultdict(dict)

        self.latent = np.zeros((spec.n_collections, spec.n_days))
        self.pending_bumps: defaultdict[int, set[int]] = defaultdict(set)
        self.bumps: list[dict] = []
        self.rows: list[dict] = []
        self.wash_ids: list[str] = []
        self.outlier_ids: list[str] = []
        self._day_events: list[dict] = []

    # setup

    def _draw_properties(self) -> dict[int, dict[str, frozenset[str]]]:
        spec = self.spec
        result = {}
        for c in range(spec.n_collections):
            prevalence = np.sort(self.rng.uniform(0.05, 0.6, size=spec.properties_per_collection))
            keys = [f"p{k:02d}" for k in range(spec.properties_per_collection)]
            tokens = {}
            for t in range(spec.tokens_per_collection):
                owned = [key for key, q in zip(keys, prevalence) if self.rng.random() < q]
                tokens[str(t)] = frozenset(owned or [keys[-1]])
            result[c] = tokens
        return result

    def _make_tokens(self) -> list[_Token]:
        spec = self.spec
        tokens = []
        for c in range(spec.n_collections):
            meta = CollectionMeta(self.collections[c], spec.tokens_per_collection, self.properties[c])
            scores = rarity_scores(meta).token_scores
            median = float(np.median(list(scores.values())))
            for t in range(spec.tokens_per_collection):
                multiplier = (scores[str(t)] / median) ** spec.rarity_strength
                tokens.append(_Token(c, str(t), float(multiplier)))
        for r in range(spec.wash_rings):
            c = r % spec.n_collections
            slot = r // spec.n_collections
            tokens[c * spec.tokens_per_collection + slot].reserved = True
        return tokens

    # events

    def _emit(self, day: int, kind: TxKind, token_id: int, src: Optional[int], dst: Optional[int], price: Optional[float] = None) -> str:
        token = self.tokens[token_id]
        tx_id = f"tx{len(self.rows) + len(self._day_events):08d}"
        self._day_events.append({
            "tx_id": tx_id,
            "kind": kind.value,
            "from_wallet": self.wallets[src] if src is not None else None,
            "to_wallet": self.wallets[dst] if dst is not None else None,
            "collection": self.collections[token.collection],
            "token": token.token,
            "price_eth": round(price, 6) if price is not None else None,
        })
        if src is not None:
            self.held[src].pop(token_id, None)
        if kind is TxKind.BURN:
            token.burned = True
            token.holder = None
        else:
            token.holder = dst
            token.past_owners.add(dst)
            self.held[dst][token_id] = None
        return tx_id

    def _sale_price(self, day: int, token_id: int) -> float:
        token = self.tokens[token_id]
        return float(self.latent[token.collection, day] * token.multiplier * np.exp(self.rng.normal(0.0, SALE_NOISE)))

    def _sell(self, day: int, token_id: int, seller: int, buyer: int) -> None:
        price = self._sale_price(day, token_id)
        outlier = self.rng.random() < self.spec.outlier_rate
        if outlier:
            price *= OUTLIER_FACTORS[int(self.rng.integers(0, 2))]
        tx_id = self._emit(day, TxKind.SALE, token_id, seller, buyer, price)
        if outlier:
            self.outlier_ids.append(tx_id)
        self.remaining[seller] -= 1
        self.remaining[buyer] -= 1

    def _mint(self, day: int, buyer: int, collection: Optional[int]) -> bool:
        if collection is None:
            open_collections = [c for c in range(self.spec.n_collections) if self.launch[c] <= day and self.mint_queue[c]]
            if not open_collections:
                return False
            collection = open_collections[int(self.rng.integers(0, len(open_collections)))]
        elif self.launch[collection] > day or not self.mint_queue[collection]:
            return False
        token_id = self.mint_queue[collection].pop(0)
        self._emit(day, TxKind.MINT, token_id, None, buyer)
        self.remaining[buyer] -= 1
        return True

    def _eligible(self, seller: int, buyer: int, collection: Optional[int]) -> Optional[int]:
        for token_id in self.held[seller]:
            token = self.tokens[token_id]
            if buyer in token.past_owners or token.reserved:
                continue
            if collection is None or token.collection == collection:
                return token_id
        return None

    def _match(self, day: int, buyer: int, sellers: list[int], focus: Optional[int]) -> bool:
        for i, seller in enumerate(sellers):
            if seller == buyer or self.remaining[seller] <= 0:
                continue
            token_id = self._eligible(seller, buyer, focus)
            if token_id is not None:
                sellers.pop(i)
                self._sell(day, token_id, seller, buyer)
                return True
        return False

    def _pull_focus_seller(self, day: int, buyer: int, focus: int) -> bool:
        """Buy a focus-collection token from any holder with budget left."""
        for token_id in self.rng.permutation(len(self.tokens)):
            token = self.tokens[int(token_id)]
            holder = token.holder
            if (token.collection != focus or holder is None or holder == buyer or token.reserved
                    or buyer in token.past_owners or self.remaining[holder] <= 0):
                continue
            self._sell(day, int(token_id), holder, buyer)
            return True
        return False

    def _simulate_day(self, day: int) -> None:
        spec = self.spec
        d = day - self.first_day
        days_left = spec.n_days - d
        launched = [c for c in range(spec.n_collections) if self.launch[c] <= d]
        focus = None
        if launched and self.rng.random() < ACCUMULATION_PROB:
            focus = launched[int(self.rng.integers(0, len(launched)))]

        slots = self.rng.binomial(np.maximum(self.remaining, 0), 1.0 / days_left)
        buyers: list[int] = []
        sellers: list[int] = []
        for wallet in range(spec.n_wallets):
            for _ in range(int(slots[wallet])):
                holds = bool(self.held[wallet])
                smart_focus = focus is not None and wallet in self.smart_set
                if holds and not smart_focus and self.rng.random() < SELL_PROB:
                    sellers.append(wallet)
                else:
                    buyers.append(wallet)
        buyers = [buyers[i] for i in self.rng.permutation(len(buyers))]
        sellers = [sellers[i] for i in self.rng.permutation(len(sellers))]

        for buyer in buyers:
            if self.remaining[buyer] <= 0:
                continue
            preferred = None
            if focus is not None and buyer in self.smart_set and self.rng.random() < spec.smart_focus_prob:
                preferred = focus
            if preferred is not None:
                if self._match(d, buyer, sellers, preferred) or self._mint(d, buyer, preferred):
                    continue
                if self._pull_focus_seller(d, buyer, preferred):
                    continue
            if not self._match(d, buyer, sellers, None):
                self._mint(d, buyer, None)

        for seller in sellers:
            if self.remaining[seller] <= 0 or not self.held[seller]:
                continue
            draw = self.rng.random()
            token_id = next((t for t in self.held[seller] if not self.tokens[t].reserved), None)
            if token_id is None:
                continue
            if draw < BURN_PROB:
                self._emit(d, TxKind.BURN, token_id, seller, None)
                self.remaining[seller] -= 1
            elif draw < BURN_PROB + TRANSFER_PROB:
                receivers = [
                    w for w in range(spec.n_wallets)
                    if w != seller and self.remaining[w] > 0 and w not in self.tokens[token_id].past_owners
                ]
                if receivers:
                    receiver = receivers[int(self.rng.integers(0, len(receivers)))]
                    self._emit(d, TxKind.TRANSFER, token_id, seller, receiver)
                    self.remaining[seller] -= 1
                    self.remaining[receiver] -= 1

    def _wash_rings(self) -> dict[int, list[tuple[int, list[int]]]]:
        """Ring day, reserved token and members of every planted ring."""
        spec = self.spec
        candidates = [w for w in range(spec.n_wallets) if w not in self.smart_set]
        members = self.rng.choice(candidates, size=spec.wash_rings * spec.ring_size, replace=False)
        rings: defaultdict[int, list[tuple[int, list[int]]]] = defaultdict(list)
        reserved = [i for i, t in enumerate(self.tokens) if t.reserved]
        for r in range(spec.wash_rings):
            token_id = reserved[r]
            start = max(int(self.launch[self.tokens[token_id].collection]), spec.n_days // 4)
            day = int(self.rng.integers(start, max(start + 1, spec.n_days // 2)))
            ring = [int(w) for w in members[r * spec.ring_size:(r + 1) * spec.ring_size]]
            rings[min(day, spec.n_days - 1)].append((token_id, ring))
        return rings

    def _run_ring(self, d: int, token_id: int, ring: list[int]) -> None:
        self._emit(d, TxKind.MINT, token_id, None, ring[0])
        for _ in range(self.spec.ring_cycles):
            for k, seller in enumerate(ring):
                buyer = ring[(k + 1) % len(ring)]
                price = self._sale_price(d, token_id)
                self.wash_ids.append(self._emit(d, TxKind.SALE, token_id, seller, buyer, price))

    def _record_signals(self, d: int) -> None:
        net: defaultdict[int, int] = defaultdict(int)
        for event in self._day_events:
            if event["kind"] != TxKind.SALE.value or event["tx_id"] in self.wash_ids:
                continue
            c = self.collections.index(event["collection"])
            if self.wallets.index(event["to_wallet"]) in self.smart_set:
                net[c] += 1
            if self.wallets.index(event["from_wallet"]) in self.smart_set:
                net[c] -= 1
        for c, count in sorted(net.items()):
            if count > self.spec.smart_threshold and d + self.spec.lag < self.spec.n_days:
                self.pending_bumps[d + self.spec.lag].add(c)
                self.bumps.append({
                    "collection": self.collections[c],
                    "signal_day": self.first_day + d,
                    "bump_day": self.first_day + d + self.spec.lag,
                    "net_buys": count,
                })

    def _flush_day(self, d: int) -> None:
        seconds = np.sort(self.rng.integers(0, SECONDS_PER_DAY, size=len(self._day_events)))
        base = (self.first_day + d) * SECONDS_PER_DAY
        for event, second in zip(self._day_events, seconds):
            event["timestamp"] = int(base + second)
            self.rows.append(event)
        self._day_events = []

    def run(self) -> None:
        spec = self.spec
        rings = self._wash_rings()
        log_price = np.log(self.base_price)
        for d in tqdm(range(spec.n_days), desc="synthetic market"):
            if d > 0:
                log_price = log_price + self.rng.normal(0.0, spec.price_volatility, size=spec.n_collections)
            for c in sorted(self.pending_bumps.pop(d, ())):
                log_price[c] += np.log1p(spec.bump)
            self.latent[:, d] = np.exp(log_price)
            day = self.first_day + d
            self._simulate_day(day)
            for token_id, ring in rings.get(d, []):
                self._run_ring(d, token_id, ring)
            self._record_signals(d)
            self._flush_day(d)
        logger.info(
            f"Synthetic market: {len(self.rows)} transactions, {len(self.wash_ids)} wash sales, "
            f"{len(self.bumps)} smart-money bumps, unused budget {int(np.maximum(self.remaining, 0).sum())}"
        )

    # outputs

    def transactions_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=list(TRANSACTION_COLUMNS))

    def rates_frame(self) -> pd.DataFrame:
        steps = self.rng.normal(0.0, 0.02, size=self.spec.n_days)
        steps[0] = 0.0
        rates = 2000.0 * np.exp(np.cumsum(steps))
        return pd.DataFrame({"day": self.first_day + np.arange(self.spec.n_days), "eth_usd": np.round(rates, 4)})

    def collections_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"collection": self.collections, "total_supply": self.spec.tokens_per_collection})

    def properties_frame(self) -> pd.DataFrame:
        rows = [
            (self.collections[c], token, key)
            for c in range(self.spec.n_collections)
            for token, keys in self.properties[c].items()
            for key in sorted(keys)
        ]
        return pd.DataFrame(rows, columns=["collection", "token", "property_key"])

    def embedding_table(self) -> EmbeddingTable:
        dim = self.spec.embedding_dim
        return EmbeddingTable(
            dim, {c: self.rng.normal(0.0, 1.0, size=dim) for c in self.collections}, EmbeddingSource.FILE
        )

    def truth(self) -> dict:
        return {
            "wash_tx_ids": sorted(self.wash_ids),
            "outlier_tx_ids": sorted(self.outlier_ids),
            "smart_wallets": [self.wallets[w] for w in self.smart],
            "bumps": self.bumps,
            "first_day": self.first_day,
            "latent_prices": {
                self.collections[c]: [round(float(p), 8) for p in self.latent[c]] for c in range(self.spec.n_collections)
            },
            "wallet_budgets": {self.wallets[w]: int(b) for w, b in enumerate(self.budgets)},
            "spec": self.spec.model_dump(mode="json"),
        }


def gen_synthetic(
    spec: SyntheticSpec,
    out_dir: str,
    seed: Optional[int] = None,
    preprocess: PreprocessConfig = PreprocessConfig(),
) -> list[str]:
    """
    Generate a synthetic market into `out_dir`.

    Parameters:
        spec (SyntheticSpec): Market parameters.
        out_dir (str): Target directory, created when missing.
        seed (int | None): Overrides `spec.seed`.
        preprocess (PreprocessConfig): Names of the embedding files.

    Returns:
        list[str]: Names of the written files.

    Raises:
        ConfigError: When the market parameters are infeasible.
    """
    if seed is not None:
        spec = spec.model_copy(update={"seed": seed})
    simulator = MarketSimulator(spec)
    simulator.run()

    os.makedirs(out_dir, exist_ok=True)
    csv = get_saver_strategy("csv")
    csv.save(os.path.join(out_dir, "transactions.csv"), simulator.transactions_frame())
    csv.save(os.path.join(out_dir, "rates.csv"), simulator.rates_frame())
    csv.save(os.path.join(out_dir, "collections.csv"), simulator.collections_frame())
    csv.save(os.path.join(out_dir, "properties.csv"), simulator.properties_frame())
    write_embeddings(os.path.join(out_dir, preprocess.visual_embeddings), simulator.embedding_table())
    write_embeddings(os.path.join(out_dir, preprocess.textual_embeddings), simulator.embedding_table())
    with open(os.path.join(out_dir, TRUTH_FILE), "w", encoding="utf-8") as f:
        json.dump(simulator.truth(), f, indent=2, sort_keys=True)
        f.write("\n")
    return [
        "transactions.csv", "rates.csv", "collections.csv", "properties.csv",
        preprocess.visual_embeddings, preprocess.textual_embeddings, TRUTH_FILE,
    ]


def load_truth(data_dir: str) -> dict:
    with open(os.path.join(data_dir, TRUTH_FILE), "r", encoding="utf-8") as f:
        return json.load(f)
