from collections import Counter
from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping

from src.ingest.records import CollectionMeta


@dataclass(frozen=True)
class RarityTable:
    """
    Rarity of one collection.

    Attributes:
        property_scores (Mapping[str, float]): r_p = |c| / |p| per property key.
        token_scores (Mapping[str, float]): r_i = sum of r_p over the token's properties.
    """
    collection: str
    property_scores: Mapping[str, float]
    token_scores: Mapping[str, float]

    def token(self, token: str) -> float:
        """Rarity of `token`; tokens never seen carry no properties."""
        return self.token_scores.get(token, 0.0)


def rarity_scores(meta: CollectionMeta) -> RarityTable:
    """Compute property and token rarity scores of a collection."""
    n_tokens = meta.n_tokens
    carriers = Counter(key for keys in meta.token_properties.values() for key in keys)
    property_scores = {key: n_tokens / count for key, count in carriers.items()}
    token_scores = {
        token: float(sum(property_scores[key] for key in sorted(keys)))
        for token, keys in meta.token_properties.items()
    }
    return RarityTable(meta.collection, MappingProxyType(property_scores), MappingProxyType(token_scores))
