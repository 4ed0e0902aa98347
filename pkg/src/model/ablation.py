from dataclasses import dataclass

from src.config.enums import Relation, Variant

TOKEN_EDGE_RELATIONS: frozenset[Relation] = frozenset({
    Relation.MINT, Relation.BURN, Relation.SALE_FROM, Relation.SALE_TO, Relation.TRANSFER_IN, Relation.TRANSFER_OUT,
})
WALLET_EDGE_RELATIONS: frozenset[Relation] = frozenset({Relation.SALE_WW, Relation.TRANSFER_WW})


@dataclass(frozen=True)
class AblationFlags:
    """
    Structural switches of the model.

    Attributes:
        dropped_relations (frozenset[Relation]): Relations whose edges are ignored.
        identity_embeddings (bool): Learn per-node identity embeddings; when off they stay zero.
        community_fusion (bool): Fuse the mean embedding of the wallet's cluster.
        temporal_attention (bool): Pool the window with attention; when off only the last state is used.
        collection_embedding (bool): Feed the collection window embedding to the token predictor.
        transformer (bool): Encode sale sequences with the transformer; when off with an LSTM.
    """
    dropped_relations: frozenset[Relation] = frozenset()
    identity_embeddings: bool = True
    community_fusion: bool = True
    temporal_attention: bool = True
    collection_embedding: bool = True
    transformer: bool = True

    @classmethod
    def from_variant(cls, variant: Variant) -> "AblationFlags":
        if variant.is_baseline:
            raise ValueError(f"{variant.value} is a baseline, not a model variant")
        match variant:
            case Variant.WO_HE:
                return cls(dropped_relations=frozenset({Relation.HOLD}))
            case Variant.WO_TE:
                return cls(dropped_relations=TOKEN_EDGE_RELATIONS)
            case Variant.WO_RE:
                return cls(dropped_relations=WALLET_EDGE_RELATIONS)
            case Variant.WO_IDE:
                return cls(identity_embeddings=False)
            case Variant.WO_CIF:
                return cls(community_fusion=False)
            case Variant.WO_TAR:
                return cls(temporal_attention=False)
            case Variant.WO_CE:
                return cls(collection_embedding=False)
            case Variant.WO_TF:
                return cls(transformer=False)
        return cls()

    def uses(self, relation: Relation) -> bool:
        return relation not in self.dropped_relations
