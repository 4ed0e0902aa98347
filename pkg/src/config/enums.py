"""
This module defines enumerations shared across the pipeline.

Classes:
    - `TxKind`: On-chain event kinds.
    - `Relation`: The nine edge relations of a daily snapshot graph.
    - `EmbeddingSource`: Where an embedding table came from.
    - `FlagReason`: Why a sale was removed from price aggregation.
    - `Split`: Chronological dataset split names.
    - `Task`: Prediction task selector.
    - `Variant`: Model variants, ablations and baselines used by the run matrix.

Each enum stores its string form as the value so it round-trips through YAML and CSV.
"""
from enum import Enum


class TxKind(Enum):
    """
    Enum representing the on-chain event kinds.
    """
    MINT = 'mint'
    SALE = 'sale'
    TRANSFER = 'transfer'
    BURN = 'burn'


class Relation(Enum):
    """
    Enum representing the edge relations of a snapshot graph.

    SALE_WW and TRANSFER_WW connect wallet to wallet, every other relation
    connects a collection to a wallet.
    """
    SALE_WW = 'sale_ww'
    TRANSFER_WW = 'transfer_ww'
    MINT = 'mint'
    HOLD = 'hold'
    BURN = 'burn'
    SALE_FROM = 'sale_from'
    SALE_TO = 'sale_to'
    TRANSFER_IN = 'transfer_in'
    TRANSFER_OUT = 'transfer_out'

    @property
    def is_wallet_wallet(self) -> bool:
        return self in (Relation.SALE_WW, Relation.TRANSFER_WW)

    @property
    def has_feature(self) -> bool:
        """Sale relations carry the price, HOLD carries the owned count."""
        return self in (Relation.SALE_WW, Relation.SALE_FROM, Relation.SALE_TO, Relation.HOLD)


class EmbeddingSource(Enum):
    FILE = 'file'
    HASH_FALLBACK = 'hash_fallback'


class FlagReason(Enum):
    WASH = 'wash'
    OUTLIER = 'outlier'


class Split(Enum):
    TRAIN = 'train'
    VALIDATION = 'validation'
    TEST = 'test'


class Task(Enum):
    COLLECTION = 'collection'
    TOKEN = 'token'


class Variant(Enum):
    """
    Enum representing the variants evaluated by the run matrix.

    To add a new ablation, follow these steps:

    1. Add the variant name in all uppercase:
        <VARIANT_NAME> = '<variant-name>'
    2. Teach `src.model.ablation.AblationFlags.from_variant` what it switches off.
    """
    FULL = 'full'
    WO_HE = 'wo-HE'
    WO_TE = 'wo-TE'
    WO_RE = 'wo-RE'
    WO_IDE = 'wo-IDE'
    WO_CIF = 'wo-CIF'
    WO_TAR = 'wo-TAR'
    WO_CE = 'wo-CE'
    WO_TF = 'wo-TF'
    MAJORITY = 'majority'
    LOGREG = 'logreg'
    RANDOM_FOREST = 'random-forest'
    ALSTM = 'alstm'

    @property
    def is_baseline(self) -> bool:
        return self in (Variant.MAJORITY, Variant.LOGREG, Variant.RANDOM_FOREST, Variant.ALSTM)

    @property
    def is_token_only(self) -> bool:
        """Variants that only change the token-level head."""
        return self in (Variant.WO_CE, Variant.WO_TF)
