"""School district consolidation: matching, estimation and welfare tools."""
from .market import (
    Market,
    MarketError,
    Matching,
    MatchingScheme,
    RankData,
    Violation,
    absolute_rank,
    relative_rank,
    restrict_to_district,
    validate_market,
)
from .matching import (
    BlockingPair,
    WelfareClassification,
    adversarial_partition,
    classify_welfare,
    compute_scheme,
    enumerate_stable,
    is_stable,
    rank_statistics,
    sosm,
)

__version__ = "0.1.0"
