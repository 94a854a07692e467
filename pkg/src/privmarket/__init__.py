"""Privacy-aware payoffs for crowdsensing data markets.

Users submit noise-anonymized data; a mediator pays each one its marginal
contribution to the accuracy of a model trained on everything. Users can pool
their data under one coalition identity and split the coalition payoff by
Shapley value.
"""

__version__ = "0.1.0"

from .anonymizer import (
    GaussianNoiseSpec,
    anonymize,
    build_market,
    generalize_identity,
    k_anonymity_level,
    reanonymize,
    t_closeness_level,
)
from .core import Coalition, Dataset, MarketState, Record, Submission, leave_out, union
from .experiments import (
    SweepConfig,
    SweepResult,
    coalition_experiment,
    emit_report,
    privacy_sweep,
    standalone_accuracy,
)
from .ingestion import SplitSpec, parse_raw, split, windowize
from .mechanism import (
    PayoffClass,
    PayoffReport,
    ShapleyResult,
    coalition_char_fn,
    coalition_payoff,
    filter_negative_contributors,
    payoffs_all,
    shapley_exact,
    shapley_monte_carlo,
    vcg_payoff,
)
from .oracle import (
    AdditiveOracle,
    ClassifierOracle,
    DiminishingOracle,
    HarmOracle,
    make_oracle,
    train_classifier,
)
