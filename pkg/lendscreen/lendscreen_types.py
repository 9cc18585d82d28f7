from dataclasses import dataclass, field, replace
from typing import Any, Dict, FrozenSet, List, Optional, Tuple, TypedDict

import numpy as np
import pandas as pd

from .lendscreen_enums import BackboneKind, Variant
from .lendscreen_errors import ConfigError


LoanRef = Tuple[str, int]


class DemographicVector(TypedDict):
    living_city_dpi: float
    monthly_income_level: float
    education_level: float
    homeownership: int
    covariate_1: float
    covariate_2: float


DEMOGRAPHIC_FIELDS: Tuple[str, ...] = tuple(DemographicVector.__annotations__)
INCLUSION_FIELDS: Tuple[str, ...] = ('living_city_dpi', 'monthly_income_level',
                                     'education_level', 'homeownership')


class LoanApplication(TypedDict):
    amount: float
    annual_interest_rate: float
    term_months: int


class RepaymentRecord(TypedDict):
    overdue_days: float
    positive_attitude_proportion: float
    assisted_proportion: float


REPAYMENT_FIELDS: Tuple[str, ...] = tuple(RepaymentRecord.__annotations__)


class BorrowerHistory(TypedDict):
    borrower_id: str
    demographics: DemographicVector
    applications: List[LoanApplication]
    # repayments[t] describes loan t-1; all zero when it was not approved
    repayments: List[RepaymentRecord]
    labels: List[int]
    observability: List[int]
    latent_creditworthiness: float


BORROWER_FIELDS: Tuple[str, ...] = tuple(BorrowerHistory.__annotations__)


class RunManifest(TypedDict):
    run_id: str
    command: str
    config: Dict[str, Any]
    seed: int
    started_at: str
    finished_at: str
    outputs: Dict[str, str]
    metrics: Dict[str, Any]


def _require(condition: bool, field_name: str, message: str):
    if not condition:
        raise ConfigError(field_name, message)


@dataclass
class GeneratorConfig:
    n_borrowers: int = 4000
    test_fraction: float = 0.2
    repeat_applicant_fraction: float = 0.3837
    mean_repeat_applications: float = 4.21
    max_history_length: int = 30
    target_approval_rate: float = 0.4368
    bias_strength: float = 1.0
    # share of latent creditworthiness carried by the socioeconomic index
    socioeconomic_weight: float = 0.35
    screener_noise: float = 1.0
    prior_attitude_weight: float = 1.0
    base_default_rate: float = 0.2
    label_noise: float = 0.02
    seed: int = 0

    def validate(self) -> 'GeneratorConfig':
        _require(isinstance(self.n_borrowers, int) and self.n_borrowers >= 10,
                 'n_borrowers', 'must be an integer >= 10')
        _require(0.0 < self.test_fraction < 1.0, 'test_fraction',
                 'must be in (0, 1)')
        _require(0.0 <= self.repeat_applicant_fraction <= 1.0,
                 'repeat_applicant_fraction', 'must be in [0, 1]')
        _require(self.mean_repeat_applications > 2.0,
                 'mean_repeat_applications', 'must exceed 2')
        _require(isinstance(self.max_history_length, int)
                 and self.max_history_length >= 2,
                 'max_history_length', 'must be an integer >= 2')
        _require(0.0 < self.target_approval_rate < 1.0,
                 'target_approval_rate', 'must be in (0, 1)')
        _require(self.bias_strength >= 0.0, 'bias_strength', 'must be >= 0')
        _require(0.0 <= self.socioeconomic_weight < 1.0,
                 'socioeconomic_weight', 'must be in [0, 1)')
        _require(self.screener_noise >= 0.0, 'screener_noise', 'must be >= 0')
        _require(self.prior_attitude_weight >= 0.0, 'prior_attitude_weight',
                 'must be >= 0')
        _require(0.0 < self.base_default_rate < 1.0, 'base_default_rate',
                 'must be in (0, 1)')
        _require(0.0 <= self.label_noise < 0.5, 'label_noise',
                 'must be in [0, 0.5)')
        _require(isinstance(self.seed, int), 'seed', 'must be an integer')
        return self


@dataclass
class ModelConfig:
    hidden_dim: int = 64
    n_transformer_layers: int = 2
    feedforward_dim: int = 64
    dropout_keep_probability: float = 0.9
    max_sequence_length: int = 20
    backbone: BackboneKind = BackboneKind.TRANSFORMER
    n_demographic_features: int = len(DEMOGRAPHIC_FIELDS)
    grl_lambda: float = 1.0
    layer_norm_eps: float = 1e-5
    causal: bool = True

    def validate(self) -> 'ModelConfig':
        _require(self.hidden_dim > 0, 'hidden_dim', 'must be > 0')
        _require(self.n_transformer_layers >= 0, 'n_transformer_layers',
                 'must be >= 0')
        _require(self.feedforward_dim > 0, 'feedforward_dim', 'must be > 0')
        _require(0.0 < self.dropout_keep_probability <= 1.0,
                 'dropout_keep_probability', 'must be in (0, 1]')
        _require(self.max_sequence_length >= 1, 'max_sequence_length',
                 'must be >= 1')
        _require(self.backbone in tuple(BackboneKind), 'backbone',
                 f"must be one of {[kind.value for kind in BackboneKind]}")
        _require(self.n_demographic_features > 0, 'n_demographic_features',
                 'must be > 0')
        self.backbone = BackboneKind(self.backbone)
        return self


@dataclass
class LossWeights:
    w_y: float = 1.0
    w_cl: float = 0.1
    wd_max: float = 0.1
    gamma: float = 0.001
    tau: float = 0.1
    # optimizer steps taken so far; global across epochs
    step: int = 0

    def validate(self) -> 'LossWeights':
        _require(self.w_y >= 0.0, 'w_y', 'must be >= 0')
        _require(self.w_cl >= 0.0, 'w_cl', 'must be >= 0')
        _require(self.wd_max >= 0.0, 'wd_max', 'must be >= 0')
        _require(self.gamma >= 0.0, 'gamma', 'must be >= 0')
        _require(self.tau > 0.0, 'tau', 'must be > 0')
        return self


@dataclass
class TrainConfig:
    batch_size: int = 256
    epochs: int = 15
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    use_cl: bool = True
    use_da: bool = True
    transductive: bool = False
    seed: int = 0
    approval_threshold: float = 0.5
    max_contrastive_pairs: int = 512
    eval_batch_size: int = 512
    diagnostic_sample: int = 1000
    weights: LossWeights = field(default_factory=LossWeights)

    def validate(self) -> 'TrainConfig':
        _require(self.batch_size >= 1, 'batch_size', 'must be >= 1')
        _require(not self.use_cl or self.batch_size >= 2, 'batch_size',
                 'must be >= 2 when contrastive learning is on')
        _require(self.epochs >= 1, 'epochs', 'must be >= 1')
        _require(self.learning_rate > 0.0, 'learning_rate', 'must be > 0')
        _require(0.0 <= self.beta1 < 1.0, 'beta1', 'must be in [0, 1)')
        _require(0.0 <= self.beta2 < 1.0, 'beta2', 'must be in [0, 1)')
        _require(0.0 <= self.approval_threshold <= 1.0, 'approval_threshold',
                 'must be in [0, 1]')
        _require(self.max_contrastive_pairs >= 1, 'max_contrastive_pairs',
                 'must be >= 1')
        _require(self.eval_batch_size >= 1, 'eval_batch_size', 'must be >= 1')
        _require(self.diagnostic_sample >= 2, 'diagnostic_sample',
                 'must be >= 2')
        self.weights.validate()
        return self

    def for_variant(self, variant: Variant) -> 'TrainConfig':
        variant = Variant(variant)
        return replace(self, use_cl=variant.use_cl, use_da=variant.use_da,
                       weights=replace(self.weights))

    @property
    def variant(self) -> Variant:
        for variant in Variant:
            if variant.use_cl == self.use_cl and variant.use_da == self.use_da:
                return variant


@dataclass
class ProfitModel:
    """Non-default loans earn amount·rate·term/12·interest_share; defaults
    lose loss_given_default·amount."""
    interest_share: float = 1.0
    loss_given_default: float = 1.0

    def validate(self) -> 'ProfitModel':
        _require(self.interest_share > 0.0, 'interest_share', 'must be > 0')
        _require(self.loss_given_default > 0.0, 'loss_given_default',
                 'must be > 0')
        return self


@dataclass(frozen=True)
class DatasetSplit:
    """Train histories carry labels only for approved loans; every test loan
    is labeled. `revealed` lists test loans moved into the labeled pool."""
    train: Tuple[BorrowerHistory, ...]
    test: Tuple[BorrowerHistory, ...]
    generator_config: GeneratorConfig
    revealed: FrozenSet[LoanRef] = frozenset()

    def test_loans(self) -> List[LoanRef]:
        return [(history['borrower_id'], position)
                for history in self.test
                for position in range(len(history['labels']))]

    def evaluation_loans(self) -> List[LoanRef]:
        return [loan for loan in self.test_loans()
                if loan not in self.revealed]


@dataclass
class PcaResult:
    coordinates: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray


@dataclass
class MetricsReport:
    aucroc: float
    profit: float
    n_approved: int
    approval_rate: float
    inclusion: Dict[str, float]
    alignment: float
    uniformity: float
    length_bin_auc: Dict[str, float]
    n_evaluated: int
    screened_profit: float
    revealed_profit: float = 0.0
    pca: Optional[pd.DataFrame] = None

    def summary(self) -> Dict[str, Any]:
        row = {
            'aucroc': self.aucroc,
            'profit': self.profit,
            'screened_profit': self.screened_profit,
            'revealed_profit': self.revealed_profit,
            'n_evaluated': self.n_evaluated,
            'n_approved': self.n_approved,
            'approval_rate': self.approval_rate,
            'alignment': self.alignment,
            'uniformity': self.uniformity,
        }
        for name, value in self.inclusion.items():
            row[f'{name}_mean'] = value
        return row
