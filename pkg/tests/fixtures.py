"""Small hand-built histories and tiny configs shared by the unittests."""

from lendscreen.lendscreen_data import generate_population
from lendscreen.lendscreen_types import (BorrowerHistory, GeneratorConfig,
                                         LossWeights, ModelConfig, TrainConfig)

DEMOGRAPHICS = {'living_city_dpi': 42000.0, 'monthly_income_level': 3.0,
                'education_level': 2.0, 'homeownership': 0,
                'covariate_1': 0.1, 'covariate_2': -0.3}


def make_history(borrower_id, labels, amounts=None, overdue=None,
                 demographics=None) -> BorrowerHistory:
    """Repayment t reflects loan t-1 and is zeroed when that loan was
    rejected."""
    length = len(labels)
    amounts = amounts or [450.0] * length
    overdue = overdue or [5.0] * length
    observability = [0] + [int(label != -1) for label in labels[:-1]]
    repayments = []
    for t in range(length):
        if observability[t]:
            repayments.append({'overdue_days': overdue[t - 1],
                               'positive_attitude_proportion': 0.8,
                               'assisted_proportion': 0.1})
        else:
            repayments.append({'overdue_days': 0.0,
                               'positive_attitude_proportion': 0.0,
                               'assisted_proportion': 0.0})
    return BorrowerHistory(
        borrower_id=borrower_id,
        demographics=dict(demographics or DEMOGRAPHICS),
        applications=[{'amount': amount, 'annual_interest_rate': 0.18,
                       'term_months': 6} for amount in amounts],
        repayments=repayments,
        labels=list(labels),
        observability=observability,
        latent_creditworthiness=0.0)


def tiny_generator(**changes) -> GeneratorConfig:
    values = dict(n_borrowers=80, max_history_length=6, seed=3)
    values.update(changes)
    return GeneratorConfig(**values)


def tiny_split(**changes):
    return generate_population(tiny_generator(**changes))


def tiny_model(**changes) -> ModelConfig:
    values = dict(hidden_dim=8, n_transformer_layers=1, feedforward_dim=8,
                  max_sequence_length=6)
    values.update(changes)
    return ModelConfig(**values)


def tiny_training(**changes) -> TrainConfig:
    values = dict(batch_size=16, epochs=2, learning_rate=0.005,
                  max_contrastive_pairs=32, eval_batch_size=64,
                  diagnostic_sample=40, weights=LossWeights())
    values.update(changes)
    return TrainConfig(**values)
