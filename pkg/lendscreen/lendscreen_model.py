"""Screening model: sequence encoder, demographic encoder, fusion and heads.

The sequence encoder maps the concatenated application and repayment features
of every loan to `hidden_dim` through one of two linear heads, chosen per loan
by whether the previous loan's repayment was observed, adds a learned
positional row, and runs a causal single-head transformer stack (or a
recurrent cell). The demographic MLP output is added to every position and
the sum is projected onto the unit sphere. A label head and a domain head
(behind gradient reversal) read the fused vector.
"""

import dataclasses
import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .lendscreen_data import SEQUENCE_FEATURES, FeatureStats, LoanBatch
from .lendscreen_enums import BackboneKind, Mode
from .lendscreen_errors import CheckpointError, LendScreenError, ShapeError
from .lendscreen_tensor import (DropoutMask, Tensor, as_tensor, dropout,
                                embedding_lookup, grad_reverse, layer_norm,
                                masked_fill, relu, sigmoid, softmax, sqrt,
                                stack, tanh)
from .lendscreen_types import ModelConfig
from .utils import JSONSerial, atomic_write_text, derive_seed, make_rng


logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 'lendscreen-checkpoint/1'

_GATES = {
    BackboneKind.RNN: ('',),
    BackboneKind.GRU: ('_z', '_r', '_n'),
    BackboneKind.LSTM: ('_i', '_f', '_g', '_o'),
}


def _param_shapes(config: ModelConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    hidden, ff = config.hidden_dim, config.feedforward_dim
    width = len(SEQUENCE_FEATURES)
    shapes = [
        ('encoder.W0', (width, hidden)), ('encoder.b0', (hidden,)),
        ('encoder.W1', (width, hidden)), ('encoder.b1', (hidden,)),
        ('encoder.pos', (config.max_sequence_length, hidden)),
    ]
    if config.backbone == BackboneKind.TRANSFORMER:
        for i in range(config.n_transformer_layers):
            prefix = f'layer{i}.'
            shapes += [
                (prefix + 'W_Q', (hidden, hidden)),
                (prefix + 'W_K', (hidden, hidden)),
                (prefix + 'W_V', (hidden, hidden)),
                (prefix + 'W_O', (hidden, hidden)), (prefix + 'b_O', (hidden,)),
                (prefix + 'ln1.gain', (hidden,)), (prefix + 'ln1.bias', (hidden,)),
                (prefix + 'ff.W0', (hidden, ff)), (prefix + 'ff.b0', (ff,)),
                (prefix + 'ff.W1', (ff, hidden)), (prefix + 'ff.b1', (hidden,)),
                (prefix + 'ln2.gain', (hidden,)), (prefix + 'ln2.bias', (hidden,)),
            ]
    else:
        for gate in _GATES[config.backbone]:
            shapes += [(f'recurrent.W{gate}', (hidden, hidden)),
                       (f'recurrent.U{gate}', (hidden, hidden)),
                       (f'recurrent.b{gate}', (hidden,))]
    for head, n_in, n_out in (('demographics', config.n_demographic_features,
                               hidden),
                              ('label', hidden, 2), ('domain', hidden, 2)):
        shapes += [(f'{head}.W0', (n_in, hidden)), (f'{head}.b0', (hidden,)),
                   (f'{head}.W1', (hidden, n_out)), (f'{head}.b1', (n_out,))]
    return shapes


def parameter_count(config: ModelConfig) -> int:
    """65,412 for the default transformer configuration."""
    return int(sum(np.prod(shape) for _, shape in _param_shapes(config)))


class ModelParams(dict):
    """Named parameter tensors, in construction order."""

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int) -> 'ModelParams':
        rng = make_rng(seed, 'params')
        params = cls()
        for name, shape in _param_shapes(config):
            if name.endswith('.gain'):
                data = np.ones(shape)
            elif name == 'encoder.pos':
                data = 0.02 * rng.standard_normal(shape)
            elif len(shape) == 1:
                data = np.zeros(shape)
            else:
                bound = 1.0 / np.sqrt(shape[0])
                data = rng.uniform(-bound, bound, size=shape)
            params[name] = Tensor(data, requires_grad=True, name=name)
        return params

    def group(self, prefix: str) -> Dict[str, Tensor]:
        return {name: tensor for name, tensor in self.items()
                if name.startswith(prefix)}

    def count(self) -> int:
        return int(sum(tensor.size for tensor in self.values()))

    def zero_grad(self):
        for tensor in self.values():
            tensor.zero_grad()

    def to_dict(self) -> dict:
        return {name: {'shape': list(tensor.shape),
                       'data': tensor.data.reshape(-1).tolist()}
                for name, tensor in self.items()}

    @classmethod
    def from_dict(cls, values: dict) -> 'ModelParams':
        params = cls()
        for name, entry in values.items():
            data = np.asarray(entry['data'], dtype=np.float64).reshape(
                entry['shape'])
            params[name] = Tensor(data, requires_grad=True, name=name)
        return params


# --------------------------------------------------------------- operations

def _linear(x: Tensor, params: Dict[str, Tensor], prefix: str, layer: int):
    return x @ params[f'{prefix}.W{layer}'] + params[f'{prefix}.b{layer}']


def _mlp(x: Tensor, params: Dict[str, Tensor], prefix: str) -> Tensor:
    return _linear(relu(_linear(x, params, prefix, 0)), params, prefix, 1)


def initial_encode(C, S, params: Dict[str, Tensor],
                   positions: Optional[np.ndarray] = None) -> Tensor:
    """h = (1−S)⊙(C·W0+b0) + S⊙(C·W1+b1) + positional row t."""
    C = as_tensor(C)
    S = np.asarray(S, dtype=np.float64)
    if C.ndim != 3 or C.shape[-1] != params['encoder.W0'].shape[0]:
        raise ShapeError("sequence features must be batch×T×width",
                         C.shape, params['encoder.W0'].shape)
    if S.shape != C.shape[:2]:
        raise ShapeError("observability must be batch×T", C.shape[:2], S.shape)
    if not np.all((S == 0.0) | (S == 1.0)):
        raise LendScreenError("observability values must be 0 or 1")
    if positions is None:
        positions = np.broadcast_to(np.arange(C.shape[1]), S.shape)
    gate = S[..., None]
    unseen = _linear(C, params, 'encoder', 0) * (1.0 - gate)
    seen = _linear(C, params, 'encoder', 1) * gate
    return unseen + seen + embedding_lookup(params['encoder.pos'], positions)


def attention_mask(padding_mask: np.ndarray, causal: bool) -> np.ndarray:
    """batch×T×T boolean; True where query t may attend to key s."""
    padding_mask = np.asarray(padding_mask, dtype=bool)
    allowed = np.broadcast_to(padding_mask[:, None, :],
                              padding_mask.shape + padding_mask.shape[-1:])
    if causal:
        width = padding_mask.shape[-1]
        allowed = allowed & np.tril(np.ones((width, width), dtype=bool))
    return allowed


def attention(h: Tensor, layer: Dict[str, Tensor], padding_mask: np.ndarray,
              causal: bool = True, prefix: str = '') -> Tensor:
    """Single-head scaled dot-product attention; returns softmax(QKᵀ/√d)·V."""
    query = h @ layer[prefix + 'W_Q']
    key = h @ layer[prefix + 'W_K']
    value = h @ layer[prefix + 'W_V']
    allowed = attention_mask(padding_mask, causal)
    if not allowed.any(axis=-1).all():
        raise LendScreenError("attention row has every key masked")
    scores = (query @ key.transpose()) / float(np.sqrt(query.shape[-1]))
    weights = softmax(masked_fill(scores, ~allowed, -np.inf), axis=-1)
    return weights @ value


def transformer_layer(h: Tensor, layer: Dict[str, Tensor],
                      padding_mask: np.ndarray, causal: bool = True,
                      mask: Optional[DropoutMask] = None, training: bool = False,
                      prefix: str = '', eps: float = 1e-5) -> Tensor:
    """Add&Norm over attention, feedforward, residual layer norm, dropout."""
    attended = (attention(h, layer, padding_mask, causal, prefix)
                @ layer[prefix + 'W_O'] + layer[prefix + 'b_O'])
    x = layer_norm(h + attended, layer[prefix + 'ln1.gain'],
                   layer[prefix + 'ln1.bias'], eps)
    inner = relu(x @ layer[prefix + 'ff.W0'] + layer[prefix + 'ff.b0'])
    out = layer_norm(x + inner @ layer[prefix + 'ff.W1'] + layer[prefix + 'ff.b1'],
                     layer[prefix + 'ln2.gain'], layer[prefix + 'ln2.bias'], eps)
    return dropout(out, mask, training)


def _rnn_step(x, state, params):
    return tanh(x @ params['recurrent.W'] + state @ params['recurrent.U']
                + params['recurrent.b']), None


def _gru_step(x, state, params):
    update = sigmoid(x @ params['recurrent.W_z'] + state @ params['recurrent.U_z']
                     + params['recurrent.b_z'])
    reset = sigmoid(x @ params['recurrent.W_r'] + state @ params['recurrent.U_r']
                    + params['recurrent.b_r'])
    candidate = tanh(x @ params['recurrent.W_n']
                     + reset * (state @ params['recurrent.U_n'])
                     + params['recurrent.b_n'])
    return (1.0 - update) * candidate + update * state, None


def _lstm_step(x, state, params, cell):
    def gate(name):
        return (x @ params[f'recurrent.W_{name}']
                + state @ params[f'recurrent.U_{name}']
                + params[f'recurrent.b_{name}'])

    cell = sigmoid(gate('f')) * cell + sigmoid(gate('i')) * tanh(gate('g'))
    return sigmoid(gate('o')) * tanh(cell), cell


def recurrent_encode(h: Tensor, params: Dict[str, Tensor],
                     backbone: BackboneKind) -> Tensor:
    """Single-layer recurrent pass over batch×T×hidden, from a zero state.

    `h` is the output of initial_encode(C, S, params): the embedded loan
    features with the observability flag and positions already added. The
    cell weights come from `params` under the `recurrent.` prefix.
    """
    backbone = BackboneKind(backbone)
    if backbone == BackboneKind.TRANSFORMER:
        raise LendScreenError("recurrent_encode needs an rnn, lstm or gru "
                              "backbone")
    batch, width, hidden = h.shape
    state = Tensor._wrap(np.zeros((batch, hidden)))
    cell = Tensor._wrap(np.zeros((batch, hidden)))
    outputs = []
    for t in range(width):
        x = h[:, t, :]
        if backbone == BackboneKind.RNN:
            state, _ = _rnn_step(x, state, params)
        elif backbone == BackboneKind.GRU:
            state, _ = _gru_step(x, state, params)
        else:
            state, cell = _lstm_step(x, state, params, cell)
        outputs.append(state)
    return stack(outputs, axis=1)


def encode_demographics(D, params: Dict[str, Tensor]) -> Tensor:
    D = as_tensor(D)
    expected = params['demographics.W0'].shape[0]
    if D.ndim != 2 or D.shape[1] != expected:
        raise ShapeError("demographic width differs", D.shape, (None, expected))
    return _mlp(D, params, 'demographics')


def fuse(f_A: Tensor, f_D: Tensor) -> Tensor:
    """Element-wise sum projected onto the unit sphere."""
    total = as_tensor(f_A) + as_tensor(f_D)
    squared = (total * total).sum(axis=-1, keepdims=True)
    if np.any(squared.data == 0.0):
        raise LendScreenError("cannot normalize a zero-norm fused vector")
    return total / sqrt(squared)


def label_predictor(f: Tensor, params: Dict[str, Tensor]) -> Tensor:
    return _mlp(f, params, 'label')


def domain_classifier(f: Tensor, params: Dict[str, Tensor],
                      grl_lambda: float = 1.0) -> Tensor:
    return _mlp(grad_reverse(f, grl_lambda), params, 'domain')


@dataclass
class ForwardOutput:
    f: Tensor
    label_logits: Tensor
    domain_logits: Tensor
    f_A: Tensor
    f_D: Tensor


class ScreeningModel(object):
    """Parameters plus the forward pass of the full screening network."""

    def __init__(self, config: ModelConfig, params: ModelParams = None,
                 seed: int = 0):
        self.config = config.validate()
        self.params = (params if params is not None
                       else ModelParams.initialize(config, seed))
        expected = dict(_param_shapes(config))
        actual = {name: tensor.shape for name, tensor in self.params.items()}
        if expected != actual:
            missing = sorted(set(expected) ^ set(actual))
            wrong = sorted(name for name in set(expected) & set(actual)
                           if tuple(expected[name]) != tuple(actual[name]))
            raise CheckpointError(
                f"parameters do not match the model config (names: {missing}, "
                f"shapes: {wrong})")

    def _dropout(self, dropout_seed: Optional[int], site: str,
                 shape: Tuple[int, ...], training: bool) -> Optional[DropoutMask]:
        if not training or dropout_seed is None:
            return None
        return DropoutMask.sample(derive_seed(dropout_seed, site), shape,
                                  self.config.dropout_keep_probability)

    def encode_sequence(self, C, S, padding_mask: np.ndarray,
                        positions: np.ndarray = None,
                        mode: Mode = Mode.EVAL,
                        dropout_seed: Optional[int] = None) -> Tensor:
        training = Mode(mode) == Mode.TRAIN
        h = initial_encode(C, S, self.params, positions)
        h = dropout(h, self._dropout(dropout_seed, 'embedding', h.shape,
                                     training), training)
        if self.config.backbone != BackboneKind.TRANSFORMER:
            out = recurrent_encode(h, self.params, self.config.backbone)
            return dropout(out, self._dropout(dropout_seed, 'recurrent',
                                              out.shape, training), training)
        for i in range(self.config.n_transformer_layers):
            h = transformer_layer(
                h, self.params, padding_mask, self.config.causal,
                self._dropout(dropout_seed, f'layer{i}', h.shape, training),
                training, prefix=f'layer{i}.', eps=self.config.layer_norm_eps)
        return h

    def encode_demographics(self, D) -> Tensor:
        return encode_demographics(D, self.params)

    def forward(self, batch: LoanBatch, mode: Mode = Mode.EVAL,
                dropout_seed: Optional[int] = None) -> ForwardOutput:
        f_A = self.encode_sequence(batch.C, batch.S, batch.mask,
                                   batch.positions, mode, dropout_seed)
        f_D = self.encode_demographics(batch.D)
        f = fuse(f_A, f_D.reshape(f_D.shape[0], 1, f_D.shape[1]))
        return ForwardOutput(
            f=f,
            label_logits=label_predictor(f, self.params),
            domain_logits=domain_classifier(f, self.params,
                                            self.config.grl_lambda),
            f_A=f_A,
            f_D=f_D)

    __call__ = forward

    def parameter_count(self) -> int:
        return self.params.count()


# -------------------------------------------------------------- checkpoints

def save_checkpoint(path: str, model: ScreeningModel, stats: FeatureStats,
                    metadata: dict = None) -> str:
    document = {
        'format': CHECKPOINT_FORMAT,
        'model_config': dataclasses.asdict(model.config),
        'feature_stats': stats.to_dict(),
        'metadata': metadata or {},
        'params': model.params.to_dict(),
    }
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    atomic_write_text(path, json.dumps(document, cls=JSONSerial))
    logger.info(f"Wrote checkpoint with {model.parameter_count()} parameters "
                f"to {path}")
    return path


def load_checkpoint(path: str, expected_config: ModelConfig = None
                    ) -> Tuple[ScreeningModel, FeatureStats, dict]:
    """Returns (model, feature stats, metadata); parameters round-trip
    bit-exactly."""
    try:
        with open(path, encoding='utf-8') as handle:
            document = json.load(handle)
    except (OSError, json.JSONDecodeError) as error:
        logger.error(f"Unreadable checkpoint {path}: {error}")
        raise CheckpointError(f"cannot read checkpoint {path}: {error}")
    if not isinstance(document, dict) or document.get('format') != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    try:
        config = ModelConfig(**document['model_config'])
        stats = FeatureStats.from_dict(document['feature_stats'])
        params = ModelParams.from_dict(document['params'])
    except (KeyError, TypeError, ValueError) as error:
        raise CheckpointError(f"malformed checkpoint {path}: {error}")
    if expected_config is not None:
        expected = dataclasses.asdict(expected_config.validate())
        found = dataclasses.asdict(config.validate())
        if expected != found:
            differing = sorted(key for key in expected
                               if expected[key] != found.get(key))
            raise CheckpointError(
                f"checkpoint config differs from the run config in {differing}")
    return ScreeningModel(config, params), stats, document.get('metadata', {})
