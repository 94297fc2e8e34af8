"""Few-shot classifiers over fixed text embeddings.

Two model families:

* label tuning (LT): per-label embedding vectors, initialized from the
  encoded label descriptions and fine-tuned with full-batch gradient
  descent on a cross-entropy objective over the example-label similarity
  matrix, anchored to the zero-shot initialization by an L2 penalty.
* logistic regression (LR): multinomial softmax regression on the
  embeddings with an L2 penalty on the weights (bias unregularized),
  matching common library defaults: objective
  ``mean CE + l2 * ||W||^2 / (2N)``.

Models are immutable values; training returns a new model. Retraining
after new annotations is always from scratch (zero-shot initialization
plus all accumulated labels) so results do not depend on arrival order.
For LR "from scratch" includes the label-description examples as training
rows, which keeps every class represented at tiny sample sizes and makes
the zero-example case coincide exactly with the zero-shot model.

Both trainers use gradient descent with step-halving: if a step would
increase the objective the step size is halved (persistently) and the
step retried, so recorded losses are non-increasing.
"""

import base64
import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from .corpus import LabelSet
from .encoder import Encoder, EncoderDescriptor
from .errors import ValidationError

MODEL_KINDS = ("lt", "lr")


@dataclass(frozen=True)
class Posterior:
    """Probability distribution over the label-set order."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValidationError("posterior entries must be >= 0 and sum to 1")
        object.__setattr__(self, "probs", p)

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.probs))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 0.05
    l2_to_init: float = 0.01
    scale: float = 10.0
    lr_l2: float = 1.0
    lr_step: float = 0.1
    max_iter: int = 500
    tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.max_iter < 0:
            raise ValidationError("iteration counts must be >= 0")
        for name in ("learning_rate", "scale", "lr_step"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.l2_to_init < 0 or self.lr_l2 < 0:
            raise ValidationError("regularization strengths must be >= 0")


@dataclass(frozen=True)
class LabelTuningModel:
    label_set: LabelSet
    encoder: EncoderDescriptor
    label_matrix: np.ndarray  # |L| x dim
    init_matrix: np.ndarray   # frozen zero-shot label embeddings
    scale: float

    @property
    def kind(self) -> str:
        return "lt"


@dataclass(frozen=True)
class LogRegModel:
    label_set: LabelSet
    encoder: EncoderDescriptor
    weights: np.ndarray  # |L| x dim
    bias: np.ndarray     # |L|
    l2: float

    @property
    def kind(self) -> str:
        return "lr"


@dataclass(frozen=True)
class TrainResult:
    model: "LabelTuningModel | LogRegModel"
    losses: tuple[float, ...]  # objective before training, then after each step


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _one_hot(y: np.ndarray, n_labels: int) -> np.ndarray:
    out = np.zeros((len(y), n_labels))
    out[np.arange(len(y)), y] = 1.0
    return out


def _check_labels(y: np.ndarray, n_labels: int):
    if len(y) and (y.min() < 0 or y.max() >= n_labels):
        raise ValidationError("label index out of range")


def lt_scores(model: LabelTuningModel, embeddings: np.ndarray) -> np.ndarray:
    return model.scale * embeddings @ model.label_matrix.T


def lt_loss_and_grad(label_matrix, embeddings, y, scale, l2_to_init, init_matrix):
    """Objective and analytic gradient of label tuning, exposed so the
    gradient can be checked against finite differences."""
    n = len(y)
    z = scale * embeddings @ label_matrix.T
    p = _softmax(z)
    ce = -np.mean(np.log(np.clip(p[np.arange(n), y], 1e-300, None)))
    diff = label_matrix - init_matrix
    loss = ce + l2_to_init * np.sum(diff * diff)
    grad = scale * (p - _one_hot(y, label_matrix.shape[0])).T @ embeddings / n
    grad = grad + 2.0 * l2_to_init * diff
    return loss, grad


def lt_fit(model: LabelTuningModel, embeddings: np.ndarray, y: np.ndarray,
           config: TrainConfig) -> TrainResult:
    """Full-batch gradient descent on the label matrix only."""
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValidationError("training needs at least one example")
    _check_labels(y, len(model.label_set))
    w = model.label_matrix.copy()
    step = config.learning_rate
    loss, grad = lt_loss_and_grad(w, embeddings, y, model.scale,
                                  config.l2_to_init, model.init_matrix)
    losses = [loss]
    for _ in range(config.epochs):
        while True:
            w_new = w - step * grad
            loss_new, grad_new = lt_loss_and_grad(w_new, embeddings, y, model.scale,
                                                  config.l2_to_init, model.init_matrix)
            if loss_new <= loss or step < 1e-12:
                break
            step /= 2.0
        if loss_new > loss:
            break  # stuck at numerical precision; keep the better iterate
        w, loss, grad = w_new, loss_new, grad_new
        losses.append(loss)
    return TrainResult(model=replace(model, label_matrix=w), losses=tuple(losses))


def lr_loss_and_grad(weights, bias, embeddings, y, l2):
    n = len(y)
    z = embeddings @ weights.T + bias
    p = _softmax(z)
    ce = -np.mean(np.log(np.clip(p[np.arange(n), y], 1e-300, None)))
    loss = ce + l2 * np.sum(weights * weights) / (2.0 * n)
    dz = (p - _one_hot(y, weights.shape[0])) / n
    grad_w = dz.T @ embeddings + (l2 / n) * weights
    grad_b = dz.sum(axis=0)
    return loss, grad_w, grad_b


def lr_fit(model: LogRegModel, embeddings: np.ndarray, y: np.ndarray,
           config: TrainConfig) -> TrainResult:
    """Gradient descent from zero weights; stops early when the gradient
    vanishes."""
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValidationError("training needs at least one example")
    _check_labels(y, len(model.label_set))
    w = np.zeros_like(model.weights)
    b = np.zeros_like(model.bias)
    step = config.lr_step
    loss, gw, gb = lr_loss_and_grad(w, b, embeddings, y, model.l2)
    losses = [loss]
    for _ in range(config.max_iter):
        if max(np.abs(gw).max(), np.abs(gb).max()) < config.tol:
            break
        while True:
            w_new, b_new = w - step * gw, b - step * gb
            loss_new, gw_new, gb_new = lr_loss_and_grad(w_new, b_new, embeddings, y, model.l2)
            if loss_new <= loss or step < 1e-12:
                break
            step /= 2.0
        if loss_new > loss:
            break
        w, b, loss, gw, gb = w_new, b_new, loss_new, gw_new, gb_new
        losses.append(loss)
    return TrainResult(model=replace(model, weights=w, bias=b), losses=tuple(losses))


def zero_shot_init(label_set: LabelSet, encoder: Encoder, model_kind: str,
                   config: TrainConfig = TrainConfig()):
    """Build the no-examples model from the label descriptions alone.

    LT uses the encoded descriptions directly as the label matrix; LR is
    trained on one (description, label) example per label.
    """
    if model_kind not in MODEL_KINDS:
        raise ValidationError(f"unknown model kind {model_kind!r}")
    desc_emb = encoder.encode_batch(list(label_set.descriptions))
    if model_kind == "lt":
        return LabelTuningModel(
            label_set=label_set,
            encoder=encoder.descriptor,
            label_matrix=desc_emb.copy(),
            init_matrix=desc_emb.copy(),
            scale=config.scale,
        )
    empty = LogRegModel(
        label_set=label_set,
        encoder=encoder.descriptor,
        weights=np.zeros((len(label_set), encoder.dim)),
        bias=np.zeros(len(label_set)),
        l2=config.lr_l2,
    )
    return lr_fit(empty, desc_emb, np.arange(len(label_set)), config).model


def train_embedded(model_kind: str, label_set: LabelSet, encoder_descriptor: EncoderDescriptor,
                   desc_emb: np.ndarray, embeddings: np.ndarray, y: np.ndarray,
                   config: TrainConfig = TrainConfig()):
    """Retrain from scratch given pre-embedded descriptions and examples.

    With no examples this returns the zero-shot model.
    """
    if model_kind not in MODEL_KINDS:
        raise ValidationError(f"unknown model kind {model_kind!r}")
    if model_kind == "lt":
        init = LabelTuningModel(
            label_set=label_set, encoder=encoder_descriptor,
            label_matrix=desc_emb.copy(), init_matrix=desc_emb.copy(),
            scale=config.scale,
        )
        if len(y) == 0:
            return init
        return lt_fit(init, embeddings, np.asarray(y, dtype=np.int64), config).model
    empty = LogRegModel(
        label_set=label_set, encoder=encoder_descriptor,
        weights=np.zeros((len(label_set), desc_emb.shape[1])),
        bias=np.zeros(len(label_set)), l2=config.lr_l2,
    )
    all_emb = np.vstack([desc_emb, embeddings]) if len(y) else desc_emb
    all_y = np.concatenate([np.arange(len(label_set)), np.asarray(y, dtype=np.int64)])
    return lr_fit(empty, all_emb, all_y, config).model


def train_from_scratch(model_kind: str, label_set: LabelSet, encoder: Encoder,
                       examples, config: TrainConfig = TrainConfig()):
    """Encode (instance, label) pairs and retrain from the zero-shot state."""
    desc_emb = encoder.encode_batch(list(label_set.descriptions))
    if examples:
        emb = np.stack([encoder.encode_instance(inst) for inst, _ in examples])
        y = np.array([label_set.index_of(label) for _, label in examples], dtype=np.int64)
    else:
        emb = np.zeros((0, encoder.dim))
        y = np.zeros(0, dtype=np.int64)
    return train_embedded(model_kind, label_set, encoder.descriptor, desc_emb, emb, y, config)


def predict_proba(model, embeddings: np.ndarray) -> np.ndarray:
    """Posterior matrix (one row per embedding, label-set order)."""
    if embeddings.ndim != 2 or embeddings.shape[1] != model.encoder.dim:
        raise ValidationError("embedding dimension does not match the model encoder")
    if model.kind == "lt":
        return _softmax(lt_scores(model, embeddings))
    return _softmax(embeddings @ model.weights.T + model.bias)


def predict_labels(model, embeddings: np.ndarray) -> np.ndarray:
    """Argmax label indices; ties resolve to the lowest label index."""
    return np.argmax(predict_proba(model, embeddings), axis=1)


def predict(model, encoder: Encoder, instances) -> list[Posterior]:
    if encoder.descriptor.encoder_id != model.encoder.encoder_id:
        raise ValidationError(
            f"encoder {encoder.descriptor.encoder_id!r} does not match the model's "
            f"{model.encoder.encoder_id!r}"
        )
    if not instances:
        return []
    probs = predict_proba(model, encoder.encode_instances(instances))
    return [Posterior(row) for row in probs]


# serialization: versioned JSON with matrices as base64 little-endian f32,
# row-major; round-trips are lossless at float32 precision

_FORMAT = 1


def _encode_matrix(arr: np.ndarray) -> dict:
    data = np.asarray(arr, dtype="<f4").tobytes()
    return {"shape": list(arr.shape), "data": base64.b64encode(data).decode("ascii")}


def _decode_matrix(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(obj["shape"])


def dumps_model(model) -> bytes:
    doc = {
        "format": _FORMAT,
        "kind": model.kind,
        "label_set": [list(e) for e in model.label_set.entries],
        "encoder_id": model.encoder.encoder_id,
        "dim": model.encoder.dim,
    }
    if model.kind == "lt":
        doc["scale"] = model.scale
        doc["label_matrix"] = _encode_matrix(model.label_matrix)
        doc["init_matrix"] = _encode_matrix(model.init_matrix)
    else:
        doc["l2"] = model.l2
        doc["weights"] = _encode_matrix(model.weights)
        doc["bias"] = _encode_matrix(model.bias)
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def loads_model(data: bytes):
    doc = json.loads(data.decode("utf-8"))
    if doc.get("format") != _FORMAT:
        raise ValidationError(f"unsupported model format {doc.get('format')!r}")
    label_set = LabelSet(tuple((n, d) for n, d in doc["label_set"]))
    descriptor = EncoderDescriptor(encoder_id=doc["encoder_id"], dim=doc["dim"])
    if doc["kind"] == "lt":
        return LabelTuningModel(
            label_set=label_set, encoder=descriptor,
            label_matrix=_decode_matrix(doc["label_matrix"]),
            init_matrix=_decode_matrix(doc["init_matrix"]),
            scale=doc["scale"],
        )
    return LogRegModel(
        label_set=label_set, encoder=descriptor,
        weights=_decode_matrix(doc["weights"]),
        bias=_decode_matrix(doc["bias"]).reshape(-1),
        l2=doc["l2"],
    )


def save_model(model, path: str):
    with open(path, "wb") as fh:
        fh.write(dumps_model(model))


def load_model(path: str):
    with open(path, "rb") as fh:
        return loads_model(fh.read())


def model_digest(model) -> str:
    return hashlib.sha256(dumps_model(model)).hexdigest()
