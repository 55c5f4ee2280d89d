"""Classifier with a split final stage: affine embedding, then cosine matching.

The final classifier is two layers. The embedding layer maps extractor
features to an embedding space; the matching layer holds one fingerprint row
per class and scores a sample by the cosine between its embedded feature and
each fingerprint. A regular dense head (plain affine, with bias) is kept as
the comparison variant.

Raw cosines live in [-1, 1], which is too flat for cross-entropy to train
quickly, so probabilities are taken as softmax(temperature * scores). The
default temperature of 2 (recorded with every model and report) both speeds
training and forces wide score margins at convergence, which is what drives
fingerprints toward maximal separation. The regular dense head produces
unbounded logits and uses temperature 1.
"""

from __future__ import annotations

import numpy as np

from . import engine as en
from .engine import Tensor

DEFAULT_TEMPERATURE = 2.0
REGULAR_HEAD_TEMPERATURE = 1.0
INPUT_SHAPE = (32, 32, 3)


def he_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)


def bias_init(rng: np.random.Generator, fan_in: int, size: int) -> np.ndarray:
    # small nonzero biases keep embeddings away from exact zero columns
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size)


def classify(scores: Tensor, temperature: float) -> Tensor:
    """Column-wise class probabilities: softmax of temperature-scaled scores."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return en.softmax(en.scale(scores, temperature))


def cosine_match(embedded: Tensor, fingerprints: Tensor) -> Tensor:
    """Cosine of every (fingerprint row, embedded column) pair: (C, q) scores."""
    return en.matmul(en.unit_rows(fingerprints), en.unit_cols(embedded))


class EmbeddingLayer:
    """Affine map from extractor features to the embedding space."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = en.parameter(weight)
        self.bias = en.parameter(bias)

    @classmethod
    def create(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "EmbeddingLayer":
        return cls(he_init(rng, in_dim, (out_dim, in_dim)), bias_init(rng, in_dim, out_dim))

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def forward(self, features: Tensor) -> Tensor:
        return en.bias_add(en.matmul(self.weight, features), self.bias)

    def params(self) -> dict[str, Tensor]:
        return {"embed.w": self.weight, "embed.b": self.bias}


class ZeroBiasHead:
    """Bias-free matching layer; one fingerprint row per class."""

    kind = "zerobias"

    def __init__(self, fingerprints: np.ndarray):
        self.fingerprints = en.parameter(fingerprints)

    @classmethod
    def create(cls, n_classes: int, embed_dim: int, rng: np.random.Generator) -> "ZeroBiasHead":
        return cls(rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (n_classes, embed_dim)))

    @property
    def n_classes(self) -> int:
        return self.fingerprints.shape[0]

    def forward(self, embedded: Tensor) -> Tensor:
        return cosine_match(embedded, self.fingerprints)

    def fingerprint_matrix(self) -> np.ndarray:
        return self.fingerprints.data

    def params(self) -> dict[str, Tensor]:
        return {"head.fp": self.fingerprints}


class RegularHead:
    """Plain affine classification layer, the comparison variant."""

    kind = "regular"

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = en.parameter(weight)
        self.bias = en.parameter(bias)

    @classmethod
    def create(cls, n_classes: int, embed_dim: int, rng: np.random.Generator) -> "RegularHead":
        return cls(rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (n_classes, embed_dim)),
                   np.zeros(n_classes))

    @property
    def n_classes(self) -> int:
        return self.weight.shape[0]

    def forward(self, embedded: Tensor) -> Tensor:
        return en.bias_add(en.matmul(self.weight, embedded), self.bias)

    def fingerprint_matrix(self) -> np.ndarray:
        return self.weight.data

    def params(self) -> dict[str, Tensor]:
        return {"head.w": self.weight, "head.b": self.bias}


def zerobias_forward(x: Tensor, embedding: EmbeddingLayer, head: ZeroBiasHead) -> Tensor:
    """Features in, cosine similarity scores out; every score is in [-1, 1]."""
    return head.forward(embedding.forward(x))


def regular_dense_forward(x: Tensor, embedding: EmbeddingLayer, head: RegularHead) -> Tensor:
    return head.forward(embedding.forward(x))


class MlpExtractor:
    """Two dense+ReLU layers on flattened tensors; the fast default."""

    input_kind = "flat"

    def __init__(self, w1, b1, w2, b2):
        self.w1 = en.parameter(w1)
        self.b1 = en.parameter(b1)
        self.w2 = en.parameter(w2)
        self.b2 = en.parameter(b2)

    @classmethod
    def create(cls, in_dim: int, hidden_dim: int, feature_dim: int,
               rng: np.random.Generator) -> "MlpExtractor":
        return cls(he_init(rng, in_dim, (hidden_dim, in_dim)), bias_init(rng, in_dim, hidden_dim),
                   he_init(rng, hidden_dim, (feature_dim, hidden_dim)),
                   bias_init(rng, hidden_dim, feature_dim))

    @property
    def feature_dim(self) -> int:
        return self.w2.shape[0]

    def forward(self, x: Tensor) -> Tensor:
        h = en.relu(en.bias_add(en.matmul(self.w1, x), self.b1))
        return en.relu(en.bias_add(en.matmul(self.w2, h), self.b2))

    def params(self) -> dict[str, Tensor]:
        return {"extractor.fc1.w": self.w1, "extractor.fc1.b": self.b1,
                "extractor.fc2.w": self.w2, "extractor.fc2.b": self.b2}

    def meta(self) -> dict:
        return {"type": "mlp", "in_dim": int(self.w1.shape[1]),
                "hidden_dim": int(self.w1.shape[0]), "feature_dim": self.feature_dim}


class CnnExtractor:
    """Two conv+ReLU+pool blocks and a dense layer; closer to an RF frontend."""

    input_kind = "image"

    def __init__(self, c1w, c1b, c2w, c2b, fcw, fcb):
        self.c1w = en.parameter(c1w)
        self.c1b = en.parameter(c1b)
        self.c2w = en.parameter(c2w)
        self.c2b = en.parameter(c2b)
        self.fcw = en.parameter(fcw)
        self.fcb = en.parameter(fcb)

    @classmethod
    def create(cls, feature_dim: int, rng: np.random.Generator,
               channels: tuple[int, int] = (8, 16)) -> "CnnExtractor":
        f1, f2 = channels
        # 32 -> conv3 -> 30 -> pool2 -> 15 -> conv3 -> 13 -> pool2 -> 6
        flat = f2 * 6 * 6
        return cls(he_init(rng, 3 * 9, (f1, 3, 3, 3)), bias_init(rng, 3 * 9, f1),
                   he_init(rng, f1 * 9, (f2, f1, 3, 3)), bias_init(rng, f1 * 9, f2),
                   he_init(rng, flat, (feature_dim, flat)), bias_init(rng, flat, feature_dim))

    @property
    def feature_dim(self) -> int:
        return self.fcw.shape[0]

    def forward(self, x: Tensor) -> Tensor:
        h = en.maxpool2d(en.relu(en.channel_bias_add(en.conv2d(x, self.c1w), self.c1b)), 2)
        h = en.maxpool2d(en.relu(en.channel_bias_add(en.conv2d(h, self.c2w), self.c2b)), 2)
        return en.relu(en.bias_add(en.matmul(self.fcw, en.flatten(h)), self.fcb))

    def params(self) -> dict[str, Tensor]:
        return {"extractor.conv1.w": self.c1w, "extractor.conv1.b": self.c1b,
                "extractor.conv2.w": self.c2w, "extractor.conv2.b": self.c2b,
                "extractor.fc.w": self.fcw, "extractor.fc.b": self.fcb}

    def meta(self) -> dict:
        return {"type": "cnn", "channels": [int(self.c1w.shape[0]), int(self.c2w.shape[0])],
                "feature_dim": self.feature_dim}


def batch_to_input(tensors: np.ndarray, input_kind: str) -> Tensor:
    """Dataset samples (n, 32, 32, 3) -> model input layout."""
    arr = np.asarray(tensors, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if input_kind == "flat":
        return en.constant(arr.reshape(arr.shape[0], -1).T)
    if input_kind == "image":
        return en.constant(arr.transpose(0, 3, 1, 2))
    raise ValueError(f"unknown input kind {input_kind!r}")


class Classifier:
    """Extractor -> embedding -> matching head, plus evaluation helpers."""

    def __init__(self, extractor, embedding: EmbeddingLayer, head, temperature: float):
        self.extractor = extractor
        self.embedding = embedding
        self.head = head
        self.temperature = float(temperature)

    @property
    def n_classes(self) -> int:
        return self.head.n_classes

    @property
    def embed_dim(self) -> int:
        return self.embedding.out_dim

    def scores_t(self, batch: np.ndarray) -> Tensor:
        x = batch_to_input(batch, self.extractor.input_kind)
        return self.head.forward(self.embedding.forward(self.extractor.forward(x)))

    def embed_t(self, batch: np.ndarray) -> Tensor:
        x = batch_to_input(batch, self.extractor.input_kind)
        return self.embedding.forward(self.extractor.forward(x))

    def scores(self, batch: np.ndarray, chunk: int = 256) -> np.ndarray:
        parts = [self.scores_t(batch[i:i + chunk]).data
                 for i in range(0, len(batch), chunk)]
        return np.concatenate(parts, axis=1)

    def predict(self, batch: np.ndarray) -> np.ndarray:
        return self.scores(batch).argmax(axis=0)

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.extractor.params())
        out.update(self.embedding.params())
        out.update(self.head.params())
        return out

    def zero_grad(self) -> None:
        for p in self.named_params().values():
            p.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_params().items()}

    def load_snapshot(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.named_params().items():
            if arrays[name].shape != p.shape:
                raise en.ShapeError(f"snapshot for {name!r}: {arrays[name].shape} != {p.shape}")
            p.data = arrays[name].copy()

    def clone(self) -> "Classifier":
        other = build_classifier_from_meta(self.meta())
        other.load_snapshot(self.snapshot())
        return other

    def meta(self) -> dict:
        return {"extractor": self.extractor.meta(),
                "head": self.head.kind,
                "n_classes": self.n_classes,
                "embed_dim": self.embed_dim,
                "temperature": self.temperature}


def build_classifier(head_kind: str = "zerobias", extractor_kind: str = "mlp",
                     n_classes: int = 10, hidden_dim: int = 256, feature_dim: int = 128,
                     embed_dim: int | None = None, temperature: float | None = None,
                     rng: np.random.Generator | None = None) -> Classifier:
    """Assemble a fresh model; embedding width defaults to twice the class count."""
    rng = rng if rng is not None else np.random.default_rng(0)
    if temperature is None:
        temperature = DEFAULT_TEMPERATURE if head_kind == "zerobias" else REGULAR_HEAD_TEMPERATURE
    if embed_dim is None:
        embed_dim = 2 * n_classes
    in_dim = int(np.prod(INPUT_SHAPE))
    if extractor_kind == "mlp":
        extractor = MlpExtractor.create(in_dim, hidden_dim, feature_dim, rng)
    elif extractor_kind == "cnn":
        extractor = CnnExtractor.create(feature_dim, rng)
    else:
        raise ValueError(f"unknown extractor {extractor_kind!r}")
    embedding = EmbeddingLayer.create(feature_dim, embed_dim, rng)
    if head_kind == "zerobias":
        head = ZeroBiasHead.create(n_classes, embed_dim, rng)
    elif head_kind == "regular":
        head = RegularHead.create(n_classes, embed_dim, rng)
    else:
        raise ValueError(f"unknown head {head_kind!r}")
    return Classifier(extractor, embedding, head, temperature)


def build_classifier_from_meta(meta: dict) -> Classifier:
    """Rebuild the model skeleton described by `Classifier.meta()` output."""
    ex = meta["extractor"]
    rng = np.random.default_rng(0)  # values are overwritten by load_snapshot
    if ex["type"] == "mlp":
        extractor = MlpExtractor.create(ex["in_dim"], ex["hidden_dim"], ex["feature_dim"], rng)
    elif ex["type"] == "cnn":
        extractor = CnnExtractor.create(ex["feature_dim"], rng, tuple(ex["channels"]))
    else:
        raise ValueError(f"unknown extractor meta {ex!r}")
    embedding = EmbeddingLayer.create(ex["feature_dim"], meta["embed_dim"], rng)
    if meta["head"] == "zerobias":
        head = ZeroBiasHead.create(meta["n_classes"], meta["embed_dim"], rng)
    elif meta["head"] == "regular":
        head = RegularHead.create(meta["n_classes"], meta["embed_dim"], rng)
    else:
        raise ValueError(f"unknown head meta {meta['head']!r}")
    return Classifier(extractor, embedding, head, meta["temperature"])
