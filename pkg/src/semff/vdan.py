"""Joint document/image embedding network.

A document is encoded hierarchically: a bidirectional gated-recurrence layer
reads each sentence's (frozen) word vectors and an attention pool reduces it
to a sentence vector; a second bidirectional layer reads the sentence vectors
with its initial states seeded from the paired image's features, and a second
attention pool produces the document vector. Two small projection heads map
document vector and image features into a shared unit sphere, where cosine
similarity is the trained alignment signal.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DataFormatError, NumericError, ShapeError
from .tensor import (
    Tape, Tensor, add, add_rowvec, assert_finite, backward, concat_cols,
    add_const, dot, flatten, glorot, l2_normalize, matmul, maximum_const,
    mean_all, mul, rsub_const, sigmoid, softmax, stack, tanh, zeros_param,
    concat,
)
from .optim import Adam
from .dataio import Corpus

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric runs; everything else is a separator."""
    return _TOKEN.findall(text.lower())


class WordVectorTable:
    """Frozen word vectors with per-sentence row caching.

    Unknown tokens map to zero vectors. A sentence that tokenizes to nothing
    yields a single zero row so downstream shapes stay valid.
    """

    def __init__(self, vocab: dict[str, int], vectors: np.ndarray):
        if vectors.ndim != 2 or not vocab:
            raise ValueError("need a non-empty (tokens, dim) vector table")
        self.vocab = vocab
        self.vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        self._cache: dict[str, list[Tensor]] = {}
        self._zero = Tensor(np.zeros(self.dim, dtype=np.float32))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def from_file(cls, path) -> "WordVectorTable":
        from .dataio import load_word_vectors
        vocab, vectors = load_word_vectors(path)
        return cls(vocab, vectors)

    def rows(self, sentence: str) -> list[Tensor]:
        cached = self._cache.get(sentence)
        if cached is not None:
            return cached
        rows = []
        for token in tokenize(sentence):
            idx = self.vocab.get(token, -1)
            rows.append(Tensor(self.vectors[idx]) if idx >= 0 else self._zero)
        if not rows:
            rows = [self._zero]
        self._cache[sentence] = rows
        return rows


@dataclass(frozen=True)
class VdanConfig:
    """Network dimensions; both recurrent widths are split across directions."""
    word_dim: int = 300
    sent_hidden: int = 1024
    doc_hidden: int = 2048
    image_dim: int = 2048
    embed_dim: int = 128
    proj_hidden: int = 512
    word_attention: bool = True
    margin: float = 0.0

    def __post_init__(self):
        for name in ("word_dim", "sent_hidden", "doc_hidden", "image_dim",
                     "embed_dim", "proj_hidden"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.sent_hidden % 2 or self.doc_hidden % 2:
            raise ConfigError("recurrent widths must be even (two directions)")
        if self.doc_hidden != self.image_dim:
            raise ConfigError(
                f"doc_hidden ({self.doc_hidden}) must equal image_dim "
                f"({self.image_dim}): image features seed the document layer")
        if self.margin < 0 or self.margin >= 1:
            raise ConfigError(f"margin must be in [0, 1), got {self.margin}")


# Reduced dimensions for fast experiments; projection width stays at 512.
TOY_CONFIG = VdanConfig(word_dim=16, sent_hidden=32, doc_hidden=64,
                        image_dim=64, embed_dim=16)


class GruParams:
    """One direction of a gated recurrence: update/reset/candidate blocks."""

    FIELDS = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wc", "Uc", "bc")

    def __init__(self, rng: np.random.Generator, in_dim: int, hidden: int):
        self.in_dim = in_dim
        self.hidden = hidden
        for gate in ("z", "r", "c"):
            setattr(self, f"W{gate}", glorot(rng, (in_dim, hidden)))
            setattr(self, f"U{gate}", glorot(rng, (hidden, hidden)))
            setattr(self, f"b{gate}", zeros_param((hidden,)))

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{name}": getattr(self, name) for name in self.FIELDS}


def gru_cell(p: GruParams, x: Tensor, h: Tensor) -> Tensor:
    """h' = z*h + (1-z)*cand with reset-gated candidate state."""
    z = sigmoid(add(add(matmul(x, p.Wz), matmul(h, p.Uz)), p.bz))
    r = sigmoid(add(add(matmul(x, p.Wr), matmul(h, p.Ur)), p.br))
    cand = tanh(add(add(matmul(x, p.Wc), matmul(mul(r, h), p.Uc)), p.bc))
    return add(mul(z, h), mul(rsub_const(z, 1.0), cand))


def bi_gru(fwd: GruParams, bwd: GruParams, xs: Sequence[Tensor],
           h0_fwd: Tensor, h0_bwd: Tensor) -> Tensor:
    """Run both directions over xs; rows are [forward_t ; backward_t]."""
    n = len(xs)
    h = h0_fwd
    fwd_states = []
    for x in xs:
        h = gru_cell(fwd, x, h)
        fwd_states.append(h)
    h = h0_bwd
    bwd_states: list[Tensor] = [h] * n
    for i in range(n - 1, -1, -1):
        h = gru_cell(bwd, xs[i], h)
        bwd_states[i] = h
    return concat_cols(stack(fwd_states), stack(bwd_states))


class AttentionParams:
    """Projection W and context query c; scores are tanh(h W) . c."""

    def __init__(self, rng: np.random.Generator, hidden: int):
        self.W = glorot(rng, (hidden, hidden))
        self.c = glorot(rng, (hidden,))

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.W": self.W, f"{prefix}.c": self.c}


def attention_pool(att: AttentionParams, H: Tensor) -> tuple[Tensor, Tensor]:
    """Returns (weighted sum of rows, attention weights over rows)."""
    if H.data.ndim != 2 or H.shape[0] < 1:
        raise ShapeError(f"attention_pool needs a non-empty row matrix, got {H.shape}")
    u = tanh(matmul(H, att.W))
    alpha = softmax(matmul(u, att.c))
    return matmul(alpha, H), alpha


def uniform_pool(H: Tensor) -> tuple[Tensor, Tensor]:
    n = H.shape[0]
    weights = Tensor(np.full(n, 1.0 / n, dtype=np.float32))
    return matmul(weights, H), weights


class ProjectionParams:
    """Two-layer rectified projection onto the shared embedding space."""

    def __init__(self, rng: np.random.Generator, in_dim: int, hidden: int,
                 out_dim: int):
        self.W1 = glorot(rng, (in_dim, hidden))
        self.b1 = zeros_param((hidden,))
        self.W2 = glorot(rng, (hidden, out_dim))
        self.b2 = zeros_param((out_dim,))

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.W1": self.W1, f"{prefix}.b1": self.b1,
                f"{prefix}.W2": self.W2, f"{prefix}.b2": self.b2}


def project(p: ProjectionParams, x: Tensor) -> Tensor:
    h = maximum_const(add(matmul(x, p.W1), p.b1), 0.0)
    return add(matmul(h, p.W2), p.b2)


class VdanParams:
    """All trainable state of the embedding network."""

    def __init__(self, cfg: VdanConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.word_fwd = GruParams(rng, cfg.word_dim, cfg.sent_hidden // 2)
        self.word_bwd = GruParams(rng, cfg.word_dim, cfg.sent_hidden // 2)
        self.word_att = AttentionParams(rng, cfg.sent_hidden)
        self.sent_fwd = GruParams(rng, cfg.sent_hidden, cfg.doc_hidden // 2)
        self.sent_bwd = GruParams(rng, cfg.sent_hidden, cfg.doc_hidden // 2)
        self.sent_att = AttentionParams(rng, cfg.doc_hidden)
        self.doc_proj = ProjectionParams(rng, cfg.doc_hidden, cfg.proj_hidden,
                                         cfg.embed_dim)
        self.img_proj = ProjectionParams(rng, cfg.image_dim, cfg.proj_hidden,
                                         cfg.embed_dim)

    def tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.word_fwd.tensors("word_fwd"))
        out.update(self.word_bwd.tensors("word_bwd"))
        out.update(self.word_att.tensors("word_att"))
        out.update(self.sent_fwd.tensors("sent_fwd"))
        out.update(self.sent_bwd.tensors("sent_bwd"))
        out.update(self.sent_att.tensors("sent_att"))
        out.update(self.doc_proj.tensors("doc_proj"))
        out.update(self.img_proj.tensors("img_proj"))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.tensors().values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.tensors().items()}

    def restore(self, arrays: dict[str, np.ndarray]) -> None:
        tensors = self.tensors()
        missing = set(tensors) - set(arrays)
        if missing:
            raise DataFormatError(f"missing tensors: {sorted(missing)[:5]}")
        for name, t in tensors.items():
            arr = arrays[name]
            if tuple(arr.shape) != t.shape:
                raise DataFormatError(
                    f"tensor {name}: shape {arr.shape} does not match {t.shape}")
            t.data = np.array(arr, dtype=np.float32)

    def replace_tensors(self, values: Sequence[Tensor]) -> None:
        names = list(self.tensors())
        if len(values) != len(names):
            raise ValueError(f"expected {len(names)} tensors, got {len(values)}")
        for name, value in zip(names, values):
            group, field = name.split(".")
            setattr(getattr(self, group), field, value)


def _zeros_state(hidden: int) -> Tensor:
    return Tensor(np.zeros(hidden, dtype=np.float32))


def encode_sentence(params: VdanParams, rows: Sequence[Tensor]) -> Tensor:
    """Word rows -> one sentence vector of width sent_hidden."""
    cfg = params.cfg
    half = cfg.sent_hidden // 2
    H = bi_gru(params.word_fwd, params.word_bwd, rows,
               _zeros_state(half), _zeros_state(half))
    if cfg.word_attention:
        return attention_pool(params.word_att, H)[0]
    return uniform_pool(H)[0]


def _check_image_feature(cfg: VdanConfig, feature: np.ndarray) -> np.ndarray:
    feature = np.asarray(feature, dtype=np.float32)
    if feature.shape != (cfg.image_dim,):
        raise ShapeError(
            f"image feature shape {feature.shape}, expected ({cfg.image_dim},)")
    if not np.isfinite(feature).all():
        raise NumericError("image feature contains non-finite values")
    if np.linalg.norm(feature) < 1e-12:
        raise NumericError("image feature has zero norm")
    return feature


def encode_document_rows(params: VdanParams,
                         sentence_rows: Sequence[Sequence[Tensor]],
                         image_feature: np.ndarray) -> Tensor:
    """Document encoding conditioned on the paired image.

    The image features seed the sentence-level recurrence: the first half
    initializes the forward direction, the second half the backward one, so
    the concatenated initial state is exactly the image feature vector.
    """
    cfg = params.cfg
    feature = _check_image_feature(cfg, image_feature)
    if not sentence_rows:
        raise ValueError("document has no sentences")
    sent_vecs = [encode_sentence(params, rows) for rows in sentence_rows]
    half = cfg.doc_hidden // 2
    h0_fwd = Tensor(feature[:half])
    h0_bwd = Tensor(feature[half:])
    H = bi_gru(params.sent_fwd, params.sent_bwd, sent_vecs, h0_fwd, h0_bwd)
    doc_vec, _ = attention_pool(params.sent_att, H)
    return l2_normalize(project(params.doc_proj, doc_vec))


def encode_document(params: VdanParams, table: WordVectorTable,
                    sentences: Sequence[str],
                    image_feature: np.ndarray) -> Tensor:
    return encode_document_rows(params, [table.rows(s) for s in sentences],
                                image_feature)


def encode_image(params: VdanParams, image_feature: np.ndarray) -> Tensor:
    """Image features -> unit vector in the shared embedding space."""
    feature = _check_image_feature(params.cfg, image_feature)
    return l2_normalize(project(params.img_proj, Tensor(feature)))


def cosine_embedding_loss(e_doc: Tensor, e_img: Tensor, corresponding: bool,
                          margin: float = 0.0) -> Tensor:
    """1 - cos for matching pairs, max(0, cos - margin) for mismatches."""
    cos = dot(e_doc, e_img)
    if corresponding:
        return rsub_const(cos, 1.0)
    return maximum_const(add_const(cos, -margin), 0.0)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pair:
    sentences: tuple[str, ...]
    image_index: int
    corresponding: bool


def build_training_pairs(corpus: Corpus, rng: np.random.Generator,
                         image_indices: Sequence[int] | None = None
                         ) -> list[Pair]:
    """One positive and one negative document per anchor image.

    A positive document mixes the anchor's captions with a second image's;
    a negative document mixes captions from two images that are both
    distinct from the anchor and from each other. Partner images are drawn
    here, once; per-epoch variation comes from reshuffling sentence order
    (shuffle_sentences), which preserves each document's sentence multiset.
    """
    n = len(corpus)
    if n < 3:
        raise ValueError(f"need at least 3 captioned images, got {n}")
    anchors = list(image_indices) if image_indices is not None else list(range(n))

    def other(exclude: set[int]) -> int:
        while True:
            j = int(rng.integers(n))
            if j not in exclude:
                return j

    pairs: list[Pair] = []
    for i in anchors:
        j = other({i})
        pos = list(corpus.captions_by_image[i]) + list(corpus.captions_by_image[j])
        a = other({i})
        b = other({i, a})
        neg = list(corpus.captions_by_image[a]) + list(corpus.captions_by_image[b])
        pairs.append(Pair(tuple(pos), i, True))
        pairs.append(Pair(tuple(neg), i, False))
    return pairs


def shuffle_sentences(pair: Pair, rng: np.random.Generator) -> Pair:
    """Same sentences, fresh order."""
    perm = rng.permutation(len(pair.sentences))
    return Pair(tuple(pair.sentences[k] for k in perm),
                pair.image_index, pair.corresponding)


def _pair_cosine(params: VdanParams, table: WordVectorTable, corpus: Corpus,
                 pair: Pair) -> float:
    e_d = encode_document(params, table, pair.sentences,
                          corpus.features[pair.image_index])
    e_i = encode_image(params, corpus.features[pair.image_index])
    return float(np.dot(e_d.data, e_i.data))


def evaluate_pairs(params: VdanParams, table: WordVectorTable, corpus: Corpus,
                   pairs: Sequence[Pair]) -> dict[str, float]:
    """Forward-only loss and cosine statistics over a pair set."""
    losses, pos_cos, neg_cos = [], [], []
    margin = params.cfg.margin
    for pair in pairs:
        cos = _pair_cosine(params, table, corpus, pair)
        if pair.corresponding:
            losses.append(1.0 - cos)
            pos_cos.append(cos)
        else:
            losses.append(max(0.0, cos - margin))
            neg_cos.append(cos)
    stats = {"loss": float(np.mean(losses))}
    if pos_cos:
        stats["pos_cos"] = float(np.mean(pos_cos))
    if neg_cos:
        stats["neg_cos"] = float(np.mean(neg_cos))
    if pos_cos and neg_cos:
        stats["separation"] = stats["pos_cos"] - stats["neg_cos"]
    return stats


def train_vdan(corpus: Corpus, table: WordVectorTable, cfg: VdanConfig, *,
               epochs: int = 30, batch_size: int = 64, lr: float = 1e-5,
               rng: np.random.Generator,
               init_rng: np.random.Generator | None = None,
               val_fraction: float = 0.1,
               progress: Callable[[int, dict], None] | None = None
               ) -> tuple[VdanParams, list[dict]]:
    """Train on constructed pairs; keeps the state of the best-validation
    epoch. A seeded shuffle holds out val_fraction of the pairs; the rest
    are re-shuffled (sentence order and batch order) every epoch.

    ``rng`` drives pair construction and shuffling; ``init_rng`` (defaults
    to ``rng``) drives weight initialization, so callers can keep the two
    streams independent.
    """
    if epochs <= 0 or batch_size <= 0:
        raise ConfigError("epochs and batch_size must be positive")
    if not 0 <= val_fraction < 1:
        raise ConfigError(f"val_fraction must be in [0, 1), got {val_fraction}")
    if table.dim != cfg.word_dim:
        raise ConfigError(
            f"word vectors have dim {table.dim}, config says {cfg.word_dim}")
    if corpus.features.shape[1] != cfg.image_dim:
        raise ConfigError(
            f"image features have dim {corpus.features.shape[1]}, "
            f"config says {cfg.image_dim}")

    params = VdanParams(cfg, init_rng if init_rng is not None else rng)
    opt = Adam(params.parameters(), lr=lr)

    all_pairs = build_training_pairs(corpus, rng)
    order = rng.permutation(len(all_pairs))
    n_val = int(round(val_fraction * len(all_pairs)))
    val_pairs = [all_pairs[k] for k in order[:n_val]]
    train_pairs = [all_pairs[k] for k in order[n_val:]]
    if not train_pairs:
        raise ConfigError("no training pairs left after validation split")

    history: list[dict] = []
    best_val = float("inf")
    best_state: dict[str, np.ndarray] | None = None

    for epoch in range(1, epochs + 1):
        pairs = [shuffle_sentences(p, rng) for p in train_pairs]
        pairs = [pairs[k] for k in rng.permutation(len(pairs))]
        epoch_losses: list[float] = []
        for start in range(0, len(pairs), batch_size):
            batch = pairs[start:start + batch_size]
            with Tape() as tape:
                losses = []
                for pair in batch:
                    e_d = encode_document(params, table, pair.sentences,
                                          corpus.features[pair.image_index])
                    e_i = encode_image(params, corpus.features[pair.image_index])
                    losses.append(flatten(cosine_embedding_loss(
                        e_d, e_i, pair.corresponding, cfg.margin)))
                loss = mean_all(concat(losses))
            assert_finite(loss, f"epoch {epoch}, batch at pair {start}")
            opt.zero_grad()
            backward(tape, loss)
            opt.step()
            epoch_losses.append(loss.item())

        row = {"epoch": epoch, "train_loss": float(np.mean(epoch_losses))}
        if val_pairs:
            row.update({f"val_{k}": v for k, v in
                        evaluate_pairs(params, table, corpus, val_pairs).items()})
            if row["val_loss"] < best_val:
                best_val = row["val_loss"]
                best_state = params.snapshot()
        history.append(row)
        if progress is not None:
            progress(epoch, row)

    if best_state is not None:
        params.restore(best_state)
    return params, history


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def config_to_dict(cfg: VdanConfig) -> dict[str, float]:
    return {
        "word_dim": cfg.word_dim, "sent_hidden": cfg.sent_hidden,
        "doc_hidden": cfg.doc_hidden, "image_dim": cfg.image_dim,
        "embed_dim": cfg.embed_dim, "proj_hidden": cfg.proj_hidden,
        "word_attention": float(cfg.word_attention), "margin": cfg.margin,
    }


def config_from_dict(values: dict[str, float]) -> VdanConfig:
    try:
        return VdanConfig(
            word_dim=int(values["word_dim"]),
            sent_hidden=int(values["sent_hidden"]),
            doc_hidden=int(values["doc_hidden"]),
            image_dim=int(values["image_dim"]),
            embed_dim=int(values["embed_dim"]),
            proj_hidden=int(values["proj_hidden"]),
            word_attention=bool(values["word_attention"]),
            margin=float(values["margin"]),
        )
    except KeyError as e:
        raise DataFormatError(f"checkpoint config missing key {e}") from None


def save_vdan(path, params: VdanParams) -> None:
    from .checkpoint import save_checkpoint
    save_checkpoint(path, params.tensors(), config_to_dict(params.cfg))


def load_vdan(path) -> VdanParams:
    from .checkpoint import load_checkpoint
    arrays, config = load_checkpoint(path)
    cfg = config_from_dict(config)
    params = VdanParams(cfg, np.random.default_rng(0))
    params.restore(arrays)
    return params
