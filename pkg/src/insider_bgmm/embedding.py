"""Per-user skip-gram embeddings with negative sampling, and daily summary vectors.

Each day's token string is one sentence; context windows never cross days.
Training is plain sequential SGD in the style of the original word2vec
tool: for a (target, context) pair with sampled negatives, the loss is::

    -log s(u_c . v_t) - sum_n log s(-u_n . v_t)

where ``v`` are input (target) vectors, ``u`` output (context) vectors and
``s`` the logistic function.  Negatives that coincide with the context token
are skipped.  The inner loop is compiled with numba.  Negatives come from
uniforms drawn up front by a seeded numpy generator, so a run is bitwise
reproducible.
"""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Sequence
from dataclasses import dataclass
from datetime import date
from pathlib import Path

import numba
import numpy as np

from .errors import ConfigError, MissingVocabularyError, RowError, SchemaError
from .ingest import EventToken, UserDaySequence

NOISE_POWER = 0.75


@dataclass(frozen=True)
class EmbeddingConfig:
    dim: int = 10
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    min_learning_rate: float = 0.0001
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("dim", "window", "negatives", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0 <= self.min_learning_rate <= self.learning_rate:
            raise ConfigError("min_learning_rate must be in [0, learning_rate]")


@dataclass(frozen=True)
class EmbeddingTable:
    user_id: str
    tokens: tuple[EventToken, ...]
    input_vectors: np.ndarray  # (V, D), row i belongs to tokens[i]
    output_vectors: np.ndarray
    seed: int = 0

    @property
    def dim(self) -> int:
        return self.input_vectors.shape[1]

    def index(self, token: EventToken) -> int:
        try:
            return self.tokens.index(token)
        except ValueError:
            raise MissingVocabularyError(token) from None

    def input_vector(self, token: EventToken) -> np.ndarray:
        return self.input_vectors[self.index(token)]

    def to_dict(self) -> dict:
        return {
            "user": self.user_id,
            "dim": self.dim,
            "seed": self.seed,
            "tokens": [
                {"token": t.value, "input": self.input_vectors[i].tolist(), "output": self.output_vectors[i].tolist()}
                for i, t in enumerate(self.tokens)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> EmbeddingTable:
        entries = data["tokens"]
        dim = int(data["dim"])
        inp = np.array([e["input"] for e in entries], dtype=float).reshape(len(entries), dim)
        out = np.array([e["output"] for e in entries], dtype=float).reshape(len(entries), dim)
        return cls(
            user_id=data["user"],
            tokens=tuple(EventToken.parse(e["token"]) for e in entries),
            input_vectors=inp,
            output_vectors=out,
            seed=int(data.get("seed", 0)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> EmbeddingTable:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class DaySummary:
    user_id: str
    day: date
    vector: np.ndarray
    label: bool | None = None


def skipgram_pairs(sentences: Sequence[np.ndarray], window: int) -> np.ndarray:
    """All (target, context) index pairs in reading order: by target position,
    then by context offset from ``-window`` to ``+window``."""
    if not sentences:
        return np.zeros((0, 2), dtype=np.int64)
    flat = np.concatenate(sentences).astype(np.int64)
    sid = np.repeat(np.arange(len(sentences)), [len(s) for s in sentences])
    n = flat.shape[0]
    offsets = [o for o in range(-window, window + 1) if o != 0]
    ctx = np.full((n, len(offsets)), -1, dtype=np.int64)
    pos = np.arange(n)
    for k, o in enumerate(offsets):
        j = pos + o
        ok = (j >= 0) & (j < n)
        ok[ok] &= sid[j[ok]] == sid[ok]
        ctx[ok, k] = j[ok]
    tgt = np.broadcast_to(pos[:, None], ctx.shape)
    valid = ctx >= 0
    return np.stack([flat[tgt[valid]], flat[ctx[valid]]], axis=1)


def noise_distribution(counts: np.ndarray, power: float = NOISE_POWER) -> np.ndarray:
    w = np.asarray(counts, dtype=float) ** power
    return w / w.sum()


def negative_sampling_loss(
    input_vectors: np.ndarray,
    output_vectors: np.ndarray,
    pairs: np.ndarray,
    negatives: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Summed loss over ``pairs`` with fixed ``negatives`` (P, k), and its gradients.

    Returns ``(loss, d_input, d_output)``.
    """
    t, c = pairs[:, 0], pairs[:, 1]
    v = input_vectors[t]  # (P, D)
    u_pos = output_vectors[c]
    u_neg = output_vectors[negatives]  # (P, k, D)
    keep = negatives != c[:, None]

    s_pos = np.einsum("pd,pd->p", u_pos, v)
    s_neg = np.einsum("pkd,pd->pk", u_neg, v)
    # -log s(x) = logaddexp(0, -x)
    loss = np.logaddexp(0.0, -s_pos).sum() + (np.logaddexp(0.0, s_neg) * keep).sum()

    g_pos = _sigmoid(s_pos) - 1.0  # d/ds of -log s(s)
    g_neg = _sigmoid(s_neg) * keep  # d/ds of -log s(-s)
    d_in = np.zeros_like(input_vectors)
    d_out = np.zeros_like(output_vectors)
    np.add.at(d_in, t, g_pos[:, None] * u_pos + np.einsum("pk,pkd->pd", g_neg, u_neg))
    np.add.at(d_out, c, g_pos[:, None] * v)
    np.add.at(d_out, negatives.reshape(-1), (g_neg[:, :, None] * v[:, None, :]).reshape(-1, v.shape[1]))
    return float(loss), d_in, d_out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# reassociation lets the D-length loops vectorize; inf and NaN semantics are kept
# because exp(-f) may overflow for large |f|
@numba.njit(cache=True, error_model="numpy", fastmath={"reassoc", "contract", "nsz", "arcp"})
def _sgd_pass(inp, out, pairs, uniforms, cdf, lr_start, lr_end, step0, total_steps):  # pragma: no cover - compiled
    # negatives are drawn by inverse CDF from ``uniforms`` (P, k): the first
    # index with cdf > u; the vocabulary is tiny, so a linear count is enough
    dim = inp.shape[1]
    last = cdf.shape[0] - 1
    grad = np.empty(dim)
    vt = np.empty(dim)
    for p in range(pairs.shape[0]):
        lr = lr_start - (lr_start - lr_end) * (step0 + p) / total_steps
        t = pairs[p, 0]
        c = pairs[p, 1]
        for d in range(dim):
            grad[d] = 0.0
            vt[d] = inp[t, d]
        for s in range(uniforms.shape[1] + 1):
            if s == 0:
                w = c
                label = 1.0
            else:
                u = uniforms[p, s - 1]
                w = 0
                for j in range(last):
                    # cdf is sorted, so the count of entries <= u is the index
                    w += cdf[j] <= u
                if w == c:
                    continue
                label = 0.0
            f = 0.0
            for d in range(dim):
                f += vt[d] * out[w, d]
            g = (label - 1.0 / (1.0 + math.exp(-f))) * lr
            for d in range(dim):
                grad[d] += g * out[w, d]
                out[w, d] += g * vt[d]
        for d in range(dim):
            inp[t, d] += grad[d]


def train_skipgram(sequences: Sequence[UserDaySequence], config: EmbeddingConfig) -> EmbeddingTable:
    """Train one user's table. All sequences must share a user id."""
    if not sequences or all(len(s.tokens) == 0 for s in sequences):
        raise ConfigError("cannot train embeddings on an empty corpus")
    users = {s.user_id for s in sequences}
    if len(users) != 1:
        raise ConfigError(f"sequences span {len(users)} users; train one table per user")
    order = {t: i for i, t in enumerate(EventToken)}
    present = sorted({t for s in sequences for t in s.tokens}, key=order.__getitem__)
    index = {t: i for i, t in enumerate(present)}
    sentences = [np.array([index[t] for t in s.tokens], dtype=np.int64) for s in sequences]
    counts = np.bincount(np.concatenate(sentences), minlength=len(present))

    rng = np.random.default_rng(config.seed)
    v, d = len(present), config.dim
    inp = (rng.random((v, d)) - 0.5) / d
    out = np.zeros((v, d))
    pairs = skipgram_pairs(sentences, config.window)
    cdf = np.cumsum(noise_distribution(counts))
    cdf[-1] = 1.0
    total = max(1, pairs.shape[0] * config.epochs)
    for epoch in range(config.epochs):
        uniforms = rng.random((pairs.shape[0], config.negatives))
        _sgd_pass(inp, out, pairs, uniforms, cdf, config.learning_rate, config.min_learning_rate, epoch * pairs.shape[0], total)
        if not (np.all(np.isfinite(inp)) and np.all(np.isfinite(out))):
            raise FloatingPointError(f"skip-gram training diverged in epoch {epoch}")
    return EmbeddingTable(next(iter(users)), tuple(present), inp, out, config.seed)


def summarize_day(sequence: UserDaySequence, table: EmbeddingTable) -> DaySummary:
    vec = np.zeros(table.dim)
    for tok in sequence.tokens:
        vec += table.input_vector(tok)
    return DaySummary(sequence.user_id, sequence.day, vec, sequence.label)


def summarize_all(sequences: Sequence[UserDaySequence], table: EmbeddingTable) -> list[DaySummary]:
    """Summaries in input order.

    Vectors are built from per-token counts, so any permutation of a day's
    tokens yields a bitwise-identical vector.
    """
    lookup = {t: i for i, t in enumerate(table.tokens)}
    out = []
    for seq in sequences:
        counts = np.zeros(len(table.tokens))
        for tok in seq.tokens:
            i = lookup.get(tok)
            if i is None:
                raise MissingVocabularyError(tok)
            counts[i] += 1
        out.append(DaySummary(seq.user_id, seq.day, counts @ table.input_vectors, seq.label))
    return out


def summary_matrix(summaries: Sequence[DaySummary]) -> np.ndarray:
    if not summaries:
        return np.zeros((0, 0))
    return np.vstack([s.vector for s in summaries])


def write_summaries(path: str | Path, summaries: Sequence[DaySummary]) -> None:
    dim = summaries[0].vector.shape[0] if summaries else 0
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "day", "label"] + [f"v{i}" for i in range(dim)])
        for s in summaries:
            label = "" if s.label is None else int(s.label)
            w.writerow([s.user_id, s.day.isoformat(), label] + [repr(float(x)) for x in s.vector])


def read_summaries(path: str | Path) -> list[DaySummary]:
    path = Path(path)
    out = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["user", "day", "label"]:
            raise SchemaError("user,day,label", path)
        for row in reader:
            try:
                label = None if row[2] == "" else bool(int(row[2]))
                out.append(DaySummary(row[0], date.fromisoformat(row[1]), np.array(row[3:], dtype=float), label))
            except (ValueError, IndexError) as exc:
                raise RowError(reader.line_num, str(exc), path) from None
    return out
