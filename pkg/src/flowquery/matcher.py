"""Text-to-flow semantic matching.

Captions and segment latents are projected into a shared 128-d common
space.  During training the caption embedding queries its segment set
through softmax attention (segments act as keys and values) and the
aggregated flow vector is contrasted against the caption with a symmetric
InfoNCE loss.  At inference segments are pre-encoded into an immutable
index and ranked by plain cosine similarity against the projected query
text: exact top-k, ties broken by ascending segment id.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field as dc_field

import numpy as np

from .descriptor import N_CONTROL, descriptors_for_segments
from .encoder import Adam, DaeModel
from .errors import (BadParam, BadResponse, EmptyIndex, EmptyQuery,
                     FormatError, IoError, ServiceUnavailable, Timeout)

FALLBACK_DIM = 256
COMMON_DIM = 128
DEFAULT_TAU = 0.07


# text embedding --------------------------------------------------------------

@dataclass
class TextEmbedding:
    vector: np.ndarray
    source: str  # "hashed_fallback" | "external_service"


def embed_text_fallback(text: str, dim: int = FALLBACK_DIM) -> TextEmbedding:
    """Signed feature hashing of character trigrams; deterministic and offline.

    Each trigram of the lowercased text picks a bucket and a sign from its
    blake2 digest; the count vector is L2-normalized.
    """
    if not text or not text.strip():
        raise EmptyQuery("query text is empty")
    s = " " + text.lower().strip() + " "
    vec = np.zeros(dim)
    for i in range(len(s) - 2):
        digest = hashlib.blake2b(s[i:i + 3].encode("utf-8"), digest_size=8).digest()
        h = int.from_bytes(digest, "little")
        vec[h % dim] += 1.0 if (h >> 32) & 1 else -1.0
    norm = np.linalg.norm(vec)
    if norm == 0:  # every trigram cancelled; fall back to a fixed direction
        vec[0] = 1.0
        norm = 1.0
    return TextEmbedding(vector=vec / norm, source="hashed_fallback")


@dataclass
class EmbeddingServiceConfig:
    endpoint: str = ""
    timeout: float = 10.0


class EmbeddingClient:
    """POST {"texts": [...]} -> {"vectors": [[...], ...]} against a
    configured endpoint.  Failures surface as errors; falling back to the
    hashed embedder is an explicit configuration choice, never implicit."""

    def __init__(self, config: EmbeddingServiceConfig):
        if not config.endpoint:
            raise ServiceUnavailable(
                "no embedding endpoint configured; use the hashed fallback "
                "embedder explicitly if offline operation is intended")
        self.config = config

    def embed(self, texts: list[str]) -> list[TextEmbedding]:
        import requests

        try:
            resp = requests.post(self.config.endpoint, json={"texts": list(texts)},
                                 timeout=self.config.timeout)
        except requests.Timeout as e:
            raise Timeout(f"embedding service timed out: {e}") from e
        except requests.RequestException as e:
            raise ServiceUnavailable(f"embedding service unreachable: {e}") from e
        if resp.status_code != 200:
            raise ServiceUnavailable(f"embedding service returned {resp.status_code}")
        try:
            vectors = resp.json()["vectors"]
        except Exception as e:
            raise BadResponse(f"malformed embedding payload: {e}") from e
        if len(vectors) != len(texts):
            raise BadResponse("embedding count does not match request")
        out = []
        for v in vectors:
            arr = np.asarray(v, dtype=np.float64)
            norm = np.linalg.norm(arr)
            if arr.ndim != 1 or norm == 0:
                raise BadResponse("embedding vectors must be non-zero 1-d")
            out.append(TextEmbedding(vector=arr / norm, source="external_service"))
        return out


def make_embedder(kind: str = "hashed_fallback",
                  service: EmbeddingServiceConfig | None = None):
    """Returns text -> TextEmbedding for the configured source."""
    if kind == "hashed_fallback":
        return embed_text_fallback
    if kind == "external_service":
        client = EmbeddingClient(service or EmbeddingServiceConfig())
        return lambda text: client.embed([text])[0]
    raise BadParam(f"unknown embedder kind {kind!r}")


# attention and contrastive loss ----------------------------------------------

def _softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def cross_attention(q: np.ndarray, keys: np.ndarray, values: np.ndarray) -> np.ndarray:
    """softmax(q . k_i / sqrt(d)) convex combination of the values."""
    keys = np.atleast_2d(np.asarray(keys, dtype=np.float64))
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if len(keys) == 0:
        raise BadParam("attention needs at least one key")
    if len(keys) != len(values):
        raise BadParam("keys and values must align")
    q = np.asarray(q, dtype=np.float64)
    w = _softmax(keys @ q / np.sqrt(q.shape[-1]))
    return w @ values


def _cosine_matrix(a, b):
    an = a / np.linalg.norm(a, axis=1, keepdims=True)
    bn = b / np.linalg.norm(b, axis=1, keepdims=True)
    return an @ bn.T


def infonce_loss(text_embs, flow_aggs, tau: float = DEFAULT_TAU) -> float:
    """Symmetric InfoNCE over in-batch cosine similarities."""
    return infonce_loss_and_grads(text_embs, flow_aggs, tau)[0]


def infonce_loss_and_grads(text_embs, flow_aggs, tau: float = DEFAULT_TAU):
    """Loss plus analytic gradients with respect to both embedding batches."""
    a = np.asarray(text_embs, dtype=np.float64)
    b = np.asarray(flow_aggs, dtype=np.float64)
    if a.shape != b.shape:
        raise BadParam("batch shapes must match")
    n = len(a)
    if n < 2:
        raise BadParam("contrastive batch needs >= 2 pairs")
    if not tau > 0:
        raise BadParam("temperature must be > 0")
    s = _cosine_matrix(a, b)
    logits = s / tau
    logits -= logits.max(axis=1, keepdims=True)
    pr = np.exp(logits)
    pr /= pr.sum(axis=1, keepdims=True)
    logits_c = s / tau
    logits_c -= logits_c.max(axis=0, keepdims=True)
    pc = np.exp(logits_c)
    pc /= pc.sum(axis=0, keepdims=True)
    eye = np.eye(n)
    # average of text->flow (rows) and flow->text (columns)
    loss = -0.5 * float((np.log(pr[eye == 1]).mean()
                         + np.log(pc[eye == 1]).mean()))
    d_s = 0.5 * ((pr - eye) + (pc - eye)) / (n * tau)
    # back through cosine
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    an, bn = a / na, b / nb
    d_a = (d_s @ bn - (d_s * s).sum(axis=1, keepdims=True) * an) / na
    d_b = (d_s.T @ an - (d_s * s).sum(axis=0)[:, None] * bn) / nb
    return loss, d_a, d_b


# matcher model ----------------------------------------------------------------

@dataclass
class MatcherConfig:
    epochs: int = 80
    batch: int = 16
    lr: float = 3e-3
    tau: float = DEFAULT_TAU
    common_dim: int = COMMON_DIM
    seed: int = 0
    embedder: object = None  # text -> TextEmbedding; hashed fallback if None


class MatcherModel:
    """Projections into the common space plus the attention maps.

    The attention values are the common-space flow embeddings themselves
    (segment embeddings act as both key and value), so training aggregates
    stay in the exact space that build_index stores and query scores
    against; only the query/key maps are learned.
    """

    def __init__(self, text_dim, latent_dim, common_dim=COMMON_DIM,
                 tau=DEFAULT_TAU, seed=0):
        if not tau > 0:
            raise BadParam("temperature must be > 0")
        rng = np.random.default_rng(seed)
        self.text_dim = int(text_dim)
        self.latent_dim = int(latent_dim)
        self.common_dim = int(common_dim)
        self.tau = float(tau)
        self.params = {
            "Wt": rng.standard_normal((text_dim, common_dim)) * np.sqrt(1.0 / text_dim),
            "Wf": rng.standard_normal((latent_dim, common_dim)) * np.sqrt(1.0 / latent_dim),
            "Wq": rng.standard_normal((common_dim, common_dim)) * np.sqrt(1.0 / common_dim),
            "Wk": rng.standard_normal((common_dim, common_dim)) * np.sqrt(1.0 / common_dim),
        }
        self.loss_history: list[float] = []

    def project_text(self, text_vec):
        return np.asarray(text_vec, dtype=np.float64) @ self.params["Wt"]

    def project_flow(self, latents):
        return np.atleast_2d(np.asarray(latents, dtype=np.float64)) @ self.params["Wf"]

    def aggregate(self, text_vec, latents):
        """Caption-conditioned attention pool of one segment set."""
        t = self.project_text(text_vec)
        f = self.project_flow(latents)
        return cross_attention(t @ self.params["Wq"], f @ self.params["Wk"], f)


def matcher_loss_and_grads(model: MatcherModel, text_vecs, latent_sets):
    """Symmetric InfoNCE over one batch, with parameter gradients.

    text_vecs: (B, d_t); latent_sets: list of (n_i, latent_dim) arrays.
    """
    P = model.params
    bsz = len(latent_sets)
    scale = 1.0 / np.sqrt(model.common_dim)
    t = text_vecs @ P["Wt"]
    aggs = np.empty((bsz, model.common_dim))
    caches = []
    for i, z in enumerate(latent_sets):
        f = z @ P["Wf"]
        q = t[i] @ P["Wq"]
        k = f @ P["Wk"]
        a = _softmax(k @ q * scale)
        aggs[i] = a @ f
        caches.append((z, f, q, k, a))
    loss, d_t, d_agg = infonce_loss_and_grads(t, aggs, model.tau)
    grads = {name: np.zeros_like(arr) for name, arr in P.items()}
    for i, (z, f, q, k, a) in enumerate(caches):
        g = d_agg[i]
        d_a = f @ g
        d_logits = a * (d_a - float(a @ d_a))
        d_q = (k.T @ d_logits) * scale
        d_k = np.outer(d_logits, q) * scale
        grads["Wq"] += np.outer(t[i], d_q)
        d_t[i] += P["Wq"] @ d_q
        grads["Wk"] += f.T @ d_k
        d_f = d_k @ P["Wk"].T + np.outer(a, g)
        grads["Wf"] += z.T @ d_f
    grads["Wt"] += text_vecs.T @ d_t
    return loss, grads


def _corpus_latents(corpus, encoder: DaeModel, embedder):
    """(captions, text_vecs (B,d_t), latent sets) for a caption/segment corpus."""
    captions, text_vecs, latent_sets = [], [], []
    for caption, seg_set in corpus:
        captions.append(caption)
        text_vecs.append(embedder(caption).vector)
        if isinstance(seg_set, np.ndarray) and seg_set.ndim == 3:
            mats = seg_set  # pre-computed descriptors
        else:
            mats, _ = descriptors_for_segments(list(seg_set))
        latent_sets.append(encoder.encode_batch(mats))
    return captions, np.asarray(text_vecs), latent_sets


def train_matcher(corpus, encoder: DaeModel, cfg: MatcherConfig = None,
                  **overrides) -> MatcherModel:
    """Contrastive training of the common-space projections.

    corpus: list of (caption, segment set) pairs; segment sets may be
    Segment lists or pre-computed (n, 32, 32) descriptor arrays.  The
    flow encoder stays frozen; deterministic for a fixed seed.
    """
    cfg = cfg or MatcherConfig(**overrides)
    if len({c for c, _ in corpus}) < 2:
        raise BadParam("corpus needs >= 2 distinct captions")
    embedder = cfg.embedder or embed_text_fallback
    _, text_vecs, latent_sets = _corpus_latents(corpus, encoder, embedder)
    model = MatcherModel(text_dim=text_vecs.shape[1],
                         latent_dim=latent_sets[0].shape[1],
                         common_dim=cfg.common_dim, tau=cfg.tau, seed=cfg.seed)
    opt = Adam(model.params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    n = len(corpus)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, cfg.batch):
            idx = order[lo:lo + cfg.batch]
            if len(idx) < 2:
                continue
            loss, grads = matcher_loss_and_grads(
                model, text_vecs[idx], [latent_sets[i] for i in idx])
            opt.step(grads)
            losses.append(loss)
        model.loss_history.append(float(np.mean(losses)))
    return model


_MM_MAGIC = b"FQMM"
_MM_VERSION = 1
_MM_PARAM_ORDER = ("Wt", "Wf", "Wq", "Wk")


def save_matcher(model: MatcherModel, path) -> None:
    """Versioned binary: magic, dims, temperature, f32-LE parameter blobs."""
    try:
        with open(path, "wb") as fh:
            fh.write(_MM_MAGIC)
            fh.write(struct.pack("<IIIId", _MM_VERSION, model.text_dim,
                                 model.latent_dim, model.common_dim, model.tau))
            for name in _MM_PARAM_ORDER:
                fh.write(model.params[name].astype("<f4").tobytes())
    except OSError as e:
        raise IoError(str(e)) from e


def load_matcher(path) -> MatcherModel:
    try:
        blob = open(path, "rb").read()
    except OSError as e:
        raise IoError(str(e)) from e
    if blob[:4] != _MM_MAGIC:
        raise FormatError("not a matcher checkpoint")
    version, dt, dl, dc, tau = struct.unpack_from("<IIIId", blob, 4)
    if version != _MM_VERSION:
        raise FormatError(f"unsupported matcher version {version}")
    model = MatcherModel(text_dim=dt, latent_dim=dl, common_dim=dc, tau=tau)
    off = 4 + struct.calcsize("<IIIId")
    for name in _MM_PARAM_ORDER:
        shape = model.params[name].shape
        count = int(np.prod(shape))
        if off + 4 * count > len(blob):
            raise FormatError("matcher checkpoint truncated")
        model.params[name] = np.frombuffer(
            blob, dtype="<f4", count=count, offset=off).astype(np.float64).reshape(shape)
        off += 4 * count
    if off != len(blob):
        raise FormatError("matcher checkpoint has trailing bytes")
    return model


# match index ------------------------------------------------------------------

@dataclass
class MatchResult:
    segment_id: int
    score: float
    rank: int


@dataclass
class MatchIndex:
    """Immutable pre-encoded store of common-space segment embeddings."""

    ids: np.ndarray
    embeddings: np.ndarray          # (N, d_c), rows L2-normalized
    geometry: np.ndarray            # (N, n_ctrl, 3) float32 display polylines
    text_proj: np.ndarray           # (d_t, d_c) from the trained matcher
    embedder_kind: str = "hashed_fallback"
    fingerprint: str = dc_field(default="")

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if len(np.unique(self.ids)) != len(self.ids):
            raise BadParam("index ids must be unique")
        if not self.fingerprint:
            h = hashlib.blake2b(digest_size=16)
            h.update(self.ids.tobytes())
            h.update(self.embeddings.astype("<f4").tobytes())
            self.fingerprint = h.hexdigest()

    def __len__(self):
        return len(self.ids)


def build_index(segments, encoder: DaeModel, matcher: MatcherModel,
                ids=None) -> MatchIndex:
    """Encode every segment into the common space: descriptor -> latent ->
    flow projection -> L2 normalization."""
    mats, ctrl = descriptors_for_segments(list(segments))
    latents = encoder.encode_batch(mats)
    emb = matcher.project_flow(latents)
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    if ids is None:
        ids = np.arange(len(emb))
    return MatchIndex(ids=ids, embeddings=emb,
                      geometry=ctrl.astype(np.float32),
                      text_proj=matcher.params["Wt"].copy())


def query(index: MatchIndex, text: str, k: int, embedder=None) -> list[MatchResult]:
    """Exact top-k by cosine between the projected query text and the
    index embeddings; ties break toward the smaller segment id."""
    if k < 1:
        raise BadParam("k must be >= 1")
    if not text or not text.strip():
        raise EmptyQuery("query text is empty")
    if len(index) == 0:
        raise EmptyIndex("index holds no entries")
    embedder = embedder or make_embedder(index.embedder_kind)
    t = embedder(text).vector @ index.text_proj
    t = t / np.linalg.norm(t)
    scores = index.embeddings @ t
    order = np.lexsort((index.ids, -scores))[:k]
    return [MatchResult(segment_id=int(index.ids[i]), score=float(scores[i]),
                        rank=r + 1) for r, i in enumerate(order)]


# index persistence --------------------------------------------------------------

_IDX_MAGIC = b"FQIX"
_IDX_VERSION = 1
_KIND_CODES = {"hashed_fallback": 0, "external_service": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


def save_index(index: MatchIndex, path) -> None:
    n, dc = index.embeddings.shape
    dt = index.text_proj.shape[0]
    nctrl = index.geometry.shape[1] if len(index.geometry) else N_CONTROL
    try:
        with open(path, "wb") as fh:
            fh.write(_IDX_MAGIC)
            fh.write(struct.pack("<IIIIIB", _IDX_VERSION, n, dc, dt, nctrl,
                                 _KIND_CODES[index.embedder_kind]))
            fh.write(bytes.fromhex(index.fingerprint))
            fh.write(index.ids.astype("<i8").tobytes())
            fh.write(index.embeddings.astype("<f4").tobytes())
            fh.write(np.ascontiguousarray(index.geometry.astype("<f4")).tobytes())
            fh.write(index.text_proj.astype("<f4").tobytes())
    except OSError as e:
        raise IoError(str(e)) from e


def load_index(path) -> MatchIndex:
    try:
        blob = open(path, "rb").read()
    except OSError as e:
        raise IoError(str(e)) from e
    if blob[:4] != _IDX_MAGIC:
        raise FormatError("not a match index file")
    version, n, dc, dt, nctrl, kind = struct.unpack_from("<IIIIIB", blob, 4)
    if version != _IDX_VERSION:
        raise FormatError(f"unsupported index version {version}")
    off = 4 + struct.calcsize("<IIIIIB")
    fingerprint = blob[off:off + 16].hex()
    off += 16

    def take(dtype, count, shape):
        nonlocal off
        width = np.dtype(dtype).itemsize * count
        if off + width > len(blob):
            raise FormatError("index file truncated")
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=off)
        off += width
        return arr.reshape(shape)

    ids = take("<i8", n, (n,)).astype(np.int64)
    emb = take("<f4", n * dc, (n, dc)).astype(np.float64)
    geom = take("<f4", n * nctrl * 3, (n, nctrl, 3)).astype(np.float32)
    wt = take("<f4", dt * dc, (dt, dc)).astype(np.float64)
    if off != len(blob):
        raise FormatError("index file has trailing bytes")
    return MatchIndex(ids=ids, embeddings=emb, geometry=geom, text_proj=wt,
                      embedder_kind=_KIND_NAMES.get(kind, "hashed_fallback"),
                      fingerprint=fingerprint)
