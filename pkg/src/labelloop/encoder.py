"""Text embedding backends and the persistent embedding cache.

Every encoder maps text to a unit-L2 float64 vector of a fixed dimension
and is identified by an ``encoder_id`` string: two encoders with the same
id produce identical vectors for identical text.

Cache layout (one directory per encoder): ``meta.json`` holds the format
version, encoder id and dimension; ``data.bin`` is an append-only sequence
of records framed as

    [16-byte blake2b-128 digest of the UTF-8 text]
    [u32 LE dimension]
    [dim * f32 LE values]

The first 8 digest bytes double as the in-memory hash key; full digests
are compared on lookup so 64-bit key collisions stay correct. Values are
stored at float32 precision; the cached pipeline therefore canonicalizes
vectors at that precision (re-normalized in float64 on load) so hits and
misses return bit-identical vectors within and across processes.
"""

import hashlib
import json
import os
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .errors import CacheMismatchError, EncodingError, ParseError, ValidationError

_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)
_MIX_1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_2 = np.uint64(0x94D049BB133111EB)


@dataclass(frozen=True)
class EncoderDescriptor:
    encoder_id: str
    dim: int


class Encoder:
    """Common surface for embedding backends; subclasses set `descriptor`."""

    descriptor: EncoderDescriptor

    @property
    def dim(self) -> int:
        return self.descriptor.dim

    def encode(self, text: str) -> np.ndarray:
        raise NotImplementedError

    def encode_batch(self, texts) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.stack([self.encode(t) for t in texts])

    def encode_instance(self, instance) -> np.ndarray:
        return self.encode(instance.text)

    def encode_instances(self, instances) -> np.ndarray:
        if not instances:
            return np.zeros((0, self.dim))
        return np.stack([self.encode_instance(inst) for inst in instances])


def _mix64(h: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer, vectorized over uint64
    h = h.copy()
    h ^= h >> np.uint64(30)
    h *= _MIX_1
    h ^= h >> np.uint64(27)
    h *= _MIX_2
    h ^= h >> np.uint64(31)
    return h


class HashedNgramEncoder(Encoder):
    """Signed hashed character n-grams with term-frequency weighting.

    The UTF-8 bytes are wrapped in STX/ETX boundary markers so even
    single-character texts produce n-grams. Each n-gram (n in
    ``ngram_sizes``) is FNV-1a hashed and finalized with a splitmix64
    avalanche; the hash picks a bucket (``h % dim``) and a sign (top bit).
    Occurrence counts accumulate per bucket and the vector is
    L2-normalized. Pure arithmetic, so outputs are deterministic across
    processes and platforms.
    """

    def __init__(self, dim: int = 256, ngram_sizes=(2, 3, 4)):
        if dim < 2:
            raise ValidationError("encoder dim must be >= 2")
        self.ngram_sizes = tuple(ngram_sizes)
        ns = ",".join(str(n) for n in self.ngram_sizes)
        self.descriptor = EncoderDescriptor(
            encoder_id=f"hashed-ngram/v1/dim={dim}/n={ns}", dim=dim
        )

    def encode(self, text: str) -> np.ndarray:
        if not text:
            raise EncodingError("cannot encode empty text")
        data = np.frombuffer(b"\x02" + text.encode("utf-8") + b"\x03", dtype=np.uint8)
        dim = self.dim
        vec = np.zeros(dim)
        for n in self.ngram_sizes:
            if len(data) < n:
                continue
            count = len(data) - n + 1
            h = np.full(count, _FNV_OFFSET, dtype=np.uint64)
            for i in range(n):
                h = (h ^ data[i : i + count].astype(np.uint64)) * _FNV_PRIME
            h = _mix64(h)
            buckets = (h % np.uint64(dim)).astype(np.int64)
            signs = np.where(h >> np.uint64(63), -1.0, 1.0)
            vec += np.bincount(buckets, weights=signs, minlength=dim)
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise EncodingError(f"text hashed to a zero vector: {text!r}")
        return vec / norm


class LookupEncoder(Encoder):
    """Serves fixed vectors by key; `encode` treats the text as the key.

    Backs both precomputed sentence-encoder outputs and the synthetic
    bypass used in simulations. `encode_instance` looks up the instance id
    first and falls back to the text.
    """

    def __init__(self, table: dict[str, np.ndarray], encoder_id: str | None = None):
        if not table:
            raise ValidationError("lookup table must not be empty")
        dims = {len(v) for v in table.values()}
        if len(dims) != 1:
            raise ValidationError(f"lookup vectors have mixed dimensions {sorted(dims)}")
        dim = dims.pop()
        self._table = {}
        for key, vec in table.items():
            arr = np.asarray(vec, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite vector for key {key!r}")
            norm = np.linalg.norm(arr)
            if norm == 0:
                raise EncodingError(f"cannot normalize zero vector for key {key!r}")
            self._table[key] = arr / norm
        if encoder_id is None:
            digest = hashlib.blake2b(digest_size=8)
            for key in sorted(self._table):
                digest.update(key.encode("utf-8"))
                digest.update(self._table[key].astype("<f4").tobytes())
            encoder_id = f"lookup/v1/dim={dim}/digest={digest.hexdigest()}"
        self.descriptor = EncoderDescriptor(encoder_id=encoder_id, dim=dim)

    def encode(self, text: str) -> np.ndarray:
        vec = self._table.get(text)
        if vec is None:
            raise EncodingError(f"no vector for key {text!r}")
        return vec.copy()

    def encode_instance(self, instance) -> np.ndarray:
        vec = self._table.get(instance.id)
        if vec is not None:
            return vec.copy()
        return self.encode(instance.text)


def load_precomputed(source, delimiter: str = ",") -> dict[str, np.ndarray]:
    """Read delimited rows ``id, v1, ..., vd`` into normalized vectors.

    All rows must share one dimension; ragged rows and zero vectors raise
    with the line number.
    """
    if isinstance(source, str):
        with open(source, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    else:
        lines = [ln if isinstance(ln, str) else ln.decode("utf-8") for ln in source]
    table: dict[str, np.ndarray] = {}
    dim: int | None = None
    for lineno, raw in enumerate(lines, start=1):
        raw = raw.strip()
        if not raw:
            continue
        parts = raw.split(delimiter)
        if len(parts) < 2:
            raise ParseError("expected an id and at least one value", lineno)
        key = parts[0].strip()
        try:
            values = np.array([float(p) for p in parts[1:]])
        except ValueError:
            raise ParseError("non-numeric vector component", lineno)
        if dim is None:
            dim = len(values)
        elif len(values) != dim:
            raise ParseError(f"expected {dim} values, got {len(values)}", lineno)
        if key in table:
            raise ParseError(f"duplicate id {key!r}", lineno)
        norm = np.linalg.norm(values)
        if norm == 0:
            raise ParseError("cannot normalize zero vector", lineno)
        table[key] = values / norm
    if not table:
        raise ParseError("no vectors found", 1)
    return table


def _text_digest(text: str) -> bytes:
    return hashlib.blake2b(text.encode("utf-8"), digest_size=16).digest()


class EmbeddingCache:
    """Append-only on-disk key-value store of encoder outputs.

    Concurrent reads are lock-free (positional reads); writes are
    serialized behind a lock. Values are deterministic functions of the
    key, so last-writer-wins on races is harmless.
    """

    _META = "meta.json"
    _DATA = "data.bin"

    def __init__(self, path: str, descriptor: EncoderDescriptor, create: bool = True):
        self.path = path
        self.descriptor = descriptor
        self.hits = 0
        self.misses = 0
        self.stores = 0
        self._lock = threading.Lock()
        self._index: dict[int, list[tuple[bytes, int]]] = {}
        meta_path = os.path.join(path, self._META)
        data_path = os.path.join(path, self._DATA)
        if os.path.exists(meta_path):
            with open(meta_path, "r", encoding="utf-8") as fh:
                meta = json.load(fh)
            if meta.get("encoder_id") != descriptor.encoder_id or meta.get("dim") != descriptor.dim:
                raise CacheMismatchError(
                    f"cache at {path!r} was created for encoder "
                    f"{meta.get('encoder_id')!r} (dim {meta.get('dim')}), "
                    f"not {descriptor.encoder_id!r} (dim {descriptor.dim})"
                )
        elif create:
            os.makedirs(path, exist_ok=True)
            with open(meta_path, "w", encoding="utf-8") as fh:
                json.dump({"format": 1, "encoder_id": descriptor.encoder_id, "dim": descriptor.dim}, fh)
        else:
            raise CacheMismatchError(f"no cache at {path!r}")
        self._data_path = data_path
        self._record_size = 16 + 4 + 4 * descriptor.dim
        self._load_index()
        self._read_fd = os.open(data_path, os.O_RDONLY)

    def _load_index(self):
        if not os.path.exists(self._data_path):
            with open(self._data_path, "wb"):
                pass
        size = os.path.getsize(self._data_path)
        usable = size - (size % self._record_size)  # ignore a torn tail record
        with open(self._data_path, "rb") as fh:
            offset = 0
            while offset < usable:
                header = fh.read(20)
                digest, dim = header[:16], struct.unpack("<I", header[16:20])[0]
                if dim != self.descriptor.dim:
                    raise CacheMismatchError(f"cache record at offset {offset} has dim {dim}")
                key = int.from_bytes(digest[:8], "little")
                self._index.setdefault(key, []).append((digest, offset + 20))
                fh.seek(4 * dim, os.SEEK_CUR)
                offset += self._record_size

    def close(self):
        os.close(self._read_fd)

    def __len__(self) -> int:
        return sum(len(v) for v in self._index.values())

    def get(self, text: str) -> np.ndarray | None:
        digest = _text_digest(text)
        key = int.from_bytes(digest[:8], "little")
        for stored_digest, offset in self._index.get(key, ()):
            if stored_digest == digest:
                raw = os.pread(self._read_fd, 4 * self.descriptor.dim, offset)
                vec = np.frombuffer(raw, dtype="<f4").astype(np.float64)
                norm = np.linalg.norm(vec)
                if norm == 0:
                    raise EncodingError(f"cache holds a zero vector for {text!r}")
                self.hits += 1
                return vec / norm
        return None

    def put(self, text: str, vector: np.ndarray) -> np.ndarray:
        """Store at float32 precision; returns the canonical (quantized,
        re-normalized) vector that future `get` calls will serve."""
        if len(vector) != self.descriptor.dim:
            raise ValidationError(
                f"vector dim {len(vector)} does not match cache dim {self.descriptor.dim}"
            )
        digest = _text_digest(text)
        key = int.from_bytes(digest[:8], "little")
        payload = np.asarray(vector, dtype="<f4").tobytes()
        with self._lock:
            with open(self._data_path, "ab") as fh:
                offset = fh.tell() + 20
                fh.write(digest)
                fh.write(struct.pack("<I", self.descriptor.dim))
                fh.write(payload)
                fh.flush()
                os.fsync(fh.fileno())
            self._index.setdefault(key, []).append((digest, offset))
            self.stores += 1
        vec = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise EncodingError(f"vector for {text!r} quantized to zero")
        return vec / norm


def encode_batch_cached(texts, encoder: Encoder, cache: EmbeddingCache) -> np.ndarray:
    """Encode texts through the cache; result rows match input order.

    Hits are served from the store without recomputation; misses are
    computed, stored and returned in their canonical quantized form.
    """
    if cache.descriptor != encoder.descriptor:
        raise CacheMismatchError(
            f"cache encoder {cache.descriptor.encoder_id!r} does not match "
            f"{encoder.descriptor.encoder_id!r}"
        )
    out = np.zeros((len(texts), encoder.dim))
    for i, text in enumerate(texts):
        vec = cache.get(text)
        if vec is None:
            cache.misses += 1
            vec = cache.put(text, encoder.encode(text))
        out[i] = vec
    return out
