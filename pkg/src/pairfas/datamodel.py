"""Dataset records, on-disk formats and the seeded synthetic generator."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DataIntegrityError, ParseError, ValidationError

log = logging.getLogger(__name__)

EMB_MAGIC = b"EMB1"


class Label(str, Enum):
    LIVE = "Live"
    ATTACK = "Attack"

    @property
    def numeric(self) -> int:
        return 1 if self is Label.LIVE else 0


class AttackCategory(str, Enum):
    PIXEL_LEVEL = "PixelLevel"
    SEMANTIC_LEVEL = "SemanticLevel"
    VIDEO_DRIVEN = "VideoDriven"
    FACE_SWAP = "FaceSwap"
    ATTRIBUTE_EDIT = "AttributeEdit"
    REPLAY = "Replay"
    CUTOUTS = "Cutouts"
    PRINT = "Print"
    LIVE = "Live"


ATTACK_CATEGORIES: Tuple[AttackCategory, ...] = tuple(c for c in AttackCategory if c is not AttackCategory.LIVE)

# Attacks that keep the subject's identity in face-recognition space.
IDENTITY_PRESERVING = frozenset(
    {AttackCategory.PIXEL_LEVEL, AttackCategory.SEMANTIC_LEVEL, AttackCategory.VIDEO_DRIVEN}
)


@dataclass(frozen=True, eq=False)
class Sample:
    id: str
    identity: str
    label: Label
    category: AttackCategory
    valid: bool
    image: np.ndarray  # H x W x 3, float64 in [0, 1]

    def __post_init__(self):
        if (self.label is Label.LIVE) != (self.category is AttackCategory.LIVE):
            raise ValidationError(
                f"sample {self.id!r}: label {self.label.value} inconsistent with category {self.category.value}"
            )

    @property
    def is_live(self) -> bool:
        return self.label is Label.LIVE

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            (self.id, self.identity, self.label, self.category, self.valid)
            == (other.id, other.identity, other.label, other.category, other.valid)
            and self.image.shape == other.image.shape
            and np.array_equal(self.image, other.image)
        )

    __hash__ = None


class EmbeddingStore(Mapping):
    """Immutable id -> vector map with one shared dimension."""

    def __init__(self, ids: Sequence[str], vectors: np.ndarray, stale_count: int = 0):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(ids):
            raise DataIntegrityError(f"embedding matrix {vectors.shape} does not match {len(ids)} ids")
        self.ids: Tuple[str, ...] = tuple(ids)
        self._index = {k: i for i, k in enumerate(self.ids)}
        if len(self._index) != len(self.ids):
            raise DataIntegrityError("duplicate id in embedding store")
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(norms == 0):
            bad = self.ids[int(np.flatnonzero(norms == 0)[0])]
            raise DataIntegrityError(f"embedding {bad!r} has zero norm")
        vectors.setflags(write=False)
        self.vectors = vectors
        self.stale_count = stale_count

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __getitem__(self, key: str) -> np.ndarray:
        return self.vectors[self._index[key]]

    def __iter__(self) -> Iterator[str]:
        return iter(self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    def matrix(self, ids: Sequence[str]) -> np.ndarray:
        return self.vectors[[self._index[k] for k in ids]]

    def __eq__(self, other):
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return self.ids == other.ids and np.array_equal(self.vectors, other.vectors)

    __hash__ = None


@dataclass(frozen=True)
class SynthConfig:
    n_identities: int = 40
    lives_per_identity: int = 4
    attacks_per_identity_per_category: Dict[str, int] = field(
        default_factory=lambda: {
            "PixelLevel": 10,
            "SemanticLevel": 5,
            "VideoDriven": 4,
            "FaceSwap": 3,
            "AttributeEdit": 2,
            "Replay": 1,
            "Cutouts": 1,
            "Print": 1,
        }
    )
    image_size: int = 16
    embedding_dim: int = 512
    identity_spread: float = 1.5
    attack_offset: float = 1.5
    noise_scale: float = 0.15
    orphan_attack_fraction: float = 0.5
    invalid_live_fraction: float = 0.1
    seed: int = 0
    id_prefix: str = ""

    def __post_init__(self):
        if not 0.0 <= self.orphan_attack_fraction <= 1.0:
            raise ConfigError("orphan_attack_fraction must be in [0, 1]")
        if not 0.0 <= self.invalid_live_fraction < 1.0:
            raise ConfigError("invalid_live_fraction must be in [0, 1)")
        if self.n_identities < 0 or self.lives_per_identity < 0:
            raise ConfigError("counts must be non-negative")
        if self.image_size < 8:
            raise ConfigError("image_size must be >= 8")
        if self.embedding_dim < 2:
            raise ConfigError("embedding_dim must be >= 2")
        for name, count in self.attacks_per_identity_per_category.items():
            category = parse_category(name)
            if category is AttackCategory.LIVE:
                raise ConfigError("Live is not an attack category")
            if count < 0:
                raise ConfigError(f"negative attack count for {name}")
        if min(self.identity_spread, self.attack_offset, self.noise_scale) < 0:
            raise ConfigError("spread/offset/noise scales must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**d)


def parse_category(value: str) -> AttackCategory:
    try:
        return AttackCategory(value)
    except ValueError:
        raise ValidationError(f"unknown category {value!r}") from None


def parse_label(value: str) -> Label:
    try:
        return Label(value)
    except ValueError:
        raise ValidationError(f"unknown label {value!r}") from None


# --------------------------------------------------------------------------
# Manifest I/O
# --------------------------------------------------------------------------

def _is_meta(record: dict) -> bool:
    return "_meta" in record and "id" not in record


def _read_raw_image(path: Path, height: int, width: int) -> np.ndarray:
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != height * width * 3:
        raise DataIntegrityError(f"{path}: expected {height * width * 3} floats, found {raw.size}")
    return raw.astype(np.float64).reshape(height, width, 3)


def load_manifest(path) -> List[Sample]:
    """Parse a JSONL manifest.

    Lines holding a ``_meta`` header record are skipped. Images are either an
    inline pixel array or a path (relative to the manifest) of a raw f32 file.
    """
    path = Path(path)
    samples: List[Sample] = []
    seen = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise ValueError("not an object")
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: malformed line ({exc})") from None
            if _is_meta(rec):
                continue
            try:
                sid = str(rec["id"])
                height, width = int(rec["height"]), int(rec["width"])
                image_field = rec["image"]
                label = parse_label(rec["label"])
                category = parse_category(rec["category"])
                identity = str(rec["identity"])
                valid = bool(rec["valid"])
            except KeyError as exc:
                raise ParseError(f"{path}:{lineno}: missing field {exc}") from None
            if sid in seen:
                raise DataIntegrityError(f"{path}:{lineno}: duplicate id {sid!r}")
            seen.add(sid)
            if isinstance(image_field, str):
                image = _read_raw_image(path.parent / image_field, height, width)
            else:
                image = np.asarray(image_field, dtype=np.float64)
                if image.size != height * width * 3:
                    raise ParseError(f"{path}:{lineno}: image has {image.size} values, expected {height * width * 3}")
                image = image.reshape(height, width, 3)
            if image.size and (image.min() < 0.0 or image.max() > 1.0):
                raise ValidationError(f"{path}:{lineno}: pixel values outside [0, 1]")
            try:
                samples.append(Sample(sid, identity, label, category, valid, image))
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
    return samples


def write_manifest(path, samples: Iterable[Sample], meta: Optional[dict] = None, raw_image_dir: Optional[str] = None):
    """Write samples as JSONL; inline pixels unless ``raw_image_dir`` is given."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if raw_image_dir is not None:
        (path.parent / raw_image_dir).mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
        for s in samples:
            h, w = s.image.shape[:2]
            if raw_image_dir is not None:
                rel = f"{raw_image_dir}/{s.id}.f32"
                s.image.astype("<f4").tofile(path.parent / rel)
                image_field = rel
            else:
                image_field = s.image.ravel().tolist()
            rec = {
                "id": s.id,
                "identity": s.identity,
                "label": s.label.value,
                "category": s.category.value,
                "valid": s.valid,
                "width": w,
                "height": h,
                "image": image_field,
            }
            fh.write(json.dumps(rec) + "\n")


# --------------------------------------------------------------------------
# Embedding I/O
# --------------------------------------------------------------------------

def load_embeddings(path, manifest_ids: Optional[Iterable[str]] = None) -> EmbeddingStore:
    """Load embeddings from JSONL or the ``EMB1`` binary format.

    Ids absent from ``manifest_ids`` are kept but counted in
    ``store.stale_count``.
    """
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(4)
    if head == EMB_MAGIC:
        ids, vectors = _read_binary(path)
    else:
        ids, vectors = _read_jsonl(path)
    stale = 0
    if manifest_ids is not None:
        known = set(manifest_ids)
        stale = sum(1 for k in ids if k not in known)
        if stale:
            log.warning("%s: %d embeddings have no manifest entry", path, stale)
    return EmbeddingStore(ids, vectors, stale_count=stale)


def _read_jsonl(path: Path):
    ids, rows, dim = [], [], None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: malformed line ({exc})") from None
            if _is_meta(rec):
                continue
            try:
                vec = [float(v) for v in rec["vector"]]
                sid = str(rec["id"])
            except (KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: bad record ({exc})") from None
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise DataIntegrityError(f"{path}:{lineno}: dimension {len(vec)} != {dim}")
            ids.append(sid)
            rows.append(vec)
    return ids, np.asarray(rows, dtype=np.float64).reshape(len(rows), dim or 0)


def _read_binary(path: Path):
    data = path.read_bytes()
    if len(data) < 8:
        raise ParseError(f"{path}: truncated header")
    (dim,) = struct.unpack_from("<I", data, 4)
    off = 8
    ids, rows = [], []
    while off < len(data):
        if off + 4 > len(data):
            raise ParseError(f"{path}: truncated record at byte {off}")
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        end = off + n + 4 * dim
        if end > len(data):
            raise ParseError(f"{path}: truncated record at byte {off - 4}")
        ids.append(data[off:off + n].decode("utf-8"))
        off += n
        rows.append(np.frombuffer(data, dtype="<f4", count=dim, offset=off))
        off += 4 * dim
    vectors = np.vstack(rows).astype(np.float64) if rows else np.zeros((0, dim))
    return ids, vectors


def write_embeddings_jsonl(path, store: EmbeddingStore, meta: Optional[dict] = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
        for sid, vec in zip(store.ids, store.vectors):
            fh.write(json.dumps({"id": sid, "vector": vec.tolist()}) + "\n")


def write_embeddings_binary(path, store: EmbeddingStore):
    """Write the ``EMB1`` format; vectors are narrowed to f32."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    parts = [EMB_MAGIC, struct.pack("<I", store.dim)]
    for sid, vec in zip(store.ids, store.vectors):
        raw = sid.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(vec.astype("<f4").tobytes())
    path.write_bytes(b"".join(parts))


# --------------------------------------------------------------------------
# Synthetic generator
# --------------------------------------------------------------------------

# Relative embedding noise per identity-preserving category; VideoDriven
# straddles the default 0.9 threshold so filtering removes part of it.
_EMBED_NOISE = {
    AttackCategory.PIXEL_LEVEL: (0.5, 2.0),
    AttackCategory.SEMANTIC_LEVEL: (1.0, 3.0),
    AttackCategory.VIDEO_DRIVEN: (1.5, 4.0),
}


def _f32(x: np.ndarray) -> np.ndarray:
    """Round to float32 precision so raw-f32 and binary encodings are exact."""
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


class _Painter:
    """Image synthesis for one dataset: identity patterns plus attack artifacts."""

    def __init__(self, size: int, rng: np.random.Generator):
        self.size = size
        self.rng = rng
        yy, xx = np.mgrid[0:size, 0:size] / size
        self.yy, self.xx = yy, xx
        self.checker = np.where((np.arange(size)[:, None] + np.arange(size)[None, :]) % 2 == 0, 1.0, -1.0)

    def identity_pattern(self) -> np.ndarray:
        rng = self.rng
        img = np.full((self.size, self.size, 3), 0.5)
        for _ in range(3):
            fx, fy = rng.uniform(0.3, 1.5, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            wave = np.sin(2 * np.pi * (fx * self.xx + fy * self.yy) + phase)
            img += rng.uniform(0.04, 0.09) * wave[..., None] * rng.uniform(0.6, 1.0, size=3)
        img += rng.uniform(-0.08, 0.08, size=3)
        return np.clip(img, 0.15, 0.85)

    def live(self, base: np.ndarray) -> np.ndarray:
        rng = self.rng
        shade = rng.uniform(-0.03, 0.03) * (self.xx - 0.5)
        img = base + shade[..., None] + rng.normal(0.0, 0.012, size=base.shape)
        return np.clip(img, 0.0, 1.0)

    def invalid(self) -> np.ndarray:
        return self.rng.uniform(0.0, 1.0, size=(self.size, self.size, 3))

    def _rect(self, min_frac: float, max_frac: float):
        s = self.size
        h = int(self.rng.integers(int(min_frac * s), int(max_frac * s) + 1))
        w = int(self.rng.integers(int(min_frac * s), int(max_frac * s) + 1))
        y = int(self.rng.integers(0, s - h + 1))
        x = int(self.rng.integers(0, s - w + 1))
        return slice(y, y + h), slice(x, x + w)

    def attack(self, base: np.ndarray, category: AttackCategory, other: np.ndarray) -> np.ndarray:
        rng = self.rng
        img = self.live(base)
        if category is AttackCategory.PIXEL_LEVEL:
            img = img + rng.uniform(-0.06, 0.06, size=img.shape)
        elif category is AttackCategory.SEMANTIC_LEVEL:
            ys, xs = self._rect(0.3, 0.6)
            img[ys, xs] += rng.uniform(-0.15, 0.15, size=3)
        elif category is AttackCategory.VIDEO_DRIVEN:
            rows = np.where(np.arange(self.size) % 2 == 0, 0.05, -0.05)
            img = img + rows[:, None, None]
        elif category is AttackCategory.FACE_SWAP:
            ys, xs = self._rect(0.4, 0.6)
            img[ys, xs] = 0.7 * other[ys, xs] + 0.3 * img[ys, xs]
        elif category is AttackCategory.ATTRIBUTE_EDIT:
            ys, _ = self._rect(0.2, 0.3)
            img[ys, :] += 0.2
        elif category is AttackCategory.REPLAY:
            moire = np.sin(2 * np.pi * (0.45 * self.size * self.xx + 0.3 * self.size * self.yy))
            img = img + 0.08 * moire[..., None]
        elif category is AttackCategory.PRINT:
            img = 0.5 + 0.7 * (img - 0.5)
            dots = ((np.arange(self.size)[:, None] % 2 == 0) & (np.arange(self.size)[None, :] % 2 == 0))
            img = img - 0.08 * dots[..., None]
        elif category is AttackCategory.CUTOUTS:
            ys, xs = self._rect(0.2, 0.35)
            img[ys, xs] = 0.05
        # Weak trace every attack pipeline leaves (resampling/recapture grid).
        img = img + rng.uniform(0.02, 0.05) * self.checker[..., None]
        return np.clip(img, 0.0, 1.0)


def generate_synthetic(config: SynthConfig) -> Tuple[List[Sample], EmbeddingStore]:
    """Seeded stand-in for a labelled face dataset and its face embeddings.

    Embeddings: one center per identity; lives and identity-preserving attacks
    (PixelLevel, SemanticLevel, VideoDriven) scatter around it, the other
    categories land far from every live center, either via ``attack_offset``
    or, with probability ``orphan_attack_fraction``, by belonging to an
    orphan identity that has no live samples. Images are generated
    independently of embeddings: each identity has a smooth base pattern and
    each attack category adds its own artifact on top of a weak trace shared
    by all attacks.
    """
    rng = np.random.default_rng(config.seed)
    d = config.embedding_dim
    painter = _Painter(config.image_size, rng)
    anchor = _unit(rng.normal(size=d))
    sqd = np.sqrt(d)

    def center():
        return _unit(anchor + config.identity_spread * rng.normal(size=d) / sqd)

    def around(c, rel):
        v = c + rel * rng.normal(size=d) / sqd
        return v * rng.uniform(0.8, 1.2)

    counts = {parse_category(k): v for k, v in config.attacks_per_identity_per_category.items()}
    samples: List[Sample] = []
    ids: List[str] = []
    vecs: List[np.ndarray] = []
    p = config.id_prefix
    n_orphans = 0

    def emit(sid, identity, category, valid, image, vec):
        label = Label.LIVE if category is AttackCategory.LIVE else Label.ATTACK
        samples.append(Sample(sid, identity, label, category, valid, _f32(image)))
        ids.append(sid)
        vecs.append(vec)

    patterns = [painter.identity_pattern() for _ in range(config.n_identities)]
    for i in range(config.n_identities):
        identity = f"{p}id{i:04d}"
        c = center()
        base = patterns[i]
        for k in range(config.lives_per_identity):
            valid = rng.uniform() >= config.invalid_live_fraction
            image = painter.live(base) if valid else painter.invalid()
            vec = around(c, config.noise_scale) if valid else around(center(), config.noise_scale)
            emit(f"{identity}-live{k:02d}", identity, AttackCategory.LIVE, valid, image, vec)
        for category in ATTACK_CATEGORIES:
            for k in range(counts.get(category, 0)):
                other = patterns[int(rng.integers(len(patterns)))] if patterns else base
                image = painter.attack(base, category, other)
                owner = identity
                if category in IDENTITY_PRESERVING:
                    lo, hi = _EMBED_NOISE[category]
                    vec = around(c, config.noise_scale * rng.uniform(lo, hi))
                elif rng.uniform() < config.orphan_attack_fraction:
                    owner = f"{p}orphan{n_orphans:05d}"
                    n_orphans += 1
                    vec = around(center(), config.noise_scale)
                else:
                    vec = around(c, config.attack_offset * rng.uniform(0.25, 1.0))
                sid = f"{identity}-{category.value}{k:02d}"
                emit(sid, owner, category, True, image, vec)

    store = EmbeddingStore(ids, _f32(np.asarray(vecs).reshape(len(vecs), d)))
    return samples, store


def validation_config(config: SynthConfig, n_identities: int) -> SynthConfig:
    """Config for a validation split with a disjoint identity namespace."""
    return replace(config, n_identities=n_identities, seed=config.seed + 7919, id_prefix=f"{config.id_prefix}val-")
