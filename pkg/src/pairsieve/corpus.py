"""Synthetic sentence-video corpora with planted correspondence tags.

Every record pairs one sentence feature vector with an ordered stack of
frame feature vectors, all composed from a shared bank of unit-norm
concept vectors. Each record carries a ground-truth tag (clean / loose /
noise) describing how well the two sides actually correspond -- the thing
scraped video data never exposes -- so gate behaviour downstream can be
checked against truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

TAGS = ("clean", "loose", "noise")

CORPUS_FORMAT = "pairsieve-corpus"
CORPUS_VERSION = 1


class CorpusError(ValueError):
    """Invalid corpus spec, malformed corpus file, or bad sampling request."""


def _unit(x):
    n = np.linalg.norm(x)
    if n < 1e-12:
        raise CorpusError("degenerate feature vector (norm ~ 0)")
    return x / n


@dataclass(frozen=True)
class ConceptBank:
    """K unit-norm concept vectors that compose sentences and frames."""

    concepts: np.ndarray  # (K, d)
    seed: int

    def validate(self):
        if self.concepts.ndim != 2 or self.concepts.shape[0] < 2:
            raise CorpusError("concept bank needs at least 2 vectors")
        norms = np.linalg.norm(self.concepts, axis=1)
        if not np.all(np.abs(norms - 1.0) <= 1e-9):
            raise CorpusError("concept vectors must be unit norm")
        if not np.all(np.isfinite(self.concepts)):
            raise CorpusError("concept vectors must be finite")


def build_concept_bank(k, d, seed):
    """Draw k random unit vectors of dimension d."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.default_rng(ss)
    raw = rng.normal(size=(k, d))
    concepts = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    bank = ConceptBank(concepts=concepts, seed=int(ss.entropy) if ss.entropy is not None else 0)
    bank.validate()
    return bank


@dataclass(eq=False)
class ClipRecord:
    """One sentence-video pair with its planted correspondence tag.

    frames_raw keeps temporal order; grounded marks the frames whose
    content the sentence actually describes (all False for noise pairs).
    """

    id: str
    sentence_raw: np.ndarray  # (d,)
    frames_raw: np.ndarray    # (F, d)
    tag: str
    grounded: np.ndarray      # (F,) bool

    def validate(self):
        if self.tag not in TAGS:
            raise CorpusError(f"record {self.id}: unknown tag {self.tag!r}")
        if self.frames_raw.ndim != 2 or self.frames_raw.shape[0] < 1:
            raise CorpusError(f"record {self.id}: frames must be a non-empty 2-d stack")
        d = self.sentence_raw.shape[0]
        if self.frames_raw.shape[1] != d:
            raise CorpusError(f"record {self.id}: frame dimension != sentence dimension")
        if self.grounded.shape[0] != self.frames_raw.shape[0]:
            raise CorpusError(f"record {self.id}: grounded mask length != frame count")
        if not (np.all(np.isfinite(self.sentence_raw)) and np.all(np.isfinite(self.frames_raw))):
            raise CorpusError(f"record {self.id}: non-finite feature values")
        if self.tag == "noise" and self.grounded.any():
            raise CorpusError(f"record {self.id}: noise records cannot have grounded frames")
        if self.tag == "clean" and self.grounded.sum() * 2 < self.frames_raw.shape[0]:
            raise CorpusError(f"record {self.id}: clean records need >= half the frames grounded")


def records_equal(a, b):
    """Exact field-for-field equality (floats bit-identical)."""
    return (
        a.id == b.id
        and a.tag == b.tag
        and np.array_equal(a.sentence_raw, b.sentence_raw)
        and np.array_equal(a.frames_raw, b.frames_raw)
        and np.array_equal(a.grounded, b.grounded)
    )


@dataclass(frozen=True)
class CorpusSpec:
    """Knobs of the synthetic corpus generator."""

    n_train: int = 2000
    n_test: int = 100
    d: int = 32
    k: int = 50
    frac_clean: float = 0.5
    frac_loose: float = 0.3
    frac_noise: float = 0.2
    concepts_per_pair: int = 3
    feature_noise_sigma: float = 0.05
    frame_len_min: int = 4
    frame_len_max: int = 10
    seed: int = 0

    def validate(self):
        fracs = (self.frac_clean, self.frac_loose, self.frac_noise)
        if any(f < 0 for f in fracs):
            raise CorpusError("frac_clean/frac_loose/frac_noise must be nonnegative")
        if abs(sum(fracs) - 1.0) > 1e-12:
            raise CorpusError(
                f"frac_clean/frac_loose/frac_noise must sum to 1 (got {sum(fracs)!r})"
            )
        if self.n_test < 1:
            raise CorpusError("n_test must be >= 1")
        if self.n_train < 0:
            raise CorpusError("n_train must be >= 0")
        if self.d < 2:
            raise CorpusError("d must be >= 2")
        if self.concepts_per_pair < 1:
            raise CorpusError("concepts_per_pair must be >= 1")
        if self.k < 2 * self.concepts_per_pair:
            raise CorpusError("k must be >= 2 * concepts_per_pair so distractors exist")
        if self.frame_len_min < 1 or self.frame_len_max < self.frame_len_min:
            raise CorpusError("need 1 <= frame_len_min <= frame_len_max")
        if self.feature_noise_sigma < 0:
            raise CorpusError("feature_noise_sigma must be >= 0")


def _perturbed_unit(concepts, subset, sigma, rng):
    # unit-norm composition of the subset, jittered, then re-normalized
    base = _unit(concepts[subset].sum(axis=0))
    if sigma > 0:
        base = _unit(base + sigma * rng.normal(size=base.shape))
    return base


def _make_record(rec_id, tag, bank, spec, rng):
    m = spec.concepts_per_pair
    concepts = bank.concepts
    n_frames = int(rng.integers(spec.frame_len_min, spec.frame_len_max + 1))
    own = rng.choice(spec.k, size=m, replace=False)
    rest = np.setdiff1d(np.arange(spec.k), own)
    sentence = _perturbed_unit(concepts, own, spec.feature_noise_sigma, rng)

    frames = np.empty((n_frames, spec.d))
    grounded = np.zeros(n_frames, dtype=bool)
    if tag == "clean":
        n_grounded = int(rng.integers((n_frames + 1) // 2, n_frames + 1))
        grounded[rng.choice(n_frames, size=n_grounded, replace=False)] = True
        for i in range(n_frames):
            subset = own if grounded[i] else rng.choice(rest, size=m, replace=False)
            frames[i] = _perturbed_unit(concepts, subset, spec.feature_noise_sigma, rng)
    elif tag == "loose":
        g = int(rng.integers(n_frames))
        grounded[g] = True
        shared = own[int(rng.integers(m))]
        for i in range(n_frames):
            if i == g:
                subset = np.concatenate(
                    [[shared], rng.choice(rest, size=m - 1, replace=False)]
                ).astype(int)
            else:
                subset = rng.choice(rest, size=m, replace=False)
            frames[i] = _perturbed_unit(concepts, subset, spec.feature_noise_sigma, rng)
    elif tag == "noise":
        for i in range(n_frames):
            subset = rng.choice(rest, size=m, replace=False)
            frames[i] = _perturbed_unit(concepts, subset, spec.feature_noise_sigma, rng)
    else:
        raise CorpusError(f"unknown tag {tag!r}")

    record = ClipRecord(
        id=rec_id, sentence_raw=sentence, frames_raw=frames, tag=tag, grounded=grounded
    )
    record.validate()
    return record


def generate_corpus(spec):
    """Generate (train, test) record lists; deterministic given spec.seed.

    Clean pairs ground the sentence's full concept subset in >= half the
    frames, loose pairs share exactly one concept with a single grounded
    frame, noise pairs share nothing. Test records are always clean.
    """
    spec.validate()
    root = np.random.SeedSequence(spec.seed)
    ss_bank, ss_train, ss_test = root.spawn(3)
    bank = build_concept_bank(spec.k, spec.d, ss_bank)

    rng_train = np.random.default_rng(ss_train)
    probs = np.array([spec.frac_clean, spec.frac_loose, spec.frac_noise])
    tag_idx = rng_train.choice(len(TAGS), size=spec.n_train, p=probs / probs.sum())
    train = [
        _make_record(f"train-{i:05d}", TAGS[tag_idx[i]], bank, spec, rng_train)
        for i in range(spec.n_train)
    ]

    rng_test = np.random.default_rng(ss_test)
    test = [
        _make_record(f"test-{i:04d}", "clean", bank, spec, rng_test)
        for i in range(spec.n_test)
    ]
    return train, test


def save_corpus(records, path):
    """Write records as line-delimited JSON; floats round-trip exactly."""
    d = int(records[0].sentence_raw.shape[0]) if records else 0
    with open(path, "w") as fh:
        fh.write(json.dumps({"format": CORPUS_FORMAT, "version": CORPUS_VERSION, "d": d}) + "\n")
        for rec in records:
            line = json.dumps(
                {
                    "id": rec.id,
                    "tag": rec.tag,
                    "sentence": rec.sentence_raw.tolist(),
                    "frames": rec.frames_raw.tolist(),
                    "grounded": [int(g) for g in rec.grounded],
                }
            )
            fh.write(line + "\n")


def _parse_record_line(obj, lineno, d_expected):
    for field in ("id", "tag", "sentence", "frames", "grounded"):
        if field not in obj:
            raise CorpusError(f"line {lineno}: missing field {field!r}")
    sentence = np.asarray(obj["sentence"], dtype=float)
    if sentence.ndim != 1:
        raise CorpusError(f"line {lineno}: field 'sentence' is not a flat vector")
    frames_list = obj["frames"]
    if not frames_list:
        raise CorpusError(f"line {lineno}: field 'frames' is empty")
    lengths = {len(f) for f in frames_list}
    if len(lengths) != 1:
        raise CorpusError(f"line {lineno}: field 'frames' has mixed dimensions {sorted(lengths)}")
    frames = np.asarray(frames_list, dtype=float)
    if d_expected is not None and (sentence.shape[0] != d_expected or frames.shape[1] != d_expected):
        raise CorpusError(
            f"line {lineno}: dimension mismatch (header d={d_expected}, "
            f"sentence d={sentence.shape[0]}, frames d={frames.shape[1]})"
        )
    grounded = np.asarray(obj["grounded"], dtype=bool)
    record = ClipRecord(
        id=str(obj["id"]), sentence_raw=sentence, frames_raw=frames,
        tag=str(obj["tag"]), grounded=grounded,
    )
    record.validate()
    return record


def load_corpus(path):
    """Load a corpus file; an empty file is an empty corpus."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        return []
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorpusError(f"line 1: invalid header: {exc}") from exc
    if header.get("format") != CORPUS_FORMAT:
        raise CorpusError(f"line 1: not a {CORPUS_FORMAT} file")
    if header.get("version") != CORPUS_VERSION:
        raise CorpusError(f"line 1: unsupported corpus version {header.get('version')!r}")
    d = header.get("d")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"line {lineno}: invalid record: {exc}") from exc
        records.append(_parse_record_line(obj, lineno, d))
    return records


@dataclass
class PairBatch:
    """A balanced batch of (sentence_index, clip_index, label) triples."""

    sentence_idx: np.ndarray  # (B,) int
    clip_idx: np.ndarray      # (B,) int
    labels: np.ndarray        # (B,) int; 1 = matched, 0 = mismatched

    def validate(self):
        b = self.labels.shape[0]
        if self.sentence_idx.shape[0] != b or self.clip_idx.shape[0] != b:
            raise CorpusError("batch index arrays must share one length")
        if self.labels.sum() * 2 != b:
            raise CorpusError("batch must be half positives, half negatives")
        pos = self.labels == 1
        if not np.all(self.sentence_idx[pos] == self.clip_idx[pos]):
            raise CorpusError("positive entries must pair a clip with its own sentence")
        if np.any(self.sentence_idx[~pos] == self.clip_idx[~pos]):
            raise CorpusError("negative entries must not pair a clip with its own sentence")


def sample_training_batch(corpus, batch_size, rng, positive_clips=None):
    """Draw a balanced batch: half own-sentence pairs, half mismatched.

    Negative sentences are uniform over the corpus excluding the clip's
    own sentence. positive_clips pins the positive half (the epoch walk
    uses this to cover every clip); otherwise positives are uniform.
    """
    n = len(corpus)
    if batch_size < 2 or batch_size % 2 != 0:
        raise CorpusError("batch_size must be even and >= 2")
    if n < 2:
        raise CorpusError("corpus must have >= 2 clips so negatives exist")
    half = batch_size // 2
    if positive_clips is None:
        pos_clips = rng.integers(0, n, size=half)
    else:
        pos_clips = np.asarray(positive_clips, dtype=int)
        if pos_clips.shape[0] != half:
            raise CorpusError("positive_clips must have batch_size/2 entries")
    neg_clips = rng.integers(0, n, size=half)
    neg_sents = rng.integers(0, n - 1, size=half)
    neg_sents = neg_sents + (neg_sents >= neg_clips)  # skip the clip's own sentence
    batch = PairBatch(
        sentence_idx=np.concatenate([pos_clips, neg_sents]),
        clip_idx=np.concatenate([pos_clips, neg_clips]),
        labels=np.concatenate([np.ones(half, dtype=int), np.zeros(half, dtype=int)]),
    )
    batch.validate()
    return batch


def epoch_batches(corpus, batch_size, rng):
    """Yield one epoch of batches covering every clip as a positive.

    Clips are visited in a fresh random order; the last batch wraps
    around so all batches keep the exact half/half balance.
    """
    n = len(corpus)
    half = batch_size // 2
    perm = rng.permutation(n)
    n_batches = math.ceil(n / half)
    for b in range(n_batches):
        idx = np.arange(b * half, (b + 1) * half) % n
        yield sample_training_batch(corpus, batch_size, rng, positive_clips=perm[idx])


def sample_frames(clip, n_f, rng):
    """Sample n_f frames from a clip, preserving temporal order.

    With enough frames the draw is without replacement; short clips keep
    every frame and fill the shortfall by uniform reuse.
    """
    if n_f < 1:
        raise CorpusError("n_f must be >= 1")
    n = clip.frames_raw.shape[0]
    if n < 1:
        raise CorpusError(f"clip {clip.id} has no frames")
    if n >= n_f:
        idx = np.sort(rng.choice(n, size=n_f, replace=False))
    else:
        idx = np.sort(np.concatenate([np.arange(n), rng.integers(0, n, size=n_f - n)]))
    return clip.frames_raw[idx]
