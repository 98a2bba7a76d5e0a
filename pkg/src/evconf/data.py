"""Datasets of sentence-vector sequences.

Each example is a dialogue: a T x d matrix of precomputed sentence vectors
plus an integer class label.  Synthetic cohorts draw sentence vectors from
per-class Gaussians so that sequence pooling and sub-dialogue slicing
behave like the real pipeline without restricted corpora.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ParseError
from .numeric import SeededStream

__all__ = [
    "DialogueExample",
    "SyntheticSpec",
    "SplitSpec",
    "AUGMENT_PRESETS",
    "generate_synthetic",
    "sub_dialogue_shuffle",
    "balance_augment",
    "split",
    "save_examples",
    "load_examples",
]

DATASET_FORMAT = "evconf-dataset"
DATASET_VERSION = 1

# Sub-dialogue counts per positive example for the two clinical protocols.
AUGMENT_PRESETS = {
    "adress": {1: 100},
    "daicwoz": {1: 500},
}


@dataclass
class DialogueExample:
    id: str
    features: np.ndarray
    label: int

    def __post_init__(self):
        if not self.id or any(ch.isspace() for ch in self.id):
            raise ContractError("example id must be non-empty and whitespace-free")
        feats = np.asarray(self.features, dtype=float)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise ContractError("features must be a T x d matrix with T, d >= 1")
        if not np.all(np.isfinite(feats)):
            raise ContractError("features must be finite")
        if self.label < 0:
            raise ContractError("label must be a non-negative class index")
        feats = feats.copy()
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)

    @property
    def length(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def pooled(self) -> np.ndarray:
        """Mean over the sentence axis; the classifier input."""
        return self.features.mean(axis=0)


@dataclass
class SyntheticSpec:
    """Per-class Gaussian dialogue generator.

    Class means default to scaled axis unit vectors arranged so every pair
    of classes sits ``separation * noise_scale`` apart; ``separation`` is
    the overlap knob (0 gives a chance-level task).
    """

    class_counts: tuple[int, ...] = (150, 150)
    feature_dim: int = 16
    seq_len_range: tuple[int, int] = (4, 12)
    separation: float = 1.0
    noise_scale: float = 1.0
    class_means: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        self.class_counts = tuple(int(c) for c in self.class_counts)
        if len(self.class_counts) < 2 or any(c < 1 for c in self.class_counts):
            raise ContractError("need at least two classes with counts >= 1")
        lo, hi = self.seq_len_range
        if lo < 1 or hi < lo:
            raise ContractError("sequence-length range must satisfy 1 <= T_min <= T_max")
        if self.feature_dim < 1:
            raise ContractError("feature_dim must be >= 1")
        if self.separation < 0.0:
            raise ContractError("separation must be non-negative")
        if not self.noise_scale > 0.0:
            raise ContractError("noise_scale must be positive")
        if self.class_means is None and self.feature_dim < len(self.class_counts):
            raise ContractError("default class means need feature_dim >= number of classes")
        if self.class_means is not None:
            means = np.asarray(self.class_means, dtype=float)
            if means.shape != (len(self.class_counts), self.feature_dim):
                raise ContractError("class_means must be K x d")
            self.class_means = means

    @property
    def num_classes(self) -> int:
        return len(self.class_counts)

    def means(self) -> np.ndarray:
        if self.class_means is not None:
            return self.class_means
        # axis-aligned unit vectors scaled so pairwise mean distance equals
        # separation * noise_scale
        means = np.zeros((self.num_classes, self.feature_dim))
        scale = self.separation * self.noise_scale / np.sqrt(2.0)
        for c in range(self.num_classes):
            means[c, c] = scale
        return means


def generate_synthetic(spec: SyntheticSpec) -> list[DialogueExample]:
    stream = SeededStream(spec.seed, 0)
    means = spec.means()
    lo, hi = spec.seq_len_range
    examples = []
    for c, count in enumerate(spec.class_counts):
        for i in range(count):
            t = int(stream.gen.integers(lo, hi + 1))
            noise = stream.gen.normal(size=(t, spec.feature_dim))
            feats = means[c] + spec.noise_scale * noise
            examples.append(DialogueExample(id=f"c{c}-{i:04d}", features=feats, label=c))
    return examples


def sub_dialogue_shuffle(
    example: DialogueExample,
    count: int,
    min_len: int = 1,
    rng: SeededStream | None = None,
) -> list[DialogueExample]:
    """Contiguous random slices of one dialogue.

    Start s is uniform over the valid starts, end e uniform over
    [s + min_len - 1, T]; both inclusive, 1-based in the contract and
    0-based here.  Labels are inherited and ids suffixed.
    """
    if count < 0:
        raise ContractError("count must be >= 0")
    t = example.length
    if min_len < 1 or min_len > t:
        raise ContractError(f"min_len must lie in [1, T={t}]")
    if count == 0:
        return []
    if rng is None:
        raise ContractError("sub-dialogue sampling requires a stream")
    out = []
    for j in range(count):
        start = int(rng.gen.integers(0, t - min_len + 1))
        end = int(rng.gen.integers(start + min_len - 1, t))  # inclusive, 0-based
        out.append(
            DialogueExample(
                id=f"{example.id}-sub{j:03d}",
                features=example.features[start : end + 1],
                label=example.label,
            )
        )
    return out


def balance_augment(
    train: list[DialogueExample],
    per_class_counts: dict[int, int],
    rng: SeededStream,
    min_len: int = 1,
) -> list[DialogueExample]:
    """Originals plus ``per_class_counts[c]`` sub-dialogues of every class-c
    example; classes not in the map pass through untouched."""
    for c, count in per_class_counts.items():
        if count < 0:
            raise ContractError("per-class counts must be >= 0")
        if not any(ex.label == c for ex in train):
            raise ContractError(f"class {c} has no examples to augment")
    out = []
    for ex in train:
        out.append(ex)
        count = per_class_counts.get(ex.label, 0)
        if count:
            out.extend(sub_dialogue_shuffle(ex, count, min_len=min_len, rng=rng))
    return out


@dataclass
class SplitSpec:
    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(f <= 0.0 for f in fracs):
            raise ContractError("split fractions must be positive")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ContractError("split fractions must sum to 1")


def _largest_remainder(n: int, fracs) -> list[int]:
    raw = [n * f for f in fracs]
    sizes = [int(np.floor(r)) for r in raw]
    short = n - sum(sizes)
    # hand leftovers to the largest fractional parts; ties to earlier splits
    order = sorted(range(len(fracs)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:short]:
        sizes[i] += 1
    return sizes


def split(
    dataset: list[DialogueExample], spec: SplitSpec
) -> tuple[list[DialogueExample], list[DialogueExample], list[DialogueExample]]:
    """Stratified, deterministic train/val/test partition."""
    if len(dataset) < 3:
        raise ContractError("need at least 3 examples to split")
    fracs = (spec.train_frac, spec.val_frac, spec.test_frac)
    stream = SeededStream(spec.seed, 0)
    labels = sorted({ex.label for ex in dataset})
    assignments: list[list[int]] = [[], [], []]
    for label in labels:
        idx = [i for i, ex in enumerate(dataset) if ex.label == label]
        perm = stream.gen.permutation(len(idx))
        idx = [idx[p] for p in perm]
        sizes = _largest_remainder(len(idx), fracs)
        if any(s == 0 for s in sizes):
            raise ContractError(
                f"class {label} would be absent from one split at these fractions"
            )
        ofs = 0
        for part, size in enumerate(sizes):
            assignments[part].extend(idx[ofs : ofs + size])
            ofs += size
    return tuple([dataset[i] for i in sorted(part)] for part in assignments)


def save_examples(examples: list[DialogueExample], path, comments=()) -> None:
    """Line-oriented text: optional ``#`` comment lines, a header with
    version/d/K, then per example an ``id label T`` line followed by T rows
    of d numbers (full precision)."""
    if examples:
        d = examples[0].dim
        for ex in examples:
            if ex.dim != d:
                raise ContractError("all examples must share one feature dimension")
        k = max(ex.label for ex in examples) + 1
    else:
        d = k = 0
    lines = [f"# {c}" for c in comments]
    lines.append(f"{DATASET_FORMAT} {DATASET_VERSION} {d} {k}")
    for ex in examples:
        lines.append(f"{ex.id} {ex.label} {ex.length}")
        for row in ex.features:
            lines.append(" ".join(repr(float(v)) for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def load_examples(path) -> list[DialogueExample]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    first = 0
    while first < len(lines) and lines[first].lstrip().startswith("#"):
        first += 1
    if first >= len(lines) or not any(s.strip() for s in lines[first:]):
        return []
    header = lines[first].split()
    if len(header) != 4 or header[0] != DATASET_FORMAT:
        raise ParseError(f"not a {DATASET_FORMAT} file", line=first + 1)
    try:
        version, d, k = int(header[1]), int(header[2]), int(header[3])
    except ValueError as exc:
        raise ParseError(f"malformed header: {exc}", line=first + 1) from exc
    if version != DATASET_VERSION:
        raise ParseError(f"unsupported dataset version {version}", line=first + 1)

    examples = []
    lineno = first + 1
    while lineno < len(lines):
        if not lines[lineno].strip():
            lineno += 1
            continue
        parts = lines[lineno].split()
        if len(parts) != 3:
            raise ParseError("expected 'id label T' example line", line=lineno + 1)
        ex_id = parts[0]
        try:
            label, t = int(parts[1]), int(parts[2])
        except ValueError as exc:
            raise ParseError(f"malformed example line: {exc}", line=lineno + 1) from exc
        if not 0 <= label < k:
            raise ParseError(f"label {label} outside [0, {k})", line=lineno + 1)
        if t < 1:
            raise ParseError("sequence length must be >= 1", line=lineno + 1)
        if lineno + t > len(lines) - 1:
            raise ParseError(
                f"example {ex_id} declares {t} rows but the file ends early",
                line=lineno + 1,
            )
        rows = []
        for r in range(t):
            rowno = lineno + 1 + r
            values = lines[rowno].split()
            if len(values) != d:
                raise ParseError(
                    f"expected {d} values, found {len(values)}", line=rowno + 1
                )
            try:
                rows.append([float(v) for v in values])
            except ValueError as exc:
                raise ParseError(f"malformed number: {exc}", line=rowno + 1) from exc
        try:
            examples.append(DialogueExample(id=ex_id, features=np.array(rows), label=label))
        except ContractError as exc:
            raise ParseError(str(exc), line=lineno + 1) from exc
        lineno += 1 + t
    return examples
