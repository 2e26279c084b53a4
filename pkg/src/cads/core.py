"""Expert pool data model: manifests, prediction matrices, labels, splits.

An expert pool is the engine's only view of a set of classifiers: one
probability matrix per expert (N samples x C classes), a shared label
vector, and per-expert metadata (tier, parameter count, per-sample cost
in GFLOPs).  Everything downstream consumes the structures defined here.

File formats
------------
* Prediction binary: magic ``CADSPRED`` (8 ASCII bytes), version as
  32-bit little-endian unsigned (currently 1), N and C as 64-bit
  little-endian unsigned, then N*C IEEE-754 float32 little-endian values
  in row-major order.  CSV with header ``c0,...,c{C-1}`` is accepted as
  an alternative input.
* Labels: one decimal integer per line.
* Manifest: JSON with top level
  ``{"dataset", "labels", "experts": [{"name", "tier", "params_millions",
  "gflops", "predictions"}]}``.  Unknown keys are ignored so producers
  may attach provenance (e.g. an order hash).
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

PREDICTION_MAGIC = b"CADSPRED"
PREDICTION_VERSION = 1
ROW_SUM_TOLERANCE = 1e-4
CALIBRATION_FRACTION = 0.30
MIN_SPLIT_SAMPLES = 10


class ValidationError(ValueError):
    """Raised when an input file or pool violates a structural invariant."""


class Tier(str, Enum):
    SCOUT = "Scout"
    SPECIALIST = "Specialist"
    ORACLE = "Oracle"

    @property
    def rank(self) -> int:
        return _TIER_RANK[self]


_TIER_RANK = {Tier.SCOUT: 0, Tier.SPECIALIST: 1, Tier.ORACLE: 2}
TIERS_BY_RANK = (Tier.SCOUT, Tier.SPECIALIST, Tier.ORACLE)


# Published per-sample costs for the reference backbone pool, cheapest to
# heaviest: (name, tier, params in millions, GFLOPs per sample).
BACKBONE_CATALOG: tuple[tuple[str, Tier, float, float], ...] = (
    ("MobileNetV3 Small", Tier.SCOUT, 2.5, 0.01),
    ("EfficientNet-Lite0", Tier.SCOUT, 4.7, 0.04),
    ("GhostNet", Tier.SCOUT, 5.2, 0.05),
    ("MobileViT", Tier.SPECIALIST, 5.6, 0.50),
    ("ConvNeXt V2 Atto", Tier.SPECIALIST, 3.7, 0.55),
    ("EVA-02 Tiny", Tier.SPECIALIST, 5.7, 1.70),
    ("EfficientNetV2-S", Tier.SPECIALIST, 21.5, 2.80),
    ("Swin V2 Tiny", Tier.ORACLE, 28.3, 4.50),
    ("DINOv2 ViT-Small", Tier.ORACLE, 21.0, 4.60),
    ("MaxViT Tiny", Tier.ORACLE, 30.9, 5.00),
    ("ConvNeXt V2 Base", Tier.ORACLE, 89.0, 15.4),
    ("DINOv2 ViT-Base", Tier.ORACLE, 86.0, 17.6),
)


@dataclass(frozen=True)
class ExpertManifestEntry:
    """One expert's metadata as declared in a manifest."""

    name: str
    tier: Tier
    params_millions: float
    cost_gflops: float
    predictions_path: Path

    def __post_init__(self) -> None:
        if self.cost_gflops <= 0:
            raise ValidationError(
                f"expert '{self.name}': gflops must be positive, got {self.cost_gflops}"
            )
        if self.params_millions < 0:
            raise ValidationError(
                f"expert '{self.name}': params_millions must be non-negative"
            )


@dataclass(frozen=True)
class Manifest:
    dataset: str
    labels_path: Path
    experts: tuple[ExpertManifestEntry, ...]

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "labels": str(self.labels_path),
            "experts": [
                {
                    "name": e.name,
                    "tier": e.tier.value,
                    "params_millions": e.params_millions,
                    "gflops": e.cost_gflops,
                    "predictions": str(e.predictions_path),
                }
                for e in self.experts
            ],
        }


@dataclass(frozen=True)
class PredictionMatrix:
    """Per-expert N x C probability table.

    ``raw`` holds the float32 payload exactly as stored on disk, so a
    write/read cycle is bit-identical.  ``rows`` is the float64 view used
    for all arithmetic: each row is divided by its float64 sum, which must
    be within ``ROW_SUM_TOLERANCE`` of 1 or the matrix is rejected.
    """

    raw: np.ndarray
    rows: np.ndarray

    @classmethod
    def from_raw(cls, raw: np.ndarray, name: str = "<anonymous>") -> "PredictionMatrix":
        raw = np.ascontiguousarray(raw, dtype=np.float32)
        if raw.ndim != 2:
            raise ValidationError(f"expert '{name}': prediction table must be 2-D")
        n, c = raw.shape
        if n < 1:
            raise ValidationError(f"expert '{name}': need at least 1 sample row")
        if c < 2:
            raise ValidationError(f"expert '{name}': need at least 2 classes, got {c}")
        rows64 = raw.astype(np.float64)
        in_range = (rows64 >= 0.0) & (rows64 <= 1.0)
        if not in_range.all():
            bad = int(np.argwhere(~in_range)[0, 0])
            raise ValidationError(
                f"expert '{name}': row {bad} has a probability outside [0, 1]"
            )
        sums = rows64.sum(axis=1)
        off = np.abs(sums - 1.0)
        if off.max() > ROW_SUM_TOLERANCE:
            bad = int(np.argmax(off))
            raise ValidationError(
                f"expert '{name}': row {bad} sums to {sums[bad]:.6f}, "
                f"outside 1 +/- {ROW_SUM_TOLERANCE}"
            )
        rows64 = rows64 / sums[:, None]
        raw.flags.writeable = False
        rows64.flags.writeable = False
        return cls(raw=raw, rows=rows64)

    @classmethod
    def from_probabilities(cls, probs: np.ndarray, name: str = "<anonymous>") -> "PredictionMatrix":
        """Build from float64 rows, passing through the on-disk float32 precision."""
        return cls.from_raw(np.asarray(probs, dtype=np.float32), name=name)

    @property
    def n_samples(self) -> int:
        return self.raw.shape[0]

    @property
    def n_classes(self) -> int:
        return self.raw.shape[1]


@dataclass(frozen=True)
class LabelVector:
    labels: np.ndarray

    @classmethod
    def from_array(cls, labels, n_classes: int | None = None, name: str = "labels") -> "LabelVector":
        arr = np.asarray(labels, dtype=np.int64)
        if arr.ndim != 1 or arr.size < 1:
            raise ValidationError(f"{name}: need a non-empty 1-D label vector")
        if arr.min() < 0:
            bad = int(np.argmin(arr))
            raise ValidationError(f"{name}: row {bad} has negative label {arr[bad]}")
        if n_classes is not None and arr.max() >= n_classes:
            bad = int(np.argmax(arr))
            raise ValidationError(
                f"{name}: row {bad} has label {arr[bad]} but experts only have "
                f"{n_classes} classes"
            )
        arr.flags.writeable = False
        return cls(labels=arr)

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass(frozen=True)
class SplitIndex:
    """Deterministic calibration/evaluation partition of sample ids."""

    calibration_ids: np.ndarray
    test_ids: np.ndarray
    seed: int

    def __post_init__(self) -> None:
        self.calibration_ids.flags.writeable = False
        self.test_ids.flags.writeable = False

    @property
    def n_samples(self) -> int:
        return int(self.calibration_ids.size + self.test_ids.size)


@dataclass(frozen=True)
class PredictionPool:
    """A fully validated manifest with its matrices and shared labels."""

    manifest: Manifest
    matrices: tuple[PredictionMatrix, ...]
    labels: LabelVector

    @property
    def n_experts(self) -> int:
        return len(self.matrices)

    @property
    def n_samples(self) -> int:
        return self.matrices[0].n_samples

    @property
    def n_classes(self) -> int:
        return self.matrices[0].n_classes

    @property
    def costs(self) -> np.ndarray:
        return np.array([e.cost_gflops for e in self.manifest.experts], dtype=np.float64)

    @property
    def tiers(self) -> np.ndarray:
        return np.array([e.tier.rank for e in self.manifest.experts], dtype=np.int8)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.manifest.experts)

    def scout_ids(self) -> tuple[int, ...]:
        return tuple(
            k for k, e in enumerate(self.manifest.experts) if e.tier is Tier.SCOUT
        )


# ---------------------------------------------------------------------------
# Prediction binary codec
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<8sIQQ")


def write_prediction_file(path: Path | str, raw: np.ndarray) -> None:
    """Write a float32 matrix in the prediction binary format."""
    raw = np.ascontiguousarray(raw, dtype="<f4")
    if raw.ndim != 2:
        raise ValidationError("prediction payload must be 2-D")
    n, c = raw.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(PREDICTION_MAGIC, PREDICTION_VERSION, n, c))
        fh.write(raw.tobytes(order="C"))


def read_prediction_file(path: Path | str, name: str = "<anonymous>") -> np.ndarray:
    """Read a prediction binary; returns the raw float32 matrix."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise ValidationError(f"expert '{name}': {path} is truncated (no header)")
    magic, version, n, c = _HEADER.unpack_from(data)
    if magic != PREDICTION_MAGIC:
        raise ValidationError(f"expert '{name}': {path} has bad magic {magic!r}")
    if version != PREDICTION_VERSION:
        raise ValidationError(
            f"expert '{name}': {path} has unsupported version {version}"
        )
    expected = _HEADER.size + 4 * n * c
    if len(data) != expected:
        raise ValidationError(
            f"expert '{name}': {path} has {len(data)} bytes, expected {expected} "
            f"for N={n}, C={c}"
        )
    payload = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    return payload.reshape(n, c).astype(np.float32)


def read_prediction_csv(path: Path | str, name: str = "<anonymous>") -> np.ndarray:
    """Read the CSV alternative format (header ``c0,...,c{C-1}``)."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"expert '{name}': {path} is empty") from None
        expected = [f"c{j}" for j in range(len(header))]
        if [h.strip() for h in header] != expected:
            raise ValidationError(
                f"expert '{name}': {path} header must be c0,...,c{len(header) - 1}"
            )
        rows = []
        for lineno, row in enumerate(reader):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(
                    f"expert '{name}': {path} row {lineno} has {len(row)} fields, "
                    f"expected {len(header)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValidationError(
                    f"expert '{name}': {path} row {lineno} has a non-numeric field"
                ) from None
    if not rows:
        raise ValidationError(f"expert '{name}': {path} has no data rows")
    return np.asarray(rows, dtype=np.float64).astype(np.float32)


def load_prediction_matrix(path: Path | str, name: str = "<anonymous>") -> PredictionMatrix:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        raw = read_prediction_csv(path, name=name)
    else:
        raw = read_prediction_file(path, name=name)
    return PredictionMatrix.from_raw(raw, name=name)


def write_labels(path: Path | str, labels: np.ndarray) -> None:
    arr = np.asarray(labels, dtype=np.int64)
    with open(path, "w") as fh:
        for v in arr:
            fh.write(f"{int(v)}\n")


def read_labels(path: Path | str) -> np.ndarray:
    path = Path(path)
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                values.append(int(line))
            except ValueError:
                raise ValidationError(
                    f"labels file {path}: line {lineno} is not an integer: {line!r}"
                ) from None
    if not values:
        raise ValidationError(f"labels file {path} is empty")
    return np.asarray(values, dtype=np.int64)


# ---------------------------------------------------------------------------
# Manifest loading
# ---------------------------------------------------------------------------


def _parse_manifest(path: Path) -> Manifest:
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"manifest file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest {path} is not valid JSON: {exc}") from None
    for key in ("dataset", "labels", "experts"):
        if key not in doc:
            raise ValidationError(f"manifest {path} is missing key '{key}'")
    if not doc["experts"]:
        raise ValidationError(f"manifest {path} declares no experts")
    base = path.parent
    entries = []
    for spec in doc["experts"]:
        for key in ("name", "tier", "params_millions", "gflops", "predictions"):
            if key not in spec:
                raise ValidationError(
                    f"manifest {path}: expert entry missing key '{key}': {spec}"
                )
        try:
            tier = Tier(spec["tier"])
        except ValueError:
            raise ValidationError(
                f"expert '{spec['name']}': unknown tier {spec['tier']!r}"
            ) from None
        entries.append(
            ExpertManifestEntry(
                name=str(spec["name"]),
                tier=tier,
                params_millions=float(spec["params_millions"]),
                cost_gflops=float(spec["gflops"]),
                predictions_path=(base / spec["predictions"]).resolve(),
            )
        )
    names = [e.name for e in entries]
    if len(set(names)) != len(names):
        raise ValidationError(f"manifest {path} has duplicate expert names")
    return Manifest(
        dataset=str(doc["dataset"]),
        labels_path=(base / doc["labels"]).resolve(),
        experts=tuple(entries),
    )


def load_manifest(path: Path | str) -> PredictionPool:
    """Load and cross-validate a manifest with all referenced files.

    Experts are returned in manifest order.  Every error message names the
    offending expert (and row, where applicable).
    """
    path = Path(path)
    manifest = _parse_manifest(path)
    matrices: list[PredictionMatrix] = []
    for entry in manifest.experts:
        if not entry.predictions_path.exists():
            raise ValidationError(
                f"expert '{entry.name}': predictions file not found: "
                f"{entry.predictions_path}"
            )
        matrices.append(load_prediction_matrix(entry.predictions_path, name=entry.name))
    first = manifest.experts[0].name
    n, c = matrices[0].raw.shape
    for entry, mat in zip(manifest.experts[1:], matrices[1:]):
        if mat.raw.shape != (n, c):
            raise ValidationError(
                f"expert '{entry.name}' has shape {mat.raw.shape}, but expert "
                f"'{first}' has shape {(n, c)}"
            )
    if not manifest.labels_path.exists():
        raise ValidationError(f"labels file not found: {manifest.labels_path}")
    raw_labels = read_labels(manifest.labels_path)
    if raw_labels.shape[0] != n:
        raise ValidationError(
            f"labels file {manifest.labels_path} has {raw_labels.shape[0]} entries, "
            f"but experts have {n} samples"
        )
    labels = LabelVector.from_array(raw_labels, n_classes=c, name=str(manifest.labels_path))
    return PredictionPool(manifest=manifest, matrices=tuple(matrices), labels=labels)


# ---------------------------------------------------------------------------
# Dataset splitting
# ---------------------------------------------------------------------------


def _calibration_size(n_samples: int) -> int:
    # round-half-up on 0.30 * N
    return int(math.floor(CALIBRATION_FRACTION * n_samples + 0.5))


def split_dataset(
    n_samples: int,
    seed: int,
    labels: np.ndarray | None = None,
    stratified: bool = False,
) -> SplitIndex:
    """Partition ``range(n_samples)`` into 30% calibration / 70% evaluation.

    A pure function of ``(n_samples, seed)`` (plus labels when the opt-in
    stratified mode is used).  Ids come back sorted.
    """
    if n_samples < MIN_SPLIT_SAMPLES:
        raise ValidationError(
            f"need at least {MIN_SPLIT_SAMPLES} samples to split, got {n_samples}"
        )
    m = _calibration_size(n_samples)
    rng = np.random.default_rng(seed)
    if not stratified:
        perm = rng.permutation(n_samples)
        cal = np.sort(perm[:m])
        test = np.sort(perm[m:])
        return SplitIndex(calibration_ids=cal, test_ids=test, seed=seed)

    if labels is None:
        raise ValidationError("stratified splitting requires labels")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != n_samples:
        raise ValidationError("labels length does not match n_samples")
    classes = np.unique(labels)
    shuffled = {c: rng.permutation(np.flatnonzero(labels == c)) for c in classes}
    counts = {c: shuffled[c].size for c in classes}
    base = {c: int(math.floor(CALIBRATION_FRACTION * counts[c])) for c in classes}
    remainder = m - sum(base.values())
    # distribute leftovers by largest fractional part, ties to lower class id
    fracs = sorted(
        classes,
        key=lambda c: (-(CALIBRATION_FRACTION * counts[c] - base[c]), c),
    )
    for c in fracs:
        if remainder <= 0:
            break
        if base[c] < counts[c]:
            base[c] += 1
            remainder -= 1
    cal_parts = [shuffled[c][: base[c]] for c in classes]
    test_parts = [shuffled[c][base[c]:] for c in classes]
    cal = np.sort(np.concatenate(cal_parts))
    test = np.sort(np.concatenate(test_parts))
    return SplitIndex(calibration_ids=cal, test_ids=test, seed=seed)
