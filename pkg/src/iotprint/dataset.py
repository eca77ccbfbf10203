"""Experiment dataset construction.

Holds the per-device payload corpus, applies the minimum-session filter,
draws the deterministic validation/test/train split, labels instances for
each of the five experiment schemes, and produces k-fold assignments.

Split protocol: per device, 10% of sessions (rounded half-down) go to
validation, then 10% of the remainder (same rounding) to test, the rest to
train.  The draw is a seeded permutation per device, so splits are
reproducible bit-for-bit across platforms (numpy PCG64).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateLabels,
    DimensionMismatch,
    EmptyCorpus,
    SchemeNotSupported,
    UnknownDevice,
)
from .fixtures import slugify
from .manifest import read_manifest, verify_manifest, write_manifest
from .transform import (
    VECTOR_LEN,
    IdxDataset,
    read_idx,
    read_image_idx,
    write_idx,
    write_image_idx,
)

IOT = "iot"
NON_IOT = "non-iot"

SCHEME_IOT_VS_NONIOT = 1
SCHEME_ONE_VS_REST_IOT = 2
SCHEME_ONE_VS_ALL = 3
SCHEME_MULTICLASS = 4
SCHEME_UNKNOWN = 5

SCHEME_NAMES = {
    SCHEME_IOT_VS_NONIOT: "iot-vs-noniot",
    SCHEME_ONE_VS_REST_IOT: "one-vs-rest-iot",
    SCHEME_ONE_VS_ALL: "one-vs-all",
    SCHEME_MULTICLASS: "multiclass",
    SCHEME_UNKNOWN: "unknown-detection",
}

MIN_SESSIONS = 1000  # devices must exceed this to enter the corpus

CORPUS_MANIFEST = "corpus.manifest"
SPLIT_MANIFEST = "split.manifest"


def parse_scheme(text) -> int:
    """Accept a scheme number (1..5) or its name."""
    lowered = str(text).strip().lower()
    for number, name in SCHEME_NAMES.items():
        if lowered in (str(number), name):
            return number
    raise SchemeNotSupported(
        f"unknown scheme {text!r}; use 1-5 or one of {sorted(SCHEME_NAMES.values())}")


@dataclass
class DeviceCorpus:
    """Per-device payload vectors plus the IoT / non-IoT flag, in table order."""

    vectors: dict[str, np.ndarray]      # name -> (N, 784) uint8
    kinds: dict[str, str]               # name -> "iot" | "non-iot"

    def __post_init__(self):
        if set(self.vectors) != set(self.kinds):
            raise ValueError("vectors and kinds must cover the same devices")
        for name, arr in self.vectors.items():
            self.vectors[name] = arr = np.ascontiguousarray(arr, dtype=np.uint8)
            if arr.ndim != 2 or arr.shape[1] != VECTOR_LEN:
                raise DimensionMismatch(
                    f"device {name!r}: vectors must be (N, {VECTOR_LEN}), got {arr.shape}")
            if self.kinds[name] not in (IOT, NON_IOT):
                raise ValueError(f"device {name!r}: kind must be {IOT!r} or {NON_IOT!r}")

    @property
    def device_names(self) -> list[str]:
        return list(self.vectors)

    @property
    def iot_devices(self) -> list[str]:
        return [n for n in self.vectors if self.kinds[n] == IOT]

    @property
    def non_iot_devices(self) -> list[str]:
        return [n for n in self.vectors if self.kinds[n] == NON_IOT]

    def counts(self) -> dict[str, int]:
        return {n: len(a) for n, a in self.vectors.items()}

    def total_sessions(self) -> int:
        return sum(len(a) for a in self.vectors.values())


def filter_min_sessions(corpus: DeviceCorpus, min_sessions: int = MIN_SESSIONS) -> DeviceCorpus:
    """Keep devices with strictly more than `min_sessions` sessions."""
    kept = {n: a for n, a in corpus.vectors.items() if len(a) > min_sessions}
    if not kept:
        raise EmptyCorpus(f"no device has more than {min_sessions} sessions")
    return DeviceCorpus(vectors=kept, kinds={n: corpus.kinds[n] for n in kept})


def tenth_half_down(n: int) -> int:
    """10% of n, rounded to nearest with exact halves rounded down.

    Integer form: for n = 10q + r the result is q + (1 if r >= 6 else 0),
    which is (n + 4) // 10.
    """
    return (n + 4) // 10


def split_sizes(n: int) -> tuple[int, int, int]:
    """(validation, test, train) sizes: 10% of all, 10% of remainder, rest."""
    n_val = tenth_half_down(n)
    n_test = tenth_half_down(n - n_val)
    return n_val, n_test, n - n_val - n_test


@dataclass
class SplitPools:
    """Per-device train/validation/test pools before any labeling."""

    train: dict[str, np.ndarray]
    validation: dict[str, np.ndarray]
    test: dict[str, np.ndarray]
    kinds: dict[str, str]
    seed: int

    @property
    def device_names(self) -> list[str]:
        return list(self.train)

    @property
    def iot_devices(self) -> list[str]:
        return [n for n in self.train if self.kinds[n] == IOT]

    @property
    def non_iot_devices(self) -> list[str]:
        return [n for n in self.train if self.kinds[n] == NON_IOT]


def split(corpus: DeviceCorpus, seed: int) -> SplitPools:
    """Seeded per-device stratified split into validation/test/train pools."""
    train, validation, test = {}, {}, {}
    for index, name in enumerate(corpus.device_names):
        arr = corpus.vectors[name]
        perm = np.random.default_rng([seed, index]).permutation(len(arr))
        n_val, n_test, _ = split_sizes(len(arr))
        validation[name] = arr[perm[:n_val]]
        test[name] = arr[perm[n_val:n_val + n_test]]
        train[name] = arr[perm[n_val + n_test:]]
    return SplitPools(train=train, validation=validation, test=test,
                      kinds=dict(corpus.kinds), seed=seed)


@dataclass(frozen=True)
class ExperimentSpec:
    """Which labeling scheme to apply, plus its target/excluded device."""

    scheme: int
    target: str | None = None
    excluded: str | None = None

    def __post_init__(self):
        if self.scheme not in SCHEME_NAMES:
            raise SchemeNotSupported(f"scheme {self.scheme} not in 1..5")
        if self.scheme in (SCHEME_ONE_VS_REST_IOT, SCHEME_ONE_VS_ALL) and not self.target:
            raise UnknownDevice(f"scheme {self.scheme} needs a target device")
        if self.scheme == SCHEME_UNKNOWN and not self.excluded:
            raise UnknownDevice("scheme 5 needs an excluded device")

    @property
    def name(self) -> str:
        return SCHEME_NAMES[self.scheme]


@dataclass
class SplitDataset:
    """Labeled train/validation/test datasets for one experiment."""

    train: IdxDataset
    validation: IdxDataset
    test: IdxDataset
    seed: int
    spec: ExperimentSpec
    # scheme 5 only: the excluded device's pools, kept unlabeled
    unknown_validation: np.ndarray | None = None
    unknown_test: np.ndarray | None = None
    unknown_device: str | None = None

    @property
    def label_names(self) -> list[str]:
        return self.train.label_names

    @property
    def output_width(self) -> int:
        """Output-layer width X: 1 sigmoid unit for binary schemes."""
        if self.spec.scheme in (SCHEME_IOT_VS_NONIOT, SCHEME_ONE_VS_REST_IOT,
                                SCHEME_ONE_VS_ALL):
            return 1
        return len(self.label_names)


def _device_labels(pools: SplitPools, spec: ExperimentSpec):
    """Per-device label assignment (None = device excluded from the dataset)."""
    kinds, iot, non_iot = pools.kinds, pools.iot_devices, pools.non_iot_devices
    scheme = spec.scheme

    if scheme == SCHEME_IOT_VS_NONIOT:
        if not iot or not non_iot:
            raise DegenerateLabels("scheme 1 needs both IoT and non-IoT devices")
        mapping = {n: int(kinds[n] == IOT) for n in pools.device_names}
        return mapping, ["non-IoT", "IoT"], None

    if scheme == SCHEME_ONE_VS_REST_IOT:
        if spec.target not in iot:
            raise UnknownDevice(f"target {spec.target!r} is not an IoT device "
                                f"in the corpus (have: {', '.join(iot)})")
        if len(iot) < 2:
            raise DegenerateLabels("scheme 2 needs at least two IoT devices")
        mapping = {n: (None if kinds[n] != IOT else int(n == spec.target))
                   for n in pools.device_names}
        return mapping, ["other-IoT", spec.target], None

    if scheme == SCHEME_ONE_VS_ALL:
        if spec.target not in iot:
            raise UnknownDevice(f"target {spec.target!r} is not an IoT device "
                                f"in the corpus (have: {', '.join(iot)})")
        if len(pools.device_names) < 2:
            raise DegenerateLabels("scheme 3 needs at least two devices")
        mapping = {n: int(n == spec.target) for n in pools.device_names}
        return mapping, ["rest", spec.target], None

    if scheme == SCHEME_MULTICLASS:
        if len(iot) + bool(non_iot) < 2:
            raise DegenerateLabels("scheme 4 needs at least two classes")
        mapping = {}
        for n in pools.device_names:
            mapping[n] = 0 if kinds[n] == NON_IOT else 1 + iot.index(n)
        return mapping, ["non-IoT"] + iot, None

    # scheme 5: unknown-device detection over the IoT devices only
    if spec.excluded not in iot:
        raise UnknownDevice(f"excluded device {spec.excluded!r} is not an IoT "
                            f"device in the corpus (have: {', '.join(iot)})")
    remaining = [n for n in iot if n != spec.excluded]
    if len(remaining) < 2:
        raise DegenerateLabels("scheme 5 needs at least two remaining IoT devices")
    mapping = {n: (remaining.index(n) if n in remaining else None)
               for n in pools.device_names}
    return mapping, remaining, spec.excluded


def _build_labeled(pool: dict[str, np.ndarray], mapping, label_names) -> IdxDataset:
    images, labels = [], []
    for name, arr in pool.items():
        label = mapping[name]
        if label is None or not len(arr):
            continue
        images.append(arr)
        labels.append(np.full(len(arr), label, dtype=np.uint8))
    if not images:
        return IdxDataset(images=np.zeros((0, VECTOR_LEN), dtype=np.uint8),
                          labels=np.zeros(0, dtype=np.uint8),
                          label_names=list(label_names))
    return IdxDataset(images=np.concatenate(images),
                      labels=np.concatenate(labels),
                      label_names=list(label_names))


def label_for_experiment(pools: SplitPools, spec: ExperimentSpec) -> SplitDataset:
    """Apply one of the five labeling schemes to split pools."""
    mapping, label_names, unknown_device = _device_labels(pools, spec)
    result = SplitDataset(
        train=_build_labeled(pools.train, mapping, label_names),
        validation=_build_labeled(pools.validation, mapping, label_names),
        test=_build_labeled(pools.test, mapping, label_names),
        seed=pools.seed,
        spec=spec,
    )
    if unknown_device is not None:
        result.unknown_validation = pools.validation[unknown_device]
        result.unknown_test = pools.test[unknown_device]
        result.unknown_device = unknown_device
    if len(np.unique(result.train.labels)) < 2:
        raise DegenerateLabels(
            f"training set for scheme {spec.scheme} holds fewer than two classes")
    return result


def kfold_split(corpus: DeviceCorpus, k: int, seed: int,
                scheme: int | None = None) -> list[dict[str, np.ndarray]]:
    """Per-device stratified partition into k near-equal folds."""
    if scheme == SCHEME_UNKNOWN:
        raise SchemeNotSupported(
            "k-fold validation does not apply to the unknown-device scheme; "
            "threshold calibration needs a dedicated validation pool")
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    folds: list[dict[str, np.ndarray]] = [{} for _ in range(k)]
    for index, name in enumerate(corpus.device_names):
        arr = corpus.vectors[name]
        perm = np.random.default_rng([seed, index, 1]).permutation(len(arr))
        base, extra = divmod(len(arr), k)
        start = 0
        for fold in range(k):
            size = base + (1 if fold < extra else 0)
            folds[fold][name] = arr[perm[start:start + size]]
            start += size
    return folds


def save_corpus(corpus: DeviceCorpus, out_dir, seed: int | None = None,
                extra: dict[str, str] | None = None, parent=None) -> Path:
    """Write one image IDX per device plus the corpus manifest; returns its path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries: dict[str, str] = {"stage": "preprocess", "format": "1"}
    if seed is not None:
        entries["seed"] = str(seed)
    entries["device.count"] = str(len(corpus.device_names))
    files = []
    used_slugs: set[str] = set()
    for i, name in enumerate(corpus.device_names):
        slug = slugify(name)
        if slug in used_slugs:
            slug = f"{slug}-{i}"
        used_slugs.add(slug)
        path = out_dir / f"{slug}.images.idx"
        write_image_idx(corpus.vectors[name], path)
        n = len(corpus.vectors[name])
        n_val, n_test, n_train = split_sizes(n)
        entries[f"device.{i}.name"] = name
        entries[f"device.{i}.slug"] = slug
        entries[f"device.{i}.kind"] = corpus.kinds[name]
        entries[f"device.{i}.sessions"] = str(n)
        entries[f"device.{i}.split"] = f"{n_val}/{n_test}/{n_train}"
        files.append(path)
    if extra:
        entries.update(extra)
    return write_manifest(out_dir / CORPUS_MANIFEST, entries, files, parent)


def load_corpus(corpus_dir, verify: bool = True) -> DeviceCorpus:
    """Read a corpus directory back; verifies manifest hashes by default."""
    manifest_path = Path(corpus_dir) / CORPUS_MANIFEST
    entries = verify_manifest(manifest_path) if verify else read_manifest(manifest_path)
    count = int(entries.get("device.count", "0"))
    if count == 0:
        raise EmptyCorpus(f"{manifest_path}: manifest lists no devices")
    vectors, kinds = {}, {}
    for i in range(count):
        name = entries[f"device.{i}.name"]
        slug = entries[f"device.{i}.slug"]
        vectors[name] = read_image_idx(Path(corpus_dir) / f"{slug}.images.idx")
        kinds[name] = entries[f"device.{i}.kind"]
    return DeviceCorpus(vectors=vectors, kinds=kinds)


def save_split(ds: SplitDataset, out_dir, parent=None) -> Path:
    """Write the labeled IDX triplet (plus unknown pools) and its manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries: dict[str, str] = {
        "stage": "dataset",
        "scheme": str(ds.spec.scheme),
        "scheme.name": ds.spec.name,
        "seed": str(ds.seed),
        "output.width": str(ds.output_width),
    }
    if ds.spec.target:
        entries["target"] = ds.spec.target
    if ds.unknown_device:
        entries["excluded"] = ds.unknown_device
    entries["label.count"] = str(len(ds.label_names))
    for i, name in enumerate(ds.label_names):
        entries[f"label.{i}"] = name
    files = []
    for part in ("train", "validation", "test"):
        subset: IdxDataset = getattr(ds, part)
        image_path = out_dir / f"{part}.images.idx"
        label_path = out_dir / f"{part}.labels.idx"
        write_idx(subset, image_path, label_path)
        entries[f"count.{part}"] = str(len(subset))
        files += [image_path, label_path, Path(str(label_path) + ".names")]
    if ds.unknown_device is not None:
        for part, pool in (("unknown-validation", ds.unknown_validation),
                           ("unknown-test", ds.unknown_test)):
            path = out_dir / f"{part}.images.idx"
            write_image_idx(pool, path)
            entries[f"count.{part}"] = str(len(pool))
            files.append(path)
    return write_manifest(out_dir / SPLIT_MANIFEST, entries, files, parent)


def load_split(split_dir, verify: bool = True) -> SplitDataset:
    """Read a labeled split directory back into memory."""
    manifest_path = Path(split_dir) / SPLIT_MANIFEST
    entries = verify_manifest(manifest_path) if verify else read_manifest(manifest_path)
    split_dir = Path(split_dir)
    parts = {}
    for part in ("train", "validation", "test"):
        parts[part] = read_idx(split_dir / f"{part}.images.idx",
                               split_dir / f"{part}.labels.idx")
    spec = ExperimentSpec(scheme=int(entries["scheme"]),
                          target=entries.get("target"),
                          excluded=entries.get("excluded"))
    ds = SplitDataset(train=parts["train"], validation=parts["validation"],
                      test=parts["test"], seed=int(entries["seed"]), spec=spec)
    if "excluded" in entries:
        ds.unknown_device = entries["excluded"]
        ds.unknown_validation = read_image_idx(split_dir / "unknown-validation.images.idx")
        ds.unknown_test = read_image_idx(split_dir / "unknown-test.images.idx")
    return ds
