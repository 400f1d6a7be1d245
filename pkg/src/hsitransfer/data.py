"""Hyperspectral cubes, label maps, labeled pixel samples and dataset splits."""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from hsitransfer import rng as _rng
from hsitransfer.errors import DataError


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SpectralCube:
    """H x W x B radiance raster stored pixel-interleaved (y, x, band)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise DataError(f"cube must be 3-D (height, width, bands), got shape {data.shape}")
        if min(data.shape) < 1:
            raise DataError(f"cube has a zero dimension: {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DataError("cube contains non-finite values")
        object.__setattr__(self, "data", _readonly(data))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def bands(self):
        return self.data.shape[2]


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel class ids; 0 marks unlabeled pixels, classes are 1..C."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise DataError(f"label map must be 2-D, got shape {labels.shape}")
        if min(labels.shape) < 1:
            raise DataError(f"label map has a zero dimension: {labels.shape}")
        if labels.size and labels.min() < 0:
            raise DataError("label map contains negative ids")
        present = np.unique(labels[labels > 0])
        if present.size == 0:
            raise DataError("label map has no labeled pixels")
        expected = np.arange(1, present[-1] + 1)
        if present.size != expected.size:
            missing = np.setdiff1d(expected, present).tolist()
            raise DataError(f"class ids are not contiguous; missing {missing}")
        object.__setattr__(self, "labels", _readonly(labels.astype(np.uint16)))

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    @property
    def class_count(self):
        return int(self.labels.max())


class Sample(NamedTuple):
    spectrum: np.ndarray
    cls: int
    origin: tuple


@dataclass(frozen=True)
class SampleSet:
    """Labeled pixel spectra as parallel arrays.

    ``classes`` are zero-based (label - 1); ``origins`` holds the (y, x)
    pixel each spectrum came from.
    """

    spectra: np.ndarray
    classes: np.ndarray
    origins: np.ndarray
    class_count: int

    def __post_init__(self):
        spectra = np.asarray(self.spectra, dtype=np.float32)
        classes = np.asarray(self.classes, dtype=np.int64)
        origins = np.asarray(self.origins, dtype=np.int64).reshape(-1, 2)
        if spectra.ndim != 2:
            raise DataError(f"spectra must be 2-D (samples, bands), got {spectra.shape}")
        n = spectra.shape[0]
        if classes.shape != (n,) or origins.shape[0] != n:
            raise DataError("spectra, classes and origins disagree in length")
        if n and (classes.min() < 0 or classes.max() >= self.class_count):
            raise DataError(f"class ids out of range 0..{self.class_count - 1}")
        object.__setattr__(self, "spectra", _readonly(spectra))
        object.__setattr__(self, "classes", _readonly(classes))
        object.__setattr__(self, "origins", _readonly(origins))

    def __len__(self):
        return self.spectra.shape[0]

    def __getitem__(self, i):
        return Sample(self.spectra[i], int(self.classes[i]), tuple(int(v) for v in self.origins[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def bands(self):
        return self.spectra.shape[1]

    def subset(self, index):
        index = np.asarray(index, dtype=np.int64)
        return SampleSet(self.spectra[index], self.classes[index], self.origins[index], self.class_count)

    def with_spectra(self, spectra):
        return SampleSet(spectra, self.classes, self.origins, self.class_count)

    def histogram(self):
        return np.bincount(self.classes, minlength=self.class_count)


@dataclass(frozen=True)
class DatasetSplit:
    train: SampleSet
    validation: SampleSet
    test: SampleSet
    seed: int

    @property
    def t_count(self):
        return len(self.train)

    @property
    def class_count(self):
        return self.train.class_count

    @property
    def bands(self):
        return self.train.bands

    def map(self, fn):
        """Apply ``fn`` to the spectra array of every part."""
        return DatasetSplit(
            self.train.with_spectra(fn(self.train.spectra)),
            self.validation.with_spectra(fn(self.validation.spectra)),
            self.test.with_spectra(fn(self.test.spectra)),
            self.seed,
        )


def extract_samples(cube, labels):
    """One sample per labeled pixel, in row-major pixel order."""
    if (cube.height, cube.width) != (labels.height, labels.width):
        raise DataError(
            f"cube is {cube.height}x{cube.width} but label map is {labels.height}x{labels.width}"
        )
    ys, xs = np.nonzero(labels.labels)
    return SampleSet(
        spectra=cube.data[ys, xs, :],
        classes=labels.labels[ys, xs].astype(np.int64) - 1,
        origins=np.stack([ys, xs], axis=1),
        class_count=labels.class_count,
    )


# Balanced per-class (train, validation) counts reproducing the reference
# B(E) totals for the two benchmarks whose totals are class-uniform.
BE_PRESETS = {
    "salinas": (270, 30),
    "pavia": (225, 25),
}

B_DEFAULT = (20, 5)


def _split(samples, counts, seed):
    train, val, test = [], [], []
    gen = _rng.stream(seed, _rng.SPLIT)
    for c in range(samples.class_count):
        members = np.flatnonzero(samples.classes == c)
        n_train, n_val = counts[c]
        if n_train < 1 or n_val < 1:
            raise DataError(f"class {c}: train and validation counts must be >= 1")
        if members.size <= n_train + n_val:
            raise DataError(
                f"class {c} has {members.size} samples; needs more than {n_train} + {n_val}"
            )
        members = gen.permutation(members)
        train.append(members[:n_train])
        val.append(members[n_train:n_train + n_val])
        test.append(members[n_train + n_val:])
    return DatasetSplit(
        samples.subset(np.sort(np.concatenate(train))),
        samples.subset(np.sort(np.concatenate(val))),
        samples.subset(np.sort(np.concatenate(test))),
        seed,
    )


def split_be(samples, per_class_train, per_class_val, seed):
    """Large balanced division used to train feature extractors.

    Every class contributes exactly ``per_class_train`` training and
    ``per_class_val`` validation pixels; the remainder is the test set.
    """
    counts = {c: (per_class_train, per_class_val) for c in range(samples.class_count)}
    return _split(samples, counts, seed)


def split_b(samples, per_class_counts, seed):
    """Small balanced division; ``per_class_counts`` maps class -> (train, val).

    A single ``(train, val)`` tuple applies to every class.
    """
    if isinstance(per_class_counts, tuple):
        per_class_counts = {c: per_class_counts for c in range(samples.class_count)}
    missing = set(range(samples.class_count)) - set(per_class_counts)
    if missing:
        raise DataError(f"no counts given for classes {sorted(missing)}")
    return _split(samples, per_class_counts, seed)


@dataclass(frozen=True)
class Normalizer:
    shift: np.ndarray
    scale: np.ndarray
    mode: str = "zscore"

    def apply(self, spectra):
        return (np.asarray(spectra, dtype=np.float64) - self.shift) / self.scale


def fit_normalizer(spectra, mode="zscore"):
    """Per-band statistics over the fitting set; constant bands get scale 1."""
    x = np.asarray(spectra, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError("normalizer needs a non-empty (samples, bands) array")
    if mode == "zscore":
        shift = x.mean(axis=0)
        scale = x.std(axis=0)
    elif mode == "minmax":
        shift = x.min(axis=0)
        scale = x.max(axis=0) - shift
    else:
        raise ValueError(f"unknown normalizer mode {mode!r}")
    scale = np.where(scale > 0, scale, 1.0)
    return Normalizer(shift, scale, mode)


def apply_normalizer(normalizer, samples):
    return samples.with_spectra(normalizer.apply(samples.spectra))


def normalize_split(split, mode="zscore"):
    """Fit on the training part only and apply to all three parts."""
    norm = fit_normalizer(split.train.spectra, mode)
    return split.map(norm.apply), norm
