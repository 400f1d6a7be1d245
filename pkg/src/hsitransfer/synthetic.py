"""Synthetic spectra and scenes for tests, demos and desk-scale experiments.

Spectra are built from a shared library of narrow absorption/emission
motifs on top of a random smooth continuum, so a convolutional extractor
trained on one class mixture is reusable on another.
"""

from dataclasses import dataclass

import numpy as np

from hsitransfer import rng as _rng
from hsitransfer.data import LabelMap, SampleSet, SpectralCube


@dataclass(frozen=True)
class MotifLibrary:
    centers: np.ndarray
    widths: np.ndarray
    signs: np.ndarray
    bands: int

    def shapes(self):
        grid = np.arange(self.bands)[None, :]
        bumps = np.exp(-0.5 * ((grid - self.centers[:, None]) / self.widths[:, None]) ** 2)
        return self.signs[:, None] * bumps


def motif_library(bands, count, seed):
    gen = _rng.stream(seed, _rng.SYNTH, 0)
    margin = max(4, bands // 10)
    centers = np.sort(gen.choice(np.arange(margin, bands - margin), size=count, replace=False))
    return MotifLibrary(
        centers=centers.astype(np.float64),
        widths=gen.uniform(1.0, 2.5, size=count),
        signs=gen.choice([-1.0, 1.0], size=count),
        bands=bands,
    )


def mixture_spectra(library, mixtures, per_class, seed, stream=1, noise=0.3,
                    strength=1.0, distractor=0.4, continuum=1.0):
    """Draw ``per_class[c]`` spectra for each row of ``mixtures``.

    ``mixtures`` is (classes, motifs): the mean amplitude of each motif in
    each class. Every sample additionally gets random distractor amplitudes
    on all motifs, a random smooth continuum, and white noise.
    """
    gen = _rng.stream(seed, _rng.SYNTH, stream)
    shapes = library.shapes()
    mixtures = np.asarray(mixtures, dtype=np.float64)
    if np.isscalar(per_class):
        per_class = [int(per_class)] * mixtures.shape[0]
    grid = np.linspace(-1.0, 1.0, library.bands)
    spectra, classes = [], []
    for c, count in enumerate(per_class):
        amp = strength * mixtures[c] * gen.uniform(0.7, 1.3, size=(count, mixtures.shape[1]))
        amp += distractor * gen.uniform(0.0, 1.0, size=amp.shape)
        base = (
            continuum * gen.normal(0.0, 1.0, size=(count, 1))
            + continuum * gen.normal(0.0, 0.5, size=(count, 1)) * grid
            + continuum * gen.normal(0.0, 0.3, size=(count, 1)) * (grid ** 2)
        )
        x = base + amp @ shapes + noise * gen.normal(size=(count, library.bands))
        spectra.append(x)
        classes.append(np.full(count, c))
    spectra = np.concatenate(spectra)
    classes = np.concatenate(classes)
    n = len(classes)
    origins = np.stack([np.arange(n), np.zeros(n, dtype=np.int64)], axis=1)
    return SampleSet(spectra, classes, origins, mixtures.shape[0])


def separable_two_class(bands=64, per_class=(100, 25, 100), seed=0):
    """Two classes differing by a Gaussian bump at distinct band positions.

    Returns (train, validation, test) sample sets.
    """
    gen = _rng.stream(seed, _rng.SYNTH, 7)
    grid = np.arange(bands)
    centers = (bands * 0.3, bands * 0.7)
    parts = []
    for count in per_class:
        xs, ys = [], []
        for c, mu in enumerate(centers):
            bump = 2.0 * np.exp(-0.5 * ((grid - mu) / 3.0) ** 2)
            xs.append(bump + gen.normal(0.0, 0.3, size=(count, bands)))
            ys.append(np.full(count, c))
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        parts.append(SampleSet(x, y, np.stack([np.arange(len(y)), np.zeros(len(y), int)], 1), 2))
    return tuple(parts)


@dataclass(frozen=True)
class TransferTask:
    """Source and target sample pools sharing one motif library."""

    source: SampleSet
    target: SampleSet
    library: MotifLibrary


TRANSFER_BANDS = 64
TRANSFER_MOTIFS = 8
# a strong continuum makes motif detection the hard part, which is what pretraining buys
TRANSFER_MIX = {"continuum": 5.0, "distractor": 0.6}


def transfer_task(seed=0, source_per_class=400, target_per_class=300, **mix):
    """Source classes each carry one motif; target classes carry motif pairs.

    Every target class is a new combination of motifs the source classes
    isolate, so the target mixture is shifted relative to the source.
    """
    mix = {**TRANSFER_MIX, **mix}
    lib = motif_library(TRANSFER_BANDS, TRANSFER_MOTIFS, seed)
    source_mix = np.eye(TRANSFER_MOTIFS)
    target_mix = np.zeros((4, TRANSFER_MOTIFS))
    for c, (a, b) in enumerate([(0, 5), (1, 6), (2, 7), (3, 4)]):
        target_mix[c, [a, b]] = 1.0
    source = mixture_spectra(lib, source_mix, source_per_class, seed, stream=1, **mix)
    target = mixture_spectra(lib, target_mix, target_per_class, seed, stream=2, **mix)
    return TransferTask(source, target, lib)


def scene(samples, width=None):
    """Lay samples out as a cube + label map, one labeled pixel per sample."""
    n = len(samples)
    width = width or int(np.ceil(np.sqrt(n)))
    height = int(np.ceil(n / width))
    cube = np.zeros((height, width, samples.bands), dtype=np.float32)
    labels = np.zeros((height, width), dtype=np.uint16)
    ys, xs = np.divmod(np.arange(n), width)
    cube[ys, xs] = samples.spectra
    labels[ys, xs] = samples.classes + 1
    return SpectralCube(cube), LabelMap(labels)
