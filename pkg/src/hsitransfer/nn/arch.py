"""Network topologies for the two spectral CNN families and their shape arithmetic."""

from dataclasses import asdict, dataclass, replace

from hsitransfer.errors import InsufficientSpectralExtent

CNN1D = "cnn1d"
PTCNN = "ptcnn"

# (conv_len, fc_sizes, batch_norm, pooling) per family
_FAMILY_DEFAULTS = {
    CNN1D: (5, (512, 128), True, True),
    PTCNN: (16, (512, 256, 128), False, False),
}


@dataclass(frozen=True)
class ArchitectureConfig:
    """Extractor of ``blocks`` conv stages followed by a fully connected head.

    A 1D-CNN block is conv -> BN -> ReLU -> max pool; a PT-CNN block is
    conv -> ReLU with no pooling. Family defaults fill any field left as None.
    """

    family: str
    blocks: int
    class_count: int
    kernels: int = 200
    conv_len: int | None = None
    conv_stride: int = 1
    pool_len: int = 2
    pool_stride: int = 2
    fc_sizes: tuple | None = None
    batch_norm: bool | None = None
    pooling: bool | None = None
    activation: str = "relu"

    def __post_init__(self):
        if self.family not in _FAMILY_DEFAULTS:
            raise ValueError(f"unknown family {self.family!r}")
        conv_len, fc_sizes, batch_norm, pooling = _FAMILY_DEFAULTS[self.family]
        if self.conv_len is None:
            object.__setattr__(self, "conv_len", conv_len)
        if self.fc_sizes is None:
            object.__setattr__(self, "fc_sizes", fc_sizes)
        else:
            object.__setattr__(self, "fc_sizes", tuple(int(s) for s in self.fc_sizes))
        if self.batch_norm is None:
            object.__setattr__(self, "batch_norm", batch_norm)
        if self.pooling is None:
            object.__setattr__(self, "pooling", pooling)
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        sizes = [self.blocks, self.class_count, self.kernels, self.conv_len, self.conv_stride,
                 self.pool_len, self.pool_stride, *self.fc_sizes]
        if any(s < 1 for s in sizes):
            raise ValueError(f"all sizes must be >= 1: {self}")

    @classmethod
    def cnn1d(cls, blocks, class_count, **kw):
        return cls(CNN1D, blocks, class_count, **kw)

    @classmethod
    def ptcnn(cls, blocks, class_count, **kw):
        return cls(PTCNN, blocks, class_count, **kw)

    def with_classes(self, class_count):
        return replace(self, class_count=class_count)

    def to_dict(self):
        d = asdict(self)
        d["fc_sizes"] = list(self.fc_sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def shape_trace(arch, input_bands):
    """Spectral extent after every extractor layer, starting with the input.

    Convolutions are valid (no padding); pooling floors odd extents.
    Raises InsufficientSpectralExtent naming the first layer whose input is
    shorter than its kernel.
    """
    if input_bands < 1:
        raise ValueError(f"input_bands must be >= 1, got {input_bands}")
    extents = [input_bands]
    extent = input_bands
    layer = 0
    for _ in range(arch.blocks):
        if extent < arch.conv_len:
            raise InsufficientSpectralExtent(layer, extent, arch.conv_len)
        extent = (extent - arch.conv_len) // arch.conv_stride + 1
        extents.append(extent)
        layer += 1
        if arch.pooling:
            if extent < arch.pool_len:
                raise InsufficientSpectralExtent(layer, extent, arch.pool_len)
            extent = (extent - arch.pool_len) // arch.pool_stride + 1
            extents.append(extent)
            layer += 1
    return extents


def is_feasible(arch, input_bands):
    try:
        shape_trace(arch, input_bands)
    except InsufficientSpectralExtent:
        return False
    return True


def feature_size(arch, input_bands):
    return shape_trace(arch, input_bands)[-1] * arch.kernels
