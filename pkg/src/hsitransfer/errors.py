class DataError(ValueError):
    """Input data is malformed or inconsistent."""


class FormatError(DataError):
    """A binary container file failed to parse."""


class ConfigError(ValueError):
    """An experiment or CLI configuration is invalid."""


class InsufficientSpectralExtent(ValueError):
    """A layer receives fewer spectral positions than its kernel needs."""

    def __init__(self, layer_index, extent, kernel):
        self.layer_index = layer_index
        self.extent = extent
        self.kernel = kernel
        super().__init__(
            f"layer {layer_index}: spectral extent {extent} is smaller than kernel length {kernel}"
        )
