"""The five classifier architectures as layer graphs over a (1, 2, L) input."""

from __future__ import annotations

import enum

from .nn.network import INPUT, LayerSpec, NetworkSpec, ShapeError

N_CLASSES = 10
CNN_FILTERS = (256, 256, 80, 80)


class ArchKind(str, enum.Enum):
    CNN4 = "cnn4"
    DENSENET = "densenet"
    CLDNN = "cldnn"
    LSTM2 = "lstm2"
    RESNET3 = "resnet3"


class _Graph:
    """Append-only layer list that tracks the current time length."""

    def __init__(self, input_len: int):
        self.layers: list[LayerSpec] = []
        self.length = input_len
        self.height = 2

    @property
    def last(self) -> int:
        return len(self.layers) - 1

    def add(self, kind, inputs=None, **params) -> int:
        self.layers.append(LayerSpec(kind, params, tuple(inputs) if inputs is not None else None))
        return self.last

    def conv(self, filters, kh, kw, **extra):
        # kernels longer than the remaining signal clamp to its length
        self.height -= kh - 1
        return self.add("conv2d", filters=filters, kernel=(kh, min(kw, self.length)), **extra)

    def pool(self, size=2):
        if self.length // size >= 1:
            self.length //= size
            return self.add("maxpool", pool=size)
        return self.last

    def spec(self, name, input_len) -> NetworkSpec:
        spec = NetworkSpec((1, 2, input_len), tuple(self.layers), name)
        spec.shapes()
        return spec


MIN_LEN = 4


def _check_len(input_len, minimum=MIN_LEN):
    if input_len < minimum:
        raise ShapeError(f"input length {input_len} is too short (need >= {minimum})")


def _conv_block(g: _Graph, filters, kernel_w, dropout):
    g.conv(filters, 1, kernel_w)
    g.add("relu")
    if dropout:
        g.add("dropout", rate=dropout)


def _dense_head(g: _Graph, widths, dropout, first_dropout_only=True):
    for j, w in enumerate(widths):
        g.add("dense", units=w)
        g.add("relu")
        if dropout and (j == 0 or not first_dropout_only):
            g.add("dropout", rate=dropout)
    g.add("dense", units=N_CLASSES)
    g.add("softmax")


def build_cnn(input_len: int, filters=CNN_FILTERS, kernel_w: int = 3, dense: int = 128,
              dropout: float = 0.5, name: str = "cnn") -> NetworkSpec:
    """Plain conv stack -> flatten -> dense -> softmax; ``filters`` sets depth and widths."""
    _check_len(input_len)
    g = _Graph(input_len)
    for f in filters:
        _conv_block(g, f, kernel_w, dropout)
    g.add("flatten")
    _dense_head(g, (dense,), dropout)
    return g.spec(name, input_len)


def build_cnn4(input_len: int, filters=CNN_FILTERS, kernel_w: int = 3, dense: int = 128,
               dropout: float = 0.5) -> NetworkSpec:
    if len(filters) != 4:
        raise ValueError("cnn4 takes exactly four filter counts")
    return build_cnn(input_len, filters, kernel_w, dense, dropout, name="cnn4")


def build_densenet(input_len: int, filters=CNN_FILTERS, kernel_w: int = 3, dense: int = 128,
                   dropout: float = 0.5, skips: bool = True) -> NetworkSpec:
    """CNN4 body split into two dense blocks of two convs each; a block's input is
    concatenated onto its output along the channel axis."""
    _check_len(input_len)
    g = _Graph(input_len)
    for group in (filters[:2], filters[2:]):
        block_in = g.last if g.layers else INPUT
        for f in group:
            _conv_block(g, f, kernel_w, dropout)
        if skips:
            g.add("concat", inputs=(g.last, block_in))
    g.add("flatten")
    _dense_head(g, (dense,), dropout)
    return g.spec("densenet" if skips else "cnn4", input_len)


def build_cldnn(input_len: int, filters=CNN_FILTERS[:3], kernel_w: int = 3, lstm_units: int = 50,
                dense: int = 128, dropout: float = 0.5, recurrent: bool = True) -> NetworkSpec:
    _check_len(input_len)
    g = _Graph(input_len)
    for f in filters:
        _conv_block(g, f, kernel_w, dropout)
    if recurrent:
        g.add("sequence")
        g.add("lstm", units=lstm_units, return_sequences=False)
    else:
        g.add("flatten")
    _dense_head(g, (dense,), dropout)
    return g.spec("cldnn" if recurrent else "cldnn-flat", input_len)


def build_lstm2(input_len: int, units: int = 128) -> NetworkSpec:
    """Two stacked LSTMs over the (amplitude, phase) sequence."""
    _check_len(input_len)
    g = _Graph(input_len)
    g.add("sequence")
    g.add("lstm", units=units, return_sequences=True)
    g.add("lstm", units=units, return_sequences=False)
    g.add("dense", units=N_CLASSES)
    g.add("softmax")
    return g.spec("lstm2", input_len)


def _residual_unit(g: _Graph, filters, kernel_w):
    skip = g.last
    # a bias ahead of batchnorm is cancelled by the mean subtraction
    g.conv(filters, 1, kernel_w, bias=False)
    g.add("batchnorm")
    g.add("relu")
    g.conv(filters, 1, kernel_w, bias=False)
    g.add("batchnorm")
    g.add("add", inputs=(g.last, skip))
    g.add("relu")


def build_resnet3(input_len: int, filters: int = 32, kernel_w: int = 5, n_stacks: int = 3,
                  units_per_stack: int = 2, dense=(128, 128)) -> NetworkSpec:
    """Residual stacks (pointwise conv, residual units, 1x2 max-pool) then a dense head."""
    _check_len(input_len)
    g = _Graph(input_len)
    for _ in range(n_stacks):
        # pointwise conv spanning all rows mixes I/Q (or previous channels) into `filters` maps
        g.conv(filters, g.height, 1)
        for _ in range(units_per_stack):
            _residual_unit(g, filters, kernel_w)
        g.pool(2)
    g.add("flatten")
    _dense_head(g, dense, dropout=0.0)
    return g.spec("resnet3", input_len)


BUILDERS = {
    ArchKind.CNN4: build_cnn4,
    ArchKind.DENSENET: build_densenet,
    ArchKind.CLDNN: build_cldnn,
    ArchKind.LSTM2: build_lstm2,
    ArchKind.RESNET3: build_resnet3,
}


def build(arch: ArchKind | str, input_len: int, **overrides) -> NetworkSpec:
    return BUILDERS[ArchKind(arch)](input_len, **overrides)
