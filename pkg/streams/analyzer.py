"""Parameter and FLOPs accounting over architecture descriptions."""
import math
from dataclasses import dataclass

from . import zoo
from .exceptions import ArchError


@dataclass(frozen=True)
class LayerCost:
    name: str
    kind: str
    params: int
    flops: int
    output_shape: tuple


@dataclass(frozen=True)
class CostReport:
    name: str
    convention: str
    rows: tuple

    @property
    def params(self):
        return sum(row.params for row in self.rows)

    @property
    def flops(self):
        return sum(row.flops for row in self.rows)


@dataclass(frozen=True)
class Comparison:
    base: CostReport
    stnet: CostReport

    @property
    def ratio_params(self):
        return self.stnet.params / self.base.params

    @property
    def ratio_flops(self):
        return self.stnet.flops / self.base.flops


def layer_params(spec, in_shape):
    kind = spec.kind
    if kind == 'conv2d':
        return (spec.kernel * spec.kernel * in_shape[-1] + spec.bias) * spec.filters
    if kind == 'depthwise-conv2d':
        return (spec.kernel * spec.kernel + spec.bias) * in_shape[-1]
    if kind == 'dense':
        return (in_shape[0] + spec.bias) * spec.filters
    if kind == 'batch-norm':
        # gamma, beta, moving mean and moving variance
        return 4 * in_shape[-1]
    return 0


def _spatial_v1(spec, in_shapes, out_shape):
    kind = spec.kind
    out_size = math.prod(out_shape)
    in_shape = in_shapes[0]
    if kind == 'conv2d':
        macs = spec.kernel * spec.kernel * in_shape[-1] * out_size
        return 2 * macs + (out_size if spec.bias else 0)
    if kind == 'depthwise-conv2d':
        macs = spec.kernel * spec.kernel * out_size
        return 2 * macs + (out_size if spec.bias else 0)
    if kind == 'dense':
        return 2 * in_shape[0] * spec.filters + (spec.filters if spec.bias else 0)
    if kind == 'batch-norm':
        return 2 * out_size
    if kind in ('relu', 'residual-add'):
        return out_size
    if kind in ('max-pool', 'avg-pool'):
        return (spec.kernel * spec.kernel - 1) * out_size
    if kind == 'global-avg-pool':
        return (in_shape[0] * in_shape[1] - 1) * out_size
    if kind == 'softmax':
        return 5 * out_size
    return 0


def _weight_pass_v1(spec, in_shapes, out_shape):
    kind = spec.kind
    in_shape = in_shapes[0]
    if kind in ('conv2d', 'depthwise-conv2d', 'dense'):
        weights = layer_params(spec, in_shape)
        biases = spec.filters if kind != 'depthwise-conv2d' else in_shape[-1]
        if not spec.bias:
            return 2 * weights
        return 2 * (weights - biases) + biases
    if kind == 'batch-norm':
        return 2 * in_shape[-1]
    if kind == 'softmax':
        return 5 * out_shape[0]
    return 0


# Versioned: a convention's numbers never change under its name.
CONVENTIONS = {
    'spatial-v1': _spatial_v1,
    'weight-pass-v1': _weight_pass_v1,
}

DEFAULT_CONVENTION = 'spatial-v1'


def cost_report(desc, convention=DEFAULT_CONVENTION):
    try:
        flops_of = CONVENTIONS[convention]
    except KeyError:
        raise ArchError(f"unknown FLOPs convention {convention!r} (one of {', '.join(CONVENTIONS)})") from None
    shapes = zoo.infer_shapes(desc)
    rows = []
    for spec in desc.layers:
        in_shapes = [shapes[name] for name in spec.inputs]
        out_shape = shapes[spec.name]
        rows.append(LayerCost(
            name=spec.name, kind=spec.kind, params=layer_params(spec, in_shapes[0]),
            flops=flops_of(spec, in_shapes, out_shape), output_shape=out_shape,
        ))
    return CostReport(name=desc.name, convention=convention, rows=tuple(rows))


def count_params(desc) -> int:
    shapes = zoo.infer_shapes(desc)
    return sum(layer_params(spec, shapes[spec.inputs[0]]) for spec in desc.layers)


def count_flops(desc, convention=DEFAULT_CONVENTION) -> int:
    return cost_report(desc, convention).flops


def compare(stnet_name, convention=DEFAULT_CONVENTION, input_shape=(32, 32, 3), classes=10) -> Comparison:
    """Base and STNet cost reports for a name such as ``STNet5_5_ResNet50``."""
    if isinstance(stnet_name, str):
        stnet_name = zoo.parse_stnet_name(stnet_name)
    base = zoo.base_desc(stnet_name.base, input_shape=input_shape, classes=classes)
    stnet = zoo.stnet_desc(base, stnet_name.num_streams, stnet_name.scale)
    return Comparison(base=cost_report(base, convention), stnet=cost_report(stnet, convention))


def flops_admissible(base, stnet, convention=DEFAULT_CONVENTION):
    return count_flops(stnet, convention) < count_flops(base, convention)
