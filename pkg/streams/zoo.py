"""Declarative architecture descriptions, down-scaling and STNet assembly.

An ``ArchDescription`` is a flat, topologically ordered list of
``LayerSpec`` entries wired together by name, in the manner of a functional
model config. Residual and inverted-residual blocks are expressed through
explicit ``inputs`` plus a ``block`` tag. The same value is counted by the
analyzer, compiled into an executable graph and embedded in checkpoints
through its canonical text form.
"""
import math
from dataclasses import dataclass, fields, replace

from .exceptions import ArchError, NameFormatError

LAYER_KINDS = (
    'conv2d',
    'depthwise-conv2d',
    'dense',
    'batch-norm',
    'relu',
    'max-pool',
    'avg-pool',
    'global-avg-pool',
    'flatten',
    'concat',
    'residual-add',
    'softmax',
)

ROLES = ('body', 'head', 'classifier')

BN_EPSILON = 1e-3
BN_MOMENTUM = 0.99

JOINT_HEAD_UNITS = 400

BASE_NAMES = ('VGG16', 'ResNet50', 'MobileNetV2', 'MiniVGG')


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    inputs: tuple = ()
    filters: int = 0
    kernel: int = 0
    stride: int = 1
    padding: str = 'same'
    bias: bool = True
    cap: float = 0.0
    epsilon: float = BN_EPSILON
    momentum: float = BN_MOMENTUM
    role: str = 'body'
    block: str = ''

    @property
    def has_params(self):
        return self.kind in ('conv2d', 'depthwise-conv2d', 'dense', 'batch-norm')


@dataclass(frozen=True)
class ArchDescription:
    name: str
    family: str
    input_shape: tuple
    classes: int
    layers: tuple
    inputs: tuple = ('input',)
    alpha: float = 1.0
    scale: float = 1.0
    streams: int = 1
    base: str = ''
    shared_streams: bool = False

    @property
    def output(self):
        return self.layers[-1].name

    def layer(self, name):
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise ArchError(f"no layer named {name!r} in {self.name}")

    @property
    def blocks(self):
        seen = []
        for spec in self.layers:
            if spec.block and spec.block not in seen:
                seen.append(spec.block)
        return seen


@dataclass(frozen=True)
class StnetName:
    num_streams: int
    scale: float
    base: str

    def __post_init__(self):
        if self.num_streams < 1:
            raise ArchError("num_streams must be >= 1")
        if not self.scale > 0:
            raise ArchError("scale must be > 0")
        if self.base not in BASE_NAMES:
            raise ArchError(f"unknown base network {self.base!r}")

    @property
    def alpha(self):
        return 1.0 / self.scale

    def __str__(self):
        return format_stnet_name(self)


class _Stack:
    """Appends layers, wiring each one to the previous unless told otherwise."""

    def __init__(self, entry='input'):
        self.layers = []
        self.head = entry

    def add(self, kind, name, inputs=None, **options):
        if inputs is None:
            inputs = (self.head,)
        self.layers.append(LayerSpec(name=name, kind=kind, inputs=tuple(inputs), **options))
        self.head = name
        return name


def _classifier(stack, classes):
    stack.add('dense', 'predictions', filters=classes, role='classifier')
    stack.add('softmax', 'softmax', role='classifier')


def vgg16_desc(input_shape=(32, 32, 3), classes=10):
    stack = _Stack()
    for block, (width, convs) in enumerate([(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)], start=1):
        for i in range(1, convs + 1):
            stack.add('conv2d', f'block{block}_conv{i}', filters=width, kernel=3, block=f'block{block}')
            stack.add('relu', f'block{block}_relu{i}', block=f'block{block}')
        stack.add('max-pool', f'block{block}_pool', kernel=2, stride=2, padding='valid', block=f'block{block}')
    stack.add('flatten', 'flatten', role='head')
    for i in (1, 2):
        stack.add('dense', f'fc{i}', filters=4096, role='head')
        stack.add('relu', f'fc{i}_relu', role='head')
    _classifier(stack, classes)
    return ArchDescription(
        name='VGG16', family='vgg16', input_shape=tuple(input_shape), classes=classes,
        layers=tuple(stack.layers),
    )


def _conv_bn(stack, name, filters, kernel, stride=1, bias=True, relu=True, block='', inputs=None):
    stack.add('conv2d', f'{name}_conv', inputs=inputs, filters=filters, kernel=kernel, stride=stride,
              bias=bias, block=block)
    stack.add('batch-norm', f'{name}_bn', block=block)
    if relu:
        stack.add('relu', f'{name}_relu', block=block)
    return stack.head


def _bottleneck(stack, name, filters, stride, conv_shortcut):
    entry = stack.head
    if conv_shortcut:
        shortcut = _conv_bn(stack, f'{name}_0', 4 * filters, 1, stride=stride, relu=False, block=name)
    else:
        shortcut = entry
    _conv_bn(stack, f'{name}_1', filters, 1, stride=stride, block=name, inputs=(entry,))
    _conv_bn(stack, f'{name}_2', filters, 3, block=name)
    residual = _conv_bn(stack, f'{name}_3', 4 * filters, 1, relu=False, block=name)
    stack.add('residual-add', f'{name}_add', inputs=(shortcut, residual), block=name)
    stack.add('relu', f'{name}_out', block=name)


def resnet50_desc(input_shape=(32, 32, 3), classes=10):
    """ResNet50 v1; convolutions keep their biases as in the Keras reference definition."""
    stack = _Stack()
    _conv_bn(stack, 'conv1', 64, 7, stride=2)
    stack.add('max-pool', 'pool1_pool', kernel=3, stride=2, padding='same')
    for stage, (filters, blocks, stride) in enumerate([(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)], start=2):
        for i in range(1, blocks + 1):
            _bottleneck(stack, f'conv{stage}_block{i}', filters, stride if i == 1 else 1, conv_shortcut=i == 1)
    stack.add('global-avg-pool', 'avg_pool')
    _classifier(stack, classes)
    return ArchDescription(
        name='ResNet50', family='resnet50', input_shape=tuple(input_shape), classes=classes,
        layers=tuple(stack.layers),
    )


def make_divisible(v, divisor=8, min_value=None):
    """Round a channel count to the nearest multiple of ``divisor``, never dropping below 90% of ``v``."""
    if min_value is None:
        min_value = divisor
    new_v = max(min_value, int(v + divisor / 2) // divisor * divisor)
    if new_v < 0.9 * v:
        new_v += divisor
    return new_v


_INVERTED_RESIDUAL_SETTINGS = (
    # expansion, filters, repeats, first stride
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
)


def mobilenetv2_desc(alpha=1.0, input_shape=(32, 32, 3), classes=10):
    if not alpha > 0:
        raise ArchError(f"alpha must be > 0, got {alpha}")
    stack = _Stack()
    channels = make_divisible(32 * alpha, 8)
    stack.add('conv2d', 'Conv1', filters=channels, kernel=3, stride=2, bias=False)
    stack.add('batch-norm', 'bn_Conv1')
    stack.add('relu', 'Conv1_relu', cap=6.0)
    block_id = 0
    for expansion, filters, repeats, first_stride in _INVERTED_RESIDUAL_SETTINGS:
        for i in range(repeats):
            stride = first_stride if i == 0 else 1
            pointwise = make_divisible(int(filters * alpha), 8)
            prefix = f'block_{block_id}_' if block_id else 'expanded_conv_'
            tag = prefix.rstrip('_')
            entry = stack.head
            if block_id:
                stack.add('conv2d', prefix + 'expand', filters=expansion * channels, kernel=1, bias=False, block=tag)
                stack.add('batch-norm', prefix + 'expand_BN', block=tag)
                stack.add('relu', prefix + 'expand_relu', cap=6.0, block=tag)
            stack.add('depthwise-conv2d', prefix + 'depthwise', kernel=3, stride=stride, bias=False, block=tag)
            stack.add('batch-norm', prefix + 'depthwise_BN', block=tag)
            stack.add('relu', prefix + 'depthwise_relu', cap=6.0, block=tag)
            stack.add('conv2d', prefix + 'project', filters=pointwise, kernel=1, bias=False, block=tag)
            stack.add('batch-norm', prefix + 'project_BN', block=tag)
            if channels == pointwise and stride == 1:
                stack.add('residual-add', prefix + 'add', inputs=(entry, stack.head), block=tag)
            channels = pointwise
            block_id += 1
    last = make_divisible(1280 * alpha, 8) if alpha > 1.0 else 1280
    stack.add('conv2d', 'Conv_1', filters=last, kernel=1, bias=False)
    stack.add('batch-norm', 'Conv_1_bn')
    stack.add('relu', 'out_relu', cap=6.0)
    stack.add('global-avg-pool', 'global_average_pooling2d')
    _classifier(stack, classes)
    return ArchDescription(
        name='MobileNetV2', family='mobilenetv2', input_shape=tuple(input_shape), classes=classes,
        layers=tuple(stack.layers), alpha=float(alpha),
    )


def minivgg_desc(filters=(16, 16, 32, 32), input_shape=(32, 32, 3), classes=10, hidden=128):
    """Small VGG-style network: a max-pool closes every pair of convolutions."""
    if not filters or any(f < 1 for f in filters):
        raise ArchError("minivgg needs at least one filter count, all >= 1")
    stack = _Stack()
    pool = 0
    for i, width in enumerate(filters):
        stack.add('conv2d', f'conv{i + 1}', filters=width, kernel=3)
        stack.add('relu', f'relu{i + 1}')
        if i % 2 == 1 or i == len(filters) - 1:
            pool += 1
            stack.add('max-pool', f'pool{pool}', kernel=2, stride=2, padding='valid')
    stack.add('flatten', 'flatten', role='head')
    stack.add('dense', 'fc1', filters=hidden, role='head')
    stack.add('relu', 'fc1_relu', role='head')
    _classifier(stack, classes)
    return ArchDescription(
        name='MiniVGG', family='minivgg', input_shape=tuple(input_shape), classes=classes,
        layers=tuple(stack.layers),
    )


_BASE_BUILDERS = {
    'VGG16': vgg16_desc,
    'ResNet50': resnet50_desc,
    'MobileNetV2': mobilenetv2_desc,
    'MiniVGG': minivgg_desc,
}


def base_desc(name, input_shape=(32, 32, 3), classes=10):
    try:
        builder = _BASE_BUILDERS[name]
    except KeyError:
        raise ArchError(f"unknown base network {name!r}; choose one of {', '.join(BASE_NAMES)}") from None
    return builder(input_shape=input_shape, classes=classes)


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def downscale(desc, factor):
    """Divide every hidden width by ``factor`` (half-up rounding, floor 1); the classifier keeps its width."""
    if not factor >= 1:
        raise ArchError(f"downscale factor must be >= 1, got {factor}")
    if desc.family == 'stnet':
        raise ArchError("downscale applies to base descriptions, not assembled STNets")
    if factor == 1:
        return desc
    if desc.family == 'mobilenetv2':
        scaled = mobilenetv2_desc(alpha=desc.alpha / factor, input_shape=desc.input_shape, classes=desc.classes)
        return replace(scaled, name=desc.name, scale=desc.scale * factor)
    layers = []
    for spec in desc.layers:
        if spec.kind in ('conv2d', 'dense') and spec.role != 'classifier':
            spec = replace(spec, filters=max(1, _round_half_up(spec.filters / factor)))
        layers.append(spec)
    return replace(desc, layers=tuple(layers), scale=desc.scale * factor)


def _out_extent(size, kernel, stride, padding, node):
    if padding == 'same':
        out = -(-size // stride)
    elif padding == 'valid':
        out = (size - kernel) // stride + 1
    else:
        raise ArchError(f"unknown padding {padding!r} in layer {node}")
    if out < 1:
        raise ArchError(f"layer {node} reduces spatial extent {size} below 1")
    return out


def infer_shapes(desc):
    """Per-sample output shape of every layer and input, keyed by name."""
    shapes = {name: tuple(desc.input_shape) for name in desc.inputs}
    for spec in desc.layers:
        if spec.kind not in LAYER_KINDS:
            raise ArchError(f"unknown layer kind {spec.kind!r} in layer {spec.name}")
        try:
            ins = [shapes[name] for name in spec.inputs]
        except KeyError as exc:
            raise ArchError(f"layer {spec.name} reads undefined tensor {exc.args[0]!r}") from None
        if not ins:
            raise ArchError(f"layer {spec.name} has no inputs")
        shape = ins[0]
        kind = spec.kind
        if kind in ('conv2d', 'depthwise-conv2d', 'max-pool', 'avg-pool'):
            if len(shape) != 3:
                raise ArchError(f"layer {spec.name} expects an HxWxC input, got {shape}")
            h = _out_extent(shape[0], spec.kernel, spec.stride, spec.padding, spec.name)
            w = _out_extent(shape[1], spec.kernel, spec.stride, spec.padding, spec.name)
            channels = spec.filters if kind == 'conv2d' else shape[2]
            if kind == 'conv2d' and channels < 1:
                raise ArchError(f"layer {spec.name} has no filters")
            out = (h, w, channels)
        elif kind == 'dense':
            if len(shape) != 1:
                raise ArchError(f"layer {spec.name} expects a flat input, got {shape}")
            if spec.filters < 1:
                raise ArchError(f"layer {spec.name} has no units")
            out = (spec.filters,)
        elif kind == 'global-avg-pool':
            if len(shape) != 3:
                raise ArchError(f"layer {spec.name} expects an HxWxC input, got {shape}")
            out = (shape[2],)
        elif kind == 'flatten':
            out = (math.prod(shape),)
        elif kind == 'concat':
            if len(ins) < 2:
                raise ArchError(f"concat {spec.name} needs at least two branches")
            if any(s[:-1] != shape[:-1] for s in ins):
                raise ArchError(f"concat {spec.name} joins mismatched shapes {ins}")
            out = shape[:-1] + (sum(s[-1] for s in ins),)
        elif kind == 'residual-add':
            if len(ins) != 2 or ins[0] != ins[1]:
                raise ArchError(f"residual-add {spec.name} needs two equal shapes, got {ins}")
            out = shape
        elif kind == 'softmax':
            if len(shape) != 1:
                raise ArchError(f"softmax {spec.name} expects logits, got {shape}")
            out = shape
        else:
            out = shape
        shapes[spec.name] = out
    return shapes


def _stream_layers(body, k, entry):
    prefix = f's{k}/'
    renamed = []
    for spec in body:
        inputs = tuple(entry if name == 'input' else prefix + name for name in spec.inputs)
        renamed.append(replace(spec, name=prefix + spec.name, inputs=inputs))
    return renamed


def stnet_desc(base, num_streams, scale, classes=None, share_weights=False,
               head_units=JOINT_HEAD_UNITS) -> ArchDescription:
    """Assemble an STNet description: ``num_streams`` down-scaled base bodies and the joint classifier."""
    if num_streams < 1:
        raise ArchError("num_streams must be >= 1")
    classes = base.classes if classes is None else classes
    stream = downscale(base, scale)
    body = [spec for spec in stream.layers if spec.role == 'body']
    if not body:
        raise ArchError(f"{base.name} has no body layers to use as a stream")
    trial = replace(stream, layers=tuple(body))
    needs_flatten = len(infer_shapes(trial)[body[-1].name]) > 1

    layers = []
    ends = []
    inputs = tuple(f'input{k}' for k in range(num_streams))
    for k in range(num_streams):
        layers.extend(_stream_layers(body, k, inputs[k]))
        end = layers[-1].name
        if needs_flatten:
            end = f's{k}/flatten'
            layers.append(LayerSpec(name=end, kind='flatten', inputs=(layers[-1].name,)))
        ends.append(end)

    stack = _Stack(entry=ends[0])
    stack.layers = layers
    if num_streams > 1:
        stack.add('concat', 'concat', inputs=ends, role='head')
    stack.add('dense', 'fc_joint', filters=head_units, role='head')
    stack.add('relu', 'fc_joint_relu', role='head')
    stack.add('batch-norm', 'bn_joint', role='head')
    stack.add('relu', 'bn_joint_relu', role='head')
    _classifier(stack, classes)

    name = StnetName(num_streams, float(scale), display_base(base))
    return ArchDescription(
        name=format_stnet_name(name), family='stnet', input_shape=base.input_shape, classes=classes,
        layers=tuple(stack.layers), inputs=inputs, alpha=stream.alpha, scale=float(scale),
        streams=num_streams, base=name.base, shared_streams=bool(share_weights),
    )


def display_base(desc):
    for name in BASE_NAMES:
        if name.lower() == desc.family:
            return name
    raise ArchError(f"{desc.family!r} is not a base family")


def stream_of(layer_name):
    """Stream index encoded in a layer name (``s3/...`` -> 3), or None for shared layers."""
    head, sep, _ = layer_name.partition('/')
    if sep and head.startswith('s') and head[1:].isdigit():
        return int(head[1:])
    return None


def resolve_model(text, input_shape=(32, 32, 3), classes=10, share_weights=False):
    """Description for a base network name or an STNet name such as ``STNet5_5_ResNet50``."""
    if text in _BASE_BUILDERS:
        return base_desc(text, input_shape=input_shape, classes=classes)
    name = parse_stnet_name(text)
    base = base_desc(name.base, input_shape=input_shape, classes=classes)
    return stnet_desc(base, name.num_streams, name.scale, share_weights=share_weights)


def build_stnet(base, num_streams, scale, classes=None, share_weights=False, precision='float32', seed=0):
    """Compile an STNet graph; streams own disjoint parameters unless ``share_weights``."""
    from .graph import compile_graph

    desc = stnet_desc(base, num_streams, scale, classes=classes, share_weights=share_weights)
    return compile_graph(desc, precision=precision, seed=seed)


# Naming template: STNet{num of streams}_{scale}_{base network name}

def _format_scale(scale):
    scale = float(scale)
    if scale.is_integer():
        return str(int(scale))
    return repr(scale)


def format_stnet_name(name) -> str:
    return f"STNet{name.num_streams}_{_format_scale(name.scale)}_{name.base}"


def parse_stnet_name(text) -> StnetName:
    prefix = 'STNet'
    if not text.startswith(prefix):
        pos = next((i for i, (a, b) in enumerate(zip(text, prefix)) if a != b), min(len(text), len(prefix)))
        raise NameFormatError("expected 'STNet{streams}_{scale}_{base}'", text, pos)
    pos = len(prefix)
    parens = pos < len(text) and text[pos] == '('
    if parens:
        pos += 1
    start = pos
    while pos < len(text) and text[pos].isdigit():
        pos += 1
    if pos == start:
        raise NameFormatError("expected stream count", text, pos)
    streams = int(text[start:pos])
    if parens:
        if pos >= len(text) or text[pos] != ')':
            raise NameFormatError("expected ')'", text, pos)
        pos += 1
    if pos >= len(text) or text[pos] != '_':
        raise NameFormatError("expected '_' after stream count", text, pos)
    pos += 1
    start = pos
    while pos < len(text) and (text[pos].isdigit() or text[pos] in '.eE+-'):
        pos += 1
    try:
        scale = float(text[start:pos])
    except ValueError:
        raise NameFormatError("expected a real scale factor", text, start) from None
    if not math.isfinite(scale) or scale <= 0:
        raise NameFormatError("scale must be a positive real", text, start)
    if pos >= len(text) or text[pos] != '_':
        raise NameFormatError("expected '_' after scale", text, pos)
    pos += 1
    base = text[pos:]
    if base not in BASE_NAMES:
        raise NameFormatError(f"unknown base network (one of {', '.join(BASE_NAMES)})", text, pos)
    if streams < 1:
        raise NameFormatError("stream count must be >= 1", text, len(prefix))
    return StnetName(streams, scale, base)


# Canonical text form: one header line, then one layer per line.

_LAYER_FIELDS = [f for f in fields(LayerSpec) if f.name not in ('name', 'kind', 'inputs')]
_DEFAULTS = {f.name: f.default for f in _LAYER_FIELDS}


def _encode(value):
    if isinstance(value, bool):
        return '1' if value else '0'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ','.join(str(v) for v in value)
    return str(value)


def dumps(desc):
    header = [
        f"name={desc.name}",
        f"family={desc.family}",
        f"input={'x'.join(str(d) for d in desc.input_shape)}",
        f"classes={desc.classes}",
        f"inputs={_encode(desc.inputs)}",
        f"alpha={_encode(float(desc.alpha))}",
        f"scale={_encode(float(desc.scale))}",
        f"streams={desc.streams}",
    ]
    if desc.base:
        header.append(f"base={desc.base}")
    if desc.shared_streams:
        header.append("shared=1")
    lines = ['arch ' + ' '.join(header)]
    for spec in desc.layers:
        parts = [spec.kind, f"name={spec.name}", f"in={_encode(spec.inputs)}"]
        for f in _LAYER_FIELDS:
            value = getattr(spec, f.name)
            if value != _DEFAULTS[f.name]:
                parts.append(f"{f.name}={_encode(value)}")
        lines.append(' '.join(parts))
    return '\n'.join(lines) + '\n'


def _pairs(tokens, lineno):
    out = {}
    for token in tokens:
        key, sep, value = token.partition('=')
        if not sep:
            raise ArchError(f"line {lineno}: expected key=value, got {token!r}")
        out[key] = value
    return out


def loads(text):
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or not lines[0].startswith('arch '):
        raise ArchError("description text must start with an 'arch' header line")
    head = _pairs(lines[0].split()[1:], 1)
    try:
        desc_kwargs = {
            'name': head['name'],
            'family': head['family'],
            'input_shape': tuple(int(d) for d in head['input'].split('x')),
            'classes': int(head['classes']),
            'inputs': tuple(head['inputs'].split(',')),
            'alpha': float(head.get('alpha', 1.0)),
            'scale': float(head.get('scale', 1.0)),
            'streams': int(head.get('streams', 1)),
            'base': head.get('base', ''),
            'shared_streams': head.get('shared', '0') == '1',
        }
    except (KeyError, ValueError) as exc:
        raise ArchError(f"malformed arch header: {exc}") from None
    layers = []
    for lineno, line in enumerate(lines[1:], start=2):
        kind, *tokens = line.split()
        if kind not in LAYER_KINDS:
            raise ArchError(f"line {lineno}: unknown layer kind {kind!r}")
        values = _pairs(tokens, lineno)
        try:
            options = {'name': values.pop('name'), 'kind': kind, 'inputs': tuple(values.pop('in').split(','))}
        except KeyError as exc:
            raise ArchError(f"line {lineno}: missing {exc.args[0]}") from None
        for key, raw in values.items():
            if key not in _DEFAULTS:
                raise ArchError(f"line {lineno}: unknown field {key!r}")
            default = _DEFAULTS[key]
            if isinstance(default, bool):
                options[key] = raw == '1'
            else:
                options[key] = type(default)(raw)
        layers.append(LayerSpec(**options))
    return ArchDescription(layers=tuple(layers), **desc_kwargs)
