"""Executable computation graphs compiled from architecture descriptions.

A ``Graph`` runs its layers in description order (descriptions are
topologically ordered by construction), keeps every activation of the last
forward pass and back-propagates cross-entropy gradients through them.
"""
import numpy as np
import structlog

from .exceptions import ArchError, GraphStateError, LabelError, NonFiniteError, ShapeError
from .layers import build_layer
from .zoo import infer_shapes, stream_of

log = structlog.get_logger(__name__)

PRECISIONS = ('float32', 'float64')

PROBABILITY_FLOOR = 1e-12


def _validate_topology(desc):
    if not desc.layers:
        raise ArchError(f"{desc.name} has no layers")
    if desc.layers[-1].kind != 'softmax':
        raise ArchError(f"{desc.name} must end in a softmax node, got {desc.layers[-1].kind}")
    names = set(desc.inputs)
    consumed = set()
    for spec in desc.layers:
        if spec.name in names:
            raise ArchError(f"duplicate node name {spec.name!r} in {desc.name}")
        for name in spec.inputs:
            if name not in names:
                raise ArchError(f"node {spec.name} reads {name!r} before it is defined")
            consumed.add(name)
        names.add(spec.name)
    unused = [name for name in desc.inputs if name not in consumed]
    if unused:
        raise ArchError(f"entry points {unused} feed no node in {desc.name}")
    dangling = [spec.name for spec in desc.layers[:-1] if spec.name not in consumed]
    if dangling:
        raise ArchError(f"{desc.name} has more than one output: {dangling + [desc.output]}")


class Graph:
    """A compiled description: layers, parameters and the activations of the last forward pass."""

    def __init__(self, desc, layers, dtype):
        self.desc = desc
        self.layers = layers
        self.dtype = np.dtype(dtype)
        self.inputs = tuple(desc.inputs)
        self.output = desc.output
        self._activations = {}
        self._trained_forward = False

    @property
    def name(self):
        return self.desc.name

    @property
    def precision(self):
        return self.dtype.name

    @property
    def num_classes(self):
        return self.desc.classes

    def __repr__(self):
        return f"Graph({self.name}, inputs={len(self.inputs)}, nodes={len(self.layers)})"

    def parameters(self):
        """Every distinct parameter tensor, in graph order."""
        seen = set()
        params = []
        for layer in self.layers:
            for param in layer.params:
                if id(param) not in seen:
                    seen.add(id(param))
                    params.append(param)
        return params

    def trainable_parameters(self):
        return [param for param in self.parameters() if param.trainable]

    def stream_parameters(self, k):
        return [param for layer in self.layers if stream_of(layer.name) == k for param in layer.params]

    def head_parameters(self):
        return [param for layer in self.layers if stream_of(layer.name) is None for param in layer.params]

    def param_count(self):
        return sum(param.value.size for param in self.parameters())

    def assert_decoupled(self):
        """Raise ArchError if any parameter tensor is reachable from two streams."""
        if self.desc.shared_streams:
            log.info("decoupling check skipped", graph=self.name, reason="streams share weights")
            return False
        owners = {}
        for k in range(self.desc.streams if self.desc.family == 'stnet' else 0):
            for param in self.stream_parameters(k):
                other = owners.setdefault(id(param), k)
                if other != k:
                    raise ArchError(f"{param!r} is shared by streams {other} and {k}")
        return True

    def zero_grad(self):
        for param in self.parameters():
            param.grad[...] = 0

    def activation(self, name):
        try:
            return self._activations[name]
        except KeyError:
            raise GraphStateError(f"no activation recorded for {name!r}; run forward first") from None

    def _check_inputs(self, inputs):
        if isinstance(inputs, np.ndarray):
            inputs = [inputs]
        if len(inputs) != len(self.inputs):
            raise ShapeError(f"expected {len(self.inputs)} input tensors, got {len(inputs)}", node=self.inputs[0])
        expected = tuple(self.desc.input_shape)
        checked = []
        batch = None
        for entry, x in zip(self.inputs, inputs):
            x = np.asarray(x)
            if x.ndim != 4 or tuple(x.shape[1:]) != expected:
                raise ShapeError(f"input shape {x.shape} does not match (batch,) + {expected}", node=entry)
            if batch is not None and x.shape[0] != batch:
                raise ShapeError(f"batch size {x.shape[0]} differs from {batch}", node=entry)
            batch = x.shape[0]
            if not np.all(np.isfinite(x)):
                raise NonFiniteError("input contains non-finite values", node=entry)
            checked.append(x.astype(self.dtype, copy=False))
        return checked

    def forward(self, inputs, training=False):
        """Class probabilities for a batch; ``inputs`` holds one NHWC array per entry point."""
        values = dict(zip(self.inputs, self._check_inputs(inputs)))
        for layer in self.layers:
            values[layer.name] = layer.forward([values[name] for name in layer.spec.inputs], training)
        self._activations = values
        self._trained_forward = training
        return values[self.output]

    def backward(self, labels):
        """Fill gradient buffers with d(mean cross-entropy)/d(param) for the last training forward."""
        if not self._trained_forward:
            raise GraphStateError("backward needs a preceding forward pass in training mode")
        probs = self._activations[self.output]
        labels = _check_labels(labels, probs)
        self.zero_grad()
        softmax = self.layers[-1]
        n = probs.shape[0]
        grad = probs.copy()
        grad[np.arange(n), labels] -= 1
        grads = {softmax.spec.inputs[0]: grad / n}
        entries = set(self.inputs)
        for layer in reversed(self.layers[:-1]):
            g = grads.pop(layer.name, None)
            if g is None:
                continue
            for name, gi in zip(layer.spec.inputs, layer.backward(g)):
                if name in entries:
                    continue
                if name in grads:
                    grads[name] = grads[name] + gi
                else:
                    grads[name] = gi
        # a forward pass is consumed by one backward pass
        self._trained_forward = False


def compile_graph(desc, precision='float32', seed=0) -> Graph:
    """Build layers, share stream weights when the description asks for it, and initialize from ``seed``."""
    if precision not in PRECISIONS:
        raise ArchError(f"precision must be one of {PRECISIONS}, got {precision!r}")
    _validate_topology(desc)
    shapes = infer_shapes(desc)
    rng = np.random.default_rng(seed)
    layers = []
    by_name = {}
    for spec in desc.layers:
        layer = build_layer(spec, [shapes[name] for name in spec.inputs], precision)
        k = stream_of(spec.name)
        if desc.shared_streams and k:
            layer.share(by_name['s0/' + spec.name.partition('/')[2]])
        else:
            layer.init(rng)
        layers.append(layer)
        by_name[spec.name] = layer
    graph = Graph(desc, layers, precision)
    graph.assert_decoupled()
    log.info(
        "graph compiled", graph=desc.name, inputs=len(desc.inputs), nodes=len(layers),
        params=graph.param_count(), precision=precision,
    )
    return graph


def _check_labels(labels, probs):
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != probs.shape[0]:
        raise LabelError(f"expected {probs.shape[0]} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise LabelError("labels must be integer class indices")
    bad = (labels < 0) | (labels >= probs.shape[1])
    if bad.any():
        raise LabelError(f"label {int(labels[bad][0])} outside [0, {probs.shape[1]})")
    return labels.astype(np.intp)


def cross_entropy(probabilities, labels) -> float:
    """Mean of -log p[label] with p floored at 1e-12."""
    probs = np.asarray(probabilities)
    labels = _check_labels(labels, probs)
    picked = probs[np.arange(probs.shape[0]), labels]
    return float(-np.log(np.maximum(picked, PROBABILITY_FLOOR)).mean())


def _check_grads(params):
    for param in params:
        if not np.all(np.isfinite(param.grad)):
            raise NonFiniteError(f"non-finite gradient for {param.name}; step aborted", node=param.node)


def sgd_step(graph, lr, momentum=0.0):
    """v <- momentum*v + g; w <- w - lr*v. Running statistics are not trainable and stay put."""
    params = graph.trainable_parameters()
    _check_grads(params)
    for param in params:
        velocity = param.state.get('velocity')
        if velocity is None:
            velocity = param.state['velocity'] = np.zeros_like(param.value)
        velocity *= momentum
        velocity += param.grad
        param.value -= lr * velocity


def adam_step(graph, lr, beta1=0.9, beta2=0.999, epsilon=1e-7):
    params = graph.trainable_parameters()
    _check_grads(params)
    for param in params:
        state = param.state
        if 'm' not in state:
            state['m'] = np.zeros_like(param.value)
            state['v'] = np.zeros_like(param.value)
            state['t'] = 0
        state['t'] += 1
        t = state['t']
        state['m'] = beta1 * state['m'] + (1 - beta1) * param.grad
        state['v'] = beta2 * state['v'] + (1 - beta2) * param.grad ** 2
        m_hat = state['m'] / (1 - beta1 ** t)
        v_hat = state['v'] / (1 - beta2 ** t)
        param.value -= (lr * m_hat / (np.sqrt(v_hat) + epsilon)).astype(param.value.dtype)


OPTIMIZERS = {'sgd': sgd_step, 'adam': adam_step}


def relative_error(analytic, numeric) -> float:
    """|a - n| / max(|a|, |n|, 1e-8)."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


# rounding error of one loss evaluation, in units of machine epsilon times the loss
LOSS_NOISE_ULPS = 1e3


def grad_check(graph, inputs, labels, step=1e-4, samples=100, seed=0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Up to ``samples`` entries are drawn per layer kind. An entry whose
    difference quotient changes between ``step`` and ``step / 2`` sits on a
    kink (ReLU zero, pooling tie) and is skipped; elsewhere the two quotients
    are combined by Richardson extrapolation. Entries whose analytic and
    numeric gradients both lie below what a difference of two losses can
    resolve are flat and not compared. Raises GraphStateError when no entry
    is compared. Running batch-norm statistics are restored afterwards.
    """
    if graph.dtype != np.float64:
        raise GraphStateError("grad_check needs a float64 graph")
    frozen = [(param, param.value.copy()) for param in graph.parameters() if not param.trainable]

    def loss():
        return cross_entropy(graph.forward(inputs, training=True), labels)

    graph.forward(inputs, training=True)
    base_loss = cross_entropy(graph.activation(graph.output), labels)
    graph.backward(labels)
    analytic = {id(param): param.grad.copy() for param in graph.trainable_parameters()}
    resolution = LOSS_NOISE_ULPS * np.finfo(np.float64).eps * max(1.0, base_loss) / step

    by_kind = {}
    for layer in graph.layers:
        for param in layer.params:
            if param.trainable:
                pool = by_kind.setdefault(layer.spec.kind, {})
                pool.setdefault(id(param), param)

    rng = np.random.default_rng(seed)
    worst = 0.0
    checked = skipped = flat = 0
    for kind, pool in by_kind.items():
        entries = [(param, i) for param in pool.values() for i in range(param.value.size)]
        picks = rng.choice(len(entries), size=min(samples, len(entries)), replace=False)
        for pick in picks:
            param, i = entries[pick]
            flat_value = param.value.reshape(-1)
            original = flat_value[i]
            quotients = []
            for h in (step, step / 2):
                flat_value[i] = original + h
                plus = loss()
                flat_value[i] = original - h
                minus = loss()
                flat_value[i] = original
                quotients.append((plus - minus) / (2 * h))
            numeric, half = quotients
            if abs(numeric - half) > 1e-4 * max(abs(numeric), abs(half)) + 2 * resolution:
                skipped += 1
                continue
            extrapolated = (4 * half - numeric) / 3
            exact = analytic[id(param)].reshape(-1)[i]
            if max(abs(exact), abs(extrapolated)) <= resolution:
                flat += 1
                continue
            worst = max(worst, relative_error(exact, extrapolated))
            checked += 1

    for param, value in frozen:
        param.value[...] = value
    log.info("gradient check", graph=graph.name, checked=checked, kinks=skipped, flat=flat, max_rel_error=worst)
    if not checked:
        raise GraphStateError(f"gradient check compared no entries ({skipped} kinks, {flat} flat)")
    return worst
