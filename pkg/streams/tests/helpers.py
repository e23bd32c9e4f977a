"""Small descriptions and data shared by the test modules."""
import numpy as np

from streams import zoo
from streams.datasets import LabeledImageSet
from streams.zoo import ArchDescription, LayerSpec


def toy_desc(layers, input_shape=(7, 7, 3), classes=3, name='toy'):
    return ArchDescription(
        name=name, family='toy', input_shape=input_shape, classes=classes, layers=tuple(layers),
    )


def conv_toy(input_shape=(7, 7, 3), classes=3):
    """conv (stride 2) -> batch-norm -> relu -> max-pool -> dense -> softmax."""
    return toy_desc([
        LayerSpec('conv', 'conv2d', ('input',), filters=4, kernel=3, stride=2),
        LayerSpec('bn', 'batch-norm', ('conv',)),
        LayerSpec('relu', 'relu', ('bn',)),
        LayerSpec('pool', 'max-pool', ('relu',), kernel=2, stride=2, padding='same'),
        LayerSpec('flatten', 'flatten', ('pool',)),
        LayerSpec('logits', 'dense', ('flatten',), filters=classes),
        LayerSpec('softmax', 'softmax', ('logits',)),
    ], input_shape=input_shape, classes=classes)


def residual_toy(input_shape=(7, 7, 3), classes=3):
    """conv -> depthwise -> bn, added back to the conv, then capped relu, avg-pool and global pooling."""
    return toy_desc([
        LayerSpec('conv', 'conv2d', ('input',), filters=4, kernel=3),
        LayerSpec('dw', 'depthwise-conv2d', ('conv',), kernel=3, bias=False),
        LayerSpec('dw_bn', 'batch-norm', ('dw',)),
        LayerSpec('add', 'residual-add', ('conv', 'dw_bn')),
        LayerSpec('relu6', 'relu', ('add',), cap=6.0),
        LayerSpec('avg', 'avg-pool', ('relu6',), kernel=3, stride=2),
        LayerSpec('gap', 'global-avg-pool', ('avg',)),
        LayerSpec('logits', 'dense', ('gap',), filters=classes),
        LayerSpec('softmax', 'softmax', ('logits',)),
    ], input_shape=input_shape, classes=classes)


def dense_toy(features=6, classes=3):
    return toy_desc([
        LayerSpec('flatten', 'flatten', ('input',)),
        LayerSpec('hidden', 'dense', ('flatten',), filters=features),
        LayerSpec('logits', 'dense', ('hidden',), filters=classes),
        LayerSpec('softmax', 'softmax', ('logits',)),
    ], input_shape=(2, 2, 3), classes=classes)


def tiny_minivgg(input_shape=(32, 32, 3), classes=10):
    return zoo.minivgg_desc(filters=(2, 2), input_shape=input_shape, classes=classes, hidden=8)


def batch(desc, n=4, seed=0):
    rng = np.random.default_rng(seed)
    inputs = [rng.normal(size=(n,) + tuple(desc.input_shape)) for _ in desc.inputs]
    labels = rng.integers(0, desc.classes, size=n)
    return inputs, labels


def tiny_set(n=20, classes=10, seed=0, first_id=0):
    rng = np.random.default_rng(seed)
    return LabeledImageSet(
        images=rng.integers(0, 256, size=(n, 32, 32, 3), dtype=np.uint8),
        labels=np.arange(n, dtype=np.int64) % classes,
        ids=np.arange(first_id, first_id + n, dtype=np.int64),
        num_classes=classes,
    )
