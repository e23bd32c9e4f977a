"""Training, corruption-suite evaluation, augmentation boost and the scale-factor search."""
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
import structlog
from django.conf import settings

from . import analyzer, zoo
from .corruptions import KINDS, Corruption, corrupt_set
from .datasets import LabeledImageSet, augmentation_split, load_cifar10, subset, synth_shapes
from .exceptions import DatasetError, ProtocolError
from .graph import OPTIMIZERS, compile_graph, cross_entropy
from .slicer import make_spec, slice_batch

log = structlog.get_logger(__name__)

PROTOCOLS = ('no-aug', 'aug')
STREAM_INPUTS = ('slices', 'replicate')
CRITERIA = ('ge', 'gt')

DESK_KINDS = ('gaussian-noise', 'impulse-noise', 'defocus-blur', 'contrast', 'pixelate')
DESK_SEVERITY = 3
DESK_SEEDS = (0, 1, 2)
DESK_TRAIN_SIZE = 2000
DESK_TEST_SIZE = 1000
CLEAN_GAP_LIMIT = Fraction(5, 100)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    optimizer: str = 'sgd'
    seed: int = 0
    precision: str = 'float32'
    slices: int = 1
    slice_mode: str = 'pixel-luminance'
    stream_inputs: str = 'slices'
    augment_kinds: tuple = ()
    augment_severity: int = DESK_SEVERITY
    split_seed: int = 0
    split_fraction: float = 0.5
    suite_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ProtocolError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ProtocolError("batch_size must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ProtocolError(f"unknown optimizer {self.optimizer!r}")
        if self.stream_inputs not in STREAM_INPUTS:
            raise ProtocolError(f"stream_inputs must be one of {STREAM_INPUTS}")

    @classmethod
    def from_settings(cls, **overrides):
        defaults = settings.STNET_DEFAULTS
        known = {f for f in cls.__dataclass_fields__}
        values = {key: value for key, value in defaults.items() if key in known}
        values.update(overrides)
        return cls(**values)

    @property
    def slice_spec(self):
        return make_spec(self.slices, self.slice_mode)

    def for_graph(self, graph):
        """This config with its slice count matched to the graph's entry points."""
        return replace(self, slices=len(graph.inputs))


def check_arity(graph, slice_spec, stream_inputs='slices'):
    if stream_inputs == 'slices' and slice_spec.num_slices != len(graph.inputs):
        raise ProtocolError(
            f"{graph.name} has {len(graph.inputs)} entry points but the slice spec makes {slice_spec.num_slices} slices"
        )


def graph_inputs(graph, images, slice_spec, stream_inputs='slices'):
    """Per-entry float inputs in [0, 1]: slice k feeds stream k, or every stream sees the whole image."""
    if stream_inputs == 'replicate':
        x = images.astype(graph.dtype) / 255.0
        return [x] * len(graph.inputs)
    check_arity(graph, slice_spec, stream_inputs)
    return [s.astype(graph.dtype) / 255.0 for s in slice_batch(images, slice_spec)]


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    steps: int
    loss: float
    train_accuracy: Fraction


def train(graph, data, config) -> tuple:
    """Fit ``graph`` on ``data``; returns the graph and one EpochRecord per epoch."""
    if len(data) == 0:
        raise DatasetError("cannot train on an empty set")
    slice_spec = config.slice_spec
    check_arity(graph, slice_spec, config.stream_inputs)
    step = OPTIMIZERS[config.optimizer]
    step_args = {'lr': config.lr}
    if config.optimizer == 'sgd':
        step_args['momentum'] = config.momentum
    rng = np.random.default_rng(config.seed)
    history = []
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(data))
        total_loss = 0.0
        correct = steps = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            labels = data.labels[batch]
            probs = graph.forward(graph_inputs(graph, data.images[batch], slice_spec, config.stream_inputs), training=True)
            total_loss += cross_entropy(probs, labels) * len(batch)
            correct += int((probs.argmax(axis=1) == labels).sum())
            graph.backward(labels)
            step(graph, **step_args)
            steps += 1
        record = EpochRecord(epoch, steps, total_loss / len(data), Fraction(correct, len(data)))
        history.append(record)
        log.info(
            "epoch finished", graph=graph.name, epoch=epoch, loss=round(record.loss, 6),
            train_accuracy=float(record.train_accuracy), seconds=round(time.perf_counter() - started, 3),
        )
    return graph, history


def predict(model, images, slice_spec, stream_inputs='slices', batch_size=256):
    """Predicted class per image, in inference mode."""
    out = []
    for start in range(0, len(images), batch_size):
        chunk = images[start:start + batch_size]
        probs = model.forward(graph_inputs(model, chunk, slice_spec, stream_inputs), training=False)
        out.append(probs.argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.intp)


def _count_correct(model, data, slice_spec, stream_inputs):
    if len(data) == 0:
        raise DatasetError("cannot evaluate on an empty set")
    return int((predict(model, data.images, slice_spec, stream_inputs) == data.labels).sum())


def evaluate(model, data, slice_spec, stream_inputs='slices') -> Fraction:
    """Fraction of ``data`` whose argmax prediction matches its label."""
    return Fraction(_count_correct(model, data, slice_spec, stream_inputs), len(data))


@dataclass(frozen=True)
class EvalRow:
    kind: str
    severity: object
    accuracy: Fraction
    n: object = None

    @property
    def key(self):
        return (self.kind, self.severity)


@dataclass(frozen=True)
class EvalReport:
    model: str
    protocol: str
    clean: object = None
    clean_n: object = None
    rows: tuple = field(default_factory=tuple)

    def row(self, kind, severity=None):
        for r in self.rows:
            if r.key == (kind, severity):
                return r
        raise KeyError((kind, severity))

    @property
    def mean_accuracy(self):
        """Unweighted over kinds; severities of one kind are averaged first."""
        if not self.rows:
            return self.clean
        by_kind = {}
        for r in self.rows:
            by_kind.setdefault(r.kind, []).append(r.accuracy)
        per_kind = [sum(values, Fraction(0)) / len(values) for values in by_kind.values()]
        return sum(per_kind, Fraction(0)) / len(per_kind)


def corruption_seed(suite_seed, kind, severity):
    """Seed for one suite row, derived from the suite seed, the kind's table position and the severity."""
    sequence = np.random.SeedSequence([int(suite_seed), KINDS.index(kind), int(severity)])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def eval_corruption_suite(model, clean_test, kinds, severities, slice_spec, suite_seed=0,
                          stream_inputs='slices', model_name=None, protocol='no-aug'):
    """One row per (kind, severity) plus the clean accuracy."""
    clean = evaluate(model, clean_test, slice_spec, stream_inputs)
    rows = []
    for kind in kinds:
        for severity in severities:
            corruption = Corruption(kind, severity, corruption_seed(suite_seed, kind, severity))
            accuracy = evaluate(model, corrupt_set(clean_test, corruption), slice_spec, stream_inputs)
            rows.append(EvalRow(kind, severity, accuracy, len(clean_test)))
            log.info("suite row evaluated", model=model_name or model.name, kind=kind, severity=severity,
                     accuracy=float(accuracy))
    return EvalReport(model_name or model.name, protocol, clean, len(clean_test), tuple(rows))


@dataclass(frozen=True)
class BoostRow:
    model: str
    kind: str
    severity: object
    boost: Fraction


def augmentation_boost(aug, noaug) -> list:
    """accuracy_aug - accuracy_noaug for every shared row."""
    if aug.model != noaug.model:
        raise ProtocolError(f"reports cover different models: {aug.model} vs {noaug.model}")
    aug_keys = [r.key for r in aug.rows]
    noaug_keys = [r.key for r in noaug.rows]
    if sorted(aug_keys, key=str) != sorted(noaug_keys, key=str):
        missing = set(aug_keys) ^ set(noaug_keys)
        raise ProtocolError(f"report rows do not match: {sorted(missing, key=str)}")
    return [
        BoostRow(aug.model, r.kind, r.severity, r.accuracy - noaug.row(r.kind, r.severity).accuracy)
        for r in aug.rows
    ]


def _meets(score, target, criterion):
    return score > target if criterion == 'gt' else score >= target


def scale_search(base, scales, evaluate_candidate, num_streams=5, criterion='ge',
                 convention=analyzer.DEFAULT_CONVENTION):
    """First STNet along the descending ``scales`` ladder that is cheaper than ``base`` and scores no worse.

    ``evaluate_candidate(desc)`` trains and scores one description (mean suite
    accuracy). Candidates that are not FLOPs-cheaper than the base are never
    evaluated; the base itself is evaluated once, on the first admissible
    candidate. Returns the chosen StnetName or None.
    """
    scales = list(scales)
    if not scales or any(s < 1 for s in scales):
        raise ProtocolError("scales must be a nonempty list of factors >= 1")
    if criterion not in CRITERIA:
        raise ProtocolError(f"criterion must be one of {CRITERIA}")
    base_name = zoo.display_base(base)
    base_flops = analyzer.count_flops(base, convention)
    base_score = None
    for scale in scales:
        name = zoo.StnetName(num_streams, float(scale), base_name)
        candidate = zoo.stnet_desc(base, num_streams, scale)
        flops = analyzer.count_flops(candidate, convention)
        if flops >= base_flops:
            log.info("candidate inadmissible", candidate=str(name), flops=flops, base_flops=base_flops)
            continue
        if base_score is None:
            base_score = evaluate_candidate(base)
        score = evaluate_candidate(candidate)
        if _meets(score, base_score, criterion):
            log.info("candidate accepted", candidate=str(name), score=float(score), base_score=float(base_score))
            return name
        log.info("candidate rejected", candidate=str(name), score=float(score), base_score=float(base_score))
    log.info("scale ladder exhausted", base=base.name, scales=scales)
    return None


def suite_evaluator(train_data, test_data, config, kinds, severities):
    """An ``evaluate_candidate`` for scale_search: train from scratch, return the mean suite accuracy."""
    def evaluate_candidate(desc):
        graph = compile_graph(desc, precision=config.precision, seed=config.seed)
        run_config = config.for_graph(graph)
        train(graph, train_data, run_config)
        report = eval_corruption_suite(
            graph, test_data, kinds, severities, run_config.slice_spec, run_config.suite_seed,
            run_config.stream_inputs,
        )
        return report.mean_accuracy
    return evaluate_candidate


@dataclass(frozen=True)
class AugmentationPart:
    kind: str
    severity: int
    to_train: LabeledImageSet
    to_test: LabeledImageSet


def augmentation_parts(test_data, kinds, severities, suite_seed=0, split_seed=0, fraction=0.5):
    """Corrupt the test set per (kind, severity) and split each copy with the same split seed.

    The shared split seed sends every source image to the same side for every
    corruption, so no ``to_test`` image has a corrupted twin in training.
    """
    parts = []
    for kind in kinds:
        for severity in severities:
            corruption = Corruption(kind, severity, corruption_seed(suite_seed, kind, severity))
            to_train, to_test = augmentation_split(corrupt_set(test_data, corruption), fraction, split_seed)
            parts.append(AugmentationPart(kind, severity, to_train, to_test))
    return parts


def augmented_training_set(train_data, parts):
    training = LabeledImageSet.concat([train_data] + [p.to_train for p in parts], provenance='clean+augmented')
    assert_no_leakage(training, [p.to_test for p in parts])
    return training


def assert_no_leakage(training, tests):
    """Raise ProtocolError if any test image id also occurs in the training stream."""
    seen = set(training.ids.tolist())
    for test in tests:
        leaked = seen.intersection(test.ids.tolist())
        if leaked:
            raise ProtocolError(f"{len(leaked)} test images of {test.provenance} also feed training")


def eval_held_out(model, test_data, parts, slice_spec, stream_inputs='slices', model_name=None):
    """Aug-protocol report: each kind on its held-out half, clean accuracy on the same source images."""
    rows = tuple(
        EvalRow(p.kind, p.severity, evaluate(model, p.to_test, slice_spec, stream_inputs), len(p.to_test))
        for p in parts
    )
    clean_part = test_data
    if parts:
        clean_part = test_data.take(np.flatnonzero(np.isin(test_data.ids, parts[0].to_test.ids)))
    clean = evaluate(model, clean_part, slice_spec, stream_inputs)
    return EvalReport(model_name or model.name, 'aug', clean, len(clean_part), rows)


def run_protocol(desc, train_data, test_data, kinds, severities, config, protocol='no-aug'):
    """Train ``desc`` under one protocol and evaluate it; returns (report, graph)."""
    if protocol not in PROTOCOLS:
        raise ProtocolError(f"protocol must be one of {PROTOCOLS}")
    graph = compile_graph(desc, precision=config.precision, seed=config.seed)
    config = config.for_graph(graph)
    spec = config.slice_spec
    if protocol == 'no-aug':
        assert_no_leakage(train_data, [test_data])
        train(graph, train_data, config)
        report = eval_corruption_suite(graph, test_data, kinds, severities, spec, config.suite_seed,
                                       config.stream_inputs, model_name=desc.name)
        return report, graph

    parts = augmentation_parts(test_data, kinds, severities, config.suite_seed, config.split_seed,
                               config.split_fraction)
    train(graph, augmented_training_set(train_data, parts), config)
    return eval_held_out(graph, test_data, parts, spec, config.stream_inputs, model_name=desc.name), graph


def load_sources(source, data_dir=None, train_size=DESK_TRAIN_SIZE, test_size=DESK_TEST_SIZE, seed=0, classes=10):
    """(train, test) from CIFAR-10 files or the synthetic shapes set, cut to the requested sizes."""
    if source == 'cifar10':
        train_data, test_data = load_cifar10(data_dir or settings.STNET_DATA_DIR)
        if train_size and train_size < len(train_data):
            train_data = subset(train_data, train_size, seed)
        if test_size and test_size < len(test_data):
            test_data = subset(test_data, test_size, seed)
        return train_data, test_data
    if source == 'synth':
        both = synth_shapes(train_size + test_size, classes=classes, seed=seed)
        train_data = both.take(np.arange(train_size))
        test_data = both.take(np.arange(train_size, train_size + test_size))
        return train_data, test_data
    raise DatasetError(f"unknown data source {source!r} (cifar10 or synth)")


@dataclass(frozen=True)
class DeskRun:
    seed: int
    base: EvalReport
    stnet: EvalReport

    @property
    def stnet_not_worse(self):
        return self.stnet.mean_accuracy >= self.base.mean_accuracy

    @property
    def clean_gap(self):
        return abs(self.stnet.clean - self.base.clean)


@dataclass(frozen=True)
class DeskResult:
    runs: tuple

    @property
    def wins(self):
        return sum(run.stnet_not_worse for run in self.runs)

    @property
    def trend_holds(self):
        """The STNet matches or beats the base in a majority of seeds while clean accuracy stays close."""
        majority = len(self.runs) // 2 + 1
        return self.wins >= majority and all(run.clean_gap < CLEAN_GAP_LIMIT for run in self.runs)


def run_desk_experiment(train_data, test_data, config, seeds=DESK_SEEDS, kinds=DESK_KINDS,
                        severity=DESK_SEVERITY, num_streams=3, scale=3):
    """MiniVGG against STNet{n}_{scale}_MiniVGG, clean-trained, per seed; a failed trend is reported, not raised."""
    base = zoo.minivgg_desc(input_shape=train_data.images.shape[1:], classes=train_data.num_classes)
    stnet = zoo.stnet_desc(base, num_streams, scale)
    runs = []
    for seed in seeds:
        seeded = replace(config, seed=seed, suite_seed=seed)
        base_report, _ = run_protocol(base, train_data, test_data, kinds, (severity,), seeded)
        stnet_report, _ = run_protocol(stnet, train_data, test_data, kinds, (severity,), seeded)
        runs.append(DeskRun(seed, base_report, stnet_report))
    result = DeskResult(tuple(runs))
    if result.trend_holds:
        log.info("desk experiment finished", wins=result.wins, seeds=len(runs), trend='holds')
    else:
        log.warning("desk experiment deviates from the expected trend", wins=result.wins, seeds=len(runs))
    return result
