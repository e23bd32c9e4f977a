"""Run manifests: the command, its flags, seeds and artifacts, written beside every output."""
import json
import platform
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import structlog
from django.core.serializers.json import DjangoJSONEncoder
from django.utils import timezone

from . import __version__
from .exceptions import ProtocolError

log = structlog.get_logger(__name__)

MANIFEST_NAME = 'manifest.json'

# the keys that decide which images a synthetic or subsampled split holds
DATA_KEYS = ('source', 'train_size', 'test_size', 'seed')


class ManifestEncoder(DjangoJSONEncoder):
    """DjangoJSONEncoder plus paths, tuples of numpy scalars and fractions."""

    def default(self, o):
        if isinstance(o, Path):
            return str(o)
        if isinstance(o, np.generic):
            return o.item()
        if hasattr(o, 'numerator') and hasattr(o, 'denominator'):
            return str(o)
        return super().default(o)


@dataclass
class RunManifest:
    command: str
    flags: dict
    seeds: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    tool_version: str = __version__
    python: str = field(default_factory=lambda: sys.version.split()[0])
    numpy: str = np.__version__
    platform: str = field(default_factory=platform.platform)
    started: object = field(default_factory=timezone.now)
    wall_clock_seconds: float = 0.0

    def add(self, path):
        self.artifacts.append(str(path))
        return path

    def finish(self, out_dir):
        """Stamp the elapsed time and write ``manifest.json`` into ``out_dir``."""
        self.wall_clock_seconds = round((timezone.now() - self.started).total_seconds(), 3)
        path = Path(out_dir) / MANIFEST_NAME
        path.write_text(json.dumps(asdict(self), cls=ManifestEncoder, indent=2, sort_keys=True) + '\n')
        log.info("manifest written", command=self.command, path=str(path), artifacts=len(self.artifacts))
        return path


def load_manifest(path):
    return json.loads(Path(path).read_text())


def data_params(values):
    return {key: values[key] for key in DATA_KEYS}


def check_training_data(checkpoint_path, values):
    """Raise ProtocolError when ``values`` would rebuild a different split than the checkpoint's training run.

    The training manifest is looked up beside the checkpoint; a checkpoint
    without one is accepted with a warning.
    """
    path = Path(checkpoint_path).parent / MANIFEST_NAME
    if not path.exists():
        log.warning("no manifest beside checkpoint, data split unchecked", checkpoint=str(checkpoint_path))
        return
    recorded = load_manifest(path).get('data') or {}
    wanted = data_params(values)
    mismatched = [key for key in DATA_KEYS if key in recorded and recorded[key] != wanted[key]]
    if mismatched:
        details = ', '.join(f"{key}={wanted[key]!r} (trained with {recorded[key]!r})" for key in mismatched)
        raise ProtocolError(f"evaluation data differs from the training run: {details}")
