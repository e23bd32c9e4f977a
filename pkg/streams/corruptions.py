"""Procedural image corruptions on the 0-255 scale, with seeded noise and a shipped severity table.

Every kind is a function of a float image and its strength parameter; the
severity table maps severities 1..5 (and a null strength used as severity
0) to those parameters. ``apply`` always hands back a clipped uint8 image.
"""
from dataclasses import dataclass, replace

import numpy as np
import structlog
from PIL import Image
from scipy import ndimage
from skimage import color

from .exceptions import CorruptionError

log = structlog.get_logger(__name__)

SEVERITIES = (1, 2, 3, 4, 5)

# severity 0 applies the null strength, so a suite row at 0 reproduces the clean accuracy
IDENTITY_SEVERITY = 0

MOTION_ANGLE = 45.0
ELASTIC_SIGMA = 4.0
ZOOM_STEP = 0.01


@dataclass(frozen=True)
class Ladder:
    params: tuple
    values: tuple
    null: object
    increasing: bool = True
    stochastic: bool = False

    def value(self, severity):
        if severity == 0:
            return self.null
        return self.values[severity - 1]

    def strength(self, severity):
        """The first parameter, the one the ordering is declared on."""
        value = self.value(severity)
        return value[0] if isinstance(value, tuple) else value


SEVERITY_TABLE = {
    'gaussian-noise': Ladder(('sigma',), (8, 13, 18, 26, 38), 0, stochastic=True),
    'shot-noise': Ladder(('photons',), (500, 250, 100, 75, 50), None, increasing=False, stochastic=True),
    'impulse-noise': Ladder(('fraction',), (0.01, 0.02, 0.03, 0.05, 0.07), 0.0, stochastic=True),
    'speckle-noise': Ladder(('scale',), (0.06, 0.1, 0.12, 0.16, 0.2), 0.0, stochastic=True),
    'random-zero': Ladder(('fraction',), (0.05, 0.1, 0.2, 0.3, 0.5), 0.0, stochastic=True),
    'brightness': Ladder(('value_shift',), (0.05, 0.1, 0.15, 0.2, 0.3), 0.0),
    'contrast': Ladder(('factor',), (0.75, 0.5, 0.4, 0.3, 0.15), 1.0, increasing=False),
    'saturate': Ladder(('factor',), (1.5, 2.0, 3.0, 5.0, 10.0), 1.0),
    'gaussian-blur': Ladder(('sigma',), (0.4, 0.6, 0.7, 0.8, 1.0), 0.0),
    'defocus-blur': Ladder(
        ('radius', 'alias_blur'), ((0.3, 0.4), (0.4, 0.5), (0.5, 0.6), (1.0, 0.2), (1.5, 0.1)), (0.0, 0.0),
    ),
    'motion-blur': Ladder(('length',), (3, 5, 7, 9, 11), 1),
    'zoom-blur': Ladder(('max_zoom',), (1.05, 1.10, 1.15, 1.20, 1.25), 1.0),
    'pixelate': Ladder(('factor',), (1.05, 1.1, 1.2, 1.35, 1.55), 1.0),
    'elastic-transform': Ladder(('alpha',), (0.5, 1.0, 1.5, 2.0, 2.5), 0.0, stochastic=True),
}

KINDS = tuple(SEVERITY_TABLE)

# Kinds a full corrupted benchmark carries that need assets or codecs.
EXCLUDED_KINDS = ('fog', 'frost', 'snow', 'spatter', 'glass-blur', 'jpeg-compression')


@dataclass(frozen=True)
class Corruption:
    kind: str
    severity: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SEVERITY_TABLE:
            raise CorruptionError(f"unknown corruption {self.kind!r}; valid kinds: {', '.join(KINDS)}")
        if self.severity != IDENTITY_SEVERITY and self.severity not in SEVERITIES:
            raise CorruptionError(f"severity must be 0..5, got {self.severity}")

    @property
    def stochastic(self):
        return SEVERITY_TABLE[self.kind].stochastic

    @property
    def parameter(self):
        return SEVERITY_TABLE[self.kind].value(self.severity)

    @property
    def tag(self):
        return f"{self.kind}:{self.severity}:{self.seed}"


def _gaussian_noise(x, sigma, rng):
    return x + rng.normal(0.0, sigma, size=x.shape)


def _shot_noise(x, photons, rng):
    if photons is None:
        return x
    return rng.poisson(x / 255.0 * photons) / photons * 255.0


def _impulse_noise(x, fraction, rng):
    # one draw per pixel position; a hit pixel goes fully white or fully black
    hit = (rng.random(x.shape[:2]) < fraction)[..., None]
    salt = (rng.random(x.shape[:2]) < 0.5)[..., None]
    return np.where(hit, np.where(salt, 255.0, 0.0), x)


def _speckle_noise(x, scale, rng):
    return x + x * rng.normal(0.0, scale, size=x.shape)


def _random_zero(x, fraction, rng):
    keep = rng.random(x.shape[:2]) >= fraction
    return x * keep[..., None]


def _in_hsv(x, edit):
    hsv = color.rgb2hsv(x / 255.0)
    edit(hsv)
    return color.hsv2rgb(np.clip(hsv, 0, 1)) * 255.0


def _brightness(x, shift, rng):
    def edit(hsv):
        hsv[..., 2] += shift
    return _in_hsv(x, edit)


def _saturate(x, factor, rng):
    def edit(hsv):
        hsv[..., 1] *= factor
    return _in_hsv(x, edit)


def _contrast(x, factor, rng):
    means = x.mean(axis=(0, 1), keepdims=True)
    return (x - means) * factor + means


def _gaussian_blur(x, sigma, rng):
    if sigma == 0:
        return x
    return ndimage.gaussian_filter(x, sigma=(sigma, sigma, 0), truncate=3.0, mode='reflect')


def _filter_channels(x, kernel):
    return np.stack([ndimage.convolve(x[..., c], kernel, mode='reflect') for c in range(x.shape[-1])], axis=-1)


def disk_kernel(radius, alias_blur):
    half = int(np.ceil(radius)) + 1
    grid = np.arange(-half, half + 1)
    xx, yy = np.meshgrid(grid, grid)
    kernel = (xx ** 2 + yy ** 2 <= radius ** 2).astype(np.float64)
    kernel /= kernel.sum()
    if alias_blur:
        kernel = ndimage.gaussian_filter(kernel, alias_blur, mode='constant')
        kernel /= kernel.sum()
    return kernel


def _defocus_blur(x, params, rng):
    radius, alias_blur = params
    if radius == 0 and alias_blur == 0:
        return x
    return _filter_channels(x, disk_kernel(radius, alias_blur))


def motion_kernel(length, angle=MOTION_ANGLE):
    """A normalized line of ``length`` taps through the kernel centre at ``angle`` degrees."""
    size = length if length % 2 else length + 1
    kernel = np.zeros((size, size))
    centre = size // 2
    theta = np.deg2rad(angle)
    for t in np.linspace(-(length - 1) / 2, (length - 1) / 2, length):
        row = centre - int(np.round(t * np.sin(theta)))
        col = centre + int(np.round(t * np.cos(theta)))
        kernel[row, col] = 1.0
    return kernel / kernel.sum()


def _motion_blur(x, length, rng):
    if length <= 1:
        return x
    return _filter_channels(x, motion_kernel(length))


def _clipped_zoom(x, factor):
    h, w = x.shape[:2]
    cy, cx = (h - 1) / 2, (w - 1) / 2
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing='ij')
    coords = [cy + (rows - cy) / factor, cx + (cols - cx) / factor]
    return np.stack(
        [ndimage.map_coordinates(x[..., c], coords, order=1, mode='nearest') for c in range(x.shape[-1])],
        axis=-1,
    )


def zoom_factors(max_zoom):
    steps = int(np.round((max_zoom - 1.0) / ZOOM_STEP))
    return [1.0 + ZOOM_STEP * i for i in range(1, steps + 1)]


def _zoom_blur(x, max_zoom, rng):
    factors = zoom_factors(max_zoom)
    if not factors:
        return x
    total = x.copy()
    for factor in factors:
        total += _clipped_zoom(x, factor)
    return total / (len(factors) + 1)


def _pixelate(x, factor, rng):
    h, w = x.shape[:2]
    small = (max(1, int(np.round(w / factor))), max(1, int(np.round(h / factor))))
    if small == (w, h):
        return x
    img = Image.fromarray(np.clip(np.round(x), 0, 255).astype(np.uint8))
    img = img.resize(small, Image.BOX).resize((w, h), Image.NEAREST)
    return np.asarray(img, dtype=np.float64)


def _elastic_transform(x, alpha, rng):
    if alpha == 0:
        return x
    h, w = x.shape[:2]
    field = []
    for _ in range(2):
        d = ndimage.gaussian_filter(rng.uniform(-1, 1, size=(h, w)), ELASTIC_SIGMA, mode='constant')
        peak = np.abs(d).max()
        field.append(d / peak * alpha if peak > 0 else d)
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing='ij')
    coords = [rows + field[0], cols + field[1]]
    return np.stack(
        [ndimage.map_coordinates(x[..., c], coords, order=1, mode='reflect') for c in range(x.shape[-1])],
        axis=-1,
    )


_TRANSFORMS = {
    'gaussian-noise': _gaussian_noise,
    'shot-noise': _shot_noise,
    'impulse-noise': _impulse_noise,
    'speckle-noise': _speckle_noise,
    'random-zero': _random_zero,
    'brightness': _brightness,
    'contrast': _contrast,
    'saturate': _saturate,
    'gaussian-blur': _gaussian_blur,
    'defocus-blur': _defocus_blur,
    'motion-blur': _motion_blur,
    'zoom-blur': _zoom_blur,
    'pixelate': _pixelate,
    'elastic-transform': _elastic_transform,
}


def _as_float_image(image):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[-1] != 3:
        raise CorruptionError(f"expected an HxWx3 image, got shape {image.shape}")
    if image.size and (image.min() < 0 or image.max() > 255):
        raise CorruptionError("pixel values must lie in [0, 255]")
    return image.astype(np.float64)


def _to_uint8(x):
    return np.clip(np.round(x), 0, 255).astype(np.uint8)


def transform(image, kind, parameter, seed=0):
    """Apply ``kind`` at an explicit strength parameter (severity tables bypassed)."""
    if kind not in _TRANSFORMS:
        raise CorruptionError(f"unknown corruption {kind!r}; valid kinds: {', '.join(KINDS)}")
    rng = np.random.default_rng(seed)
    return _to_uint8(_TRANSFORMS[kind](_as_float_image(image), parameter, rng))


def apply(image, corruption) -> np.ndarray:
    return transform(image, corruption.kind, corruption.parameter, corruption.seed)


def null_strength(kind):
    """Severity-0 parameter: the strength at which ``kind`` is (nearly) the identity."""
    try:
        return SEVERITY_TABLE[kind].null
    except KeyError:
        raise CorruptionError(f"unknown corruption {kind!r}") from None


def random_zero(image, p, seed=0):
    """Zero whole pixels (all channels) independently with probability ``p``."""
    if not 0 <= p <= 1:
        raise CorruptionError(f"p must lie in [0, 1], got {p}")
    return transform(image, 'random-zero', p, seed)


_SEED_MASK = (1 << 64) - 1


def image_seed(seed, image_id):
    return (int(seed) ^ int(image_id)) & _SEED_MASK


def corrupt_set(data, corruption):
    """Corrupt every image with seed ``corruption.seed XOR image id``; labels and ids are kept."""
    if len(data) == 0:
        return data.take([], provenance=corruption.tag)
    images = np.stack([
        apply(img, replace(corruption, seed=image_seed(corruption.seed, image_id)))
        for img, image_id in zip(data.images, data.ids)
    ])
    out = replace(data, images=images, provenance=corruption.tag)
    log.debug("set corrupted", corruption=corruption.tag, n=len(out))
    return out


def severity_table_rows():
    """(kind, severity, parameter, value) for every severity of every kind."""
    rows = []
    for kind, ladder in SEVERITY_TABLE.items():
        for severity in SEVERITIES:
            value = ladder.value(severity)
            values = value if isinstance(value, tuple) else (value,)
            for name, v in zip(ladder.params, values):
                rows.append((kind, severity, name, v))
    return rows
