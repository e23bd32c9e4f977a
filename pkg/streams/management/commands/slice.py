import numpy as np

from streams.datasets import load_image
from streams.slicer import MODES, make_spec, slice_image

from ._base import CommandError, StnetCommand


def planar_bytes(image):
    """HxWx3 uint8 as channel-planar bytes (R plane, G plane, B plane)."""
    return np.ascontiguousarray(image.transpose(2, 0, 1)).tobytes()


class Command(StnetCommand):
    help = 'Split an image into intensity slices written as raw planar uint8 files.'
    default_out = 'slices'

    def add_arguments(self, parser):
        parser.add_argument('--input', required=True, help='image file (any format Pillow reads)')
        parser.add_argument('--n', type=int, default=3, help='number of slices')
        parser.add_argument('--mode', choices=MODES, default='pixel-luminance')
        parser.add_argument('--out', help='output directory')
        parser.add_argument('--check-partition', action='store_true',
                            help='fail unless the slices sum back to the input')

    def run(self, **options):
        image = load_image(options['input'])
        spec = make_spec(options['n'], options['mode'])
        slices = slice_image(image, spec)
        out = self.out_dir(options)
        manifest = self.manifest(options)
        height, width = image.shape[:2]
        for k, piece in enumerate(slices):
            path = out / f'slice_{k}.raw'
            path.write_bytes(planar_bytes(piece))
            manifest.add(path)
            nonzero = int(np.count_nonzero(piece.any(axis=-1)))
            self.stdout.write(f'{path}\t{width}x{height}x3\tnonzero_pixels={nonzero}')
        if options['check_partition']:
            total = np.sum([s.astype(np.int64) for s in slices], axis=0)
            if not np.array_equal(total, image):
                raise CommandError('partition check failed: slices do not sum to the input')
            self.stdout.write('partition ok')
        manifest.finish(out)
