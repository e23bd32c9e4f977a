from pathlib import Path

from django.conf import settings
from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from streams.exceptions import StnetError
from streams.manifest import RunManifest


def validation_text(exc):
    return '; '.join(exc.messages)


class StnetCommand(BaseCommand):
    """Runs ``run(**options)`` and turns toolkit and validation errors into CommandError."""

    # Subclasses name the directory under STNET_RUNS_DIR used when --out is omitted.
    default_out = None

    def handle(self, *args, **options):
        try:
            return self.run(**options)
        except StnetError as exc:
            raise CommandError(str(exc)) from exc
        except ValidationError as exc:
            raise CommandError(validation_text(exc)) from exc

    def run(self, **options):
        raise NotImplementedError

    def out_dir(self, options):
        out = options.get('out') or Path(settings.STNET_RUNS_DIR) / self.default_out
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        return out

    def manifest(self, options, seeds=None):
        flags = {
            key: value for key, value in options.items()
            if key not in ('stdout', 'stderr', 'skip_checks', 'no_color', 'force_color', 'traceback', 'settings', 'pythonpath')
        }
        return RunManifest(command=self.name, flags=flags, seeds=seeds or {})

    @property
    def name(self):
        return self.__class__.__module__.rsplit('.', 1)[-1]

    def config_form(self, form_class, options, flags):
        from streams.forms import merged_config

        form = form_class(merged_config(options.get('config'), options.get('set'), flags))
        if not form.is_valid():
            raise CommandError(form.error_text())
        return form.cleaned_data, form
