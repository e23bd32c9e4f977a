from pathlib import Path

from django import forms
from django.conf import settings
from django.core.exceptions import ValidationError

from .corruptions import IDENTITY_SEVERITY, KINDS, SEVERITIES
from .exceptions import ArchError, NameFormatError
from .graph import OPTIMIZERS, PRECISIONS
from .harness import PROTOCOLS, STREAM_INPUTS, TrainConfig
from .slicer import MODES
from .zoo import resolve_model

SOURCES = ('synth', 'cifar10')


def _choices(values):
    return [(v, v) for v in values]


def parse_config_file(path):
    """``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file {path} does not exist")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition('=')
        if not sep or not key.strip():
            raise ValidationError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        values[key.strip().replace('-', '_')] = value.strip()
    return values


def parse_overrides(items):
    values = {}
    for item in items or ():
        key, sep, value = item.partition('=')
        if not sep or not key.strip():
            raise ValidationError(f"--set expects key=value, got {item!r}")
        values[key.strip().replace('-', '_')] = value.strip()
    return values


def merged_config(path=None, overrides=None, flags=None) -> dict:
    """Settings defaults < config file < command-line flags < ``--set`` overrides."""
    values = {}
    if path:
        values.update(parse_config_file(path))
    values.update({key: value for key, value in (flags or {}).items() if value is not None})
    values.update(parse_overrides(overrides))
    return values


def _split_list(raw):
    if isinstance(raw, (list, tuple)):
        return [str(v).strip() for v in raw if str(v).strip()]
    return [part.strip() for part in str(raw or '').split(',') if part.strip()]


class _ConfigForm(forms.Form):
    """Unknown keys are errors; missing keys fall back to STNET_DEFAULTS or the field initial."""

    def __init__(self, values):
        data = {}
        for name, field in self.base_fields.items():
            default = settings.STNET_DEFAULTS.get(name, field.initial)
            if default is not None:
                data[name] = default
        for name, value in values.items():
            field = self.base_fields.get(name)
            if isinstance(field, forms.BooleanField) and str(value).strip().lower() in ('0', 'no', 'off', 'false', ''):
                value = False
            data[name] = value
        self._unknown = sorted(set(values) - set(self.base_fields))
        super().__init__(data)

    def clean(self):
        cleaned = super().clean()
        if self._unknown:
            raise ValidationError(f"unknown configuration keys: {', '.join(self._unknown)}")
        return cleaned

    def _clean_kinds(self, name):
        kinds = _split_list(self.cleaned_data.get(name))
        bad = [k for k in kinds if k not in KINDS]
        if bad:
            raise ValidationError(f"unknown corruption kinds {bad}; valid kinds: {', '.join(KINDS)}")
        return tuple(kinds)

    def error_text(self):
        parts = []
        for field, errors in self.errors.items():
            label = 'config' if field == '__all__' else field
            parts.extend(f"{label}: {error}" for error in errors)
        return '; '.join(parts)


class TrainConfigForm(_ConfigForm):
    model = forms.CharField(initial='MiniVGG')
    source = forms.ChoiceField(choices=_choices(SOURCES), initial='synth')
    train_size = forms.IntegerField(min_value=1, initial=2000)
    protocol = forms.ChoiceField(choices=_choices(PROTOCOLS), initial='no-aug')
    epochs = forms.IntegerField(min_value=1)
    batch_size = forms.IntegerField(min_value=1)
    lr = forms.FloatField(min_value=0)
    momentum = forms.FloatField(min_value=0, max_value=1)
    optimizer = forms.ChoiceField(choices=_choices(OPTIMIZERS))
    seed = forms.IntegerField(min_value=0)
    precision = forms.ChoiceField(choices=_choices(PRECISIONS))
    slice_mode = forms.ChoiceField(choices=_choices(MODES))
    stream_inputs = forms.ChoiceField(choices=_choices(STREAM_INPUTS))
    share_weights = forms.BooleanField(required=False, initial=False)
    augment_kinds = forms.CharField(required=False, initial='')
    augment_severity = forms.IntegerField(min_value=min(SEVERITIES), max_value=max(SEVERITIES), initial=3)
    test_size = forms.IntegerField(min_value=1, initial=1000)
    split_seed = forms.IntegerField(min_value=0)
    split_fraction = forms.FloatField()
    suite_seed = forms.IntegerField(min_value=0)

    def clean_model(self):
        text = self.cleaned_data.get('model', '').strip()
        try:
            resolve_model(text)
        except (ArchError, NameFormatError) as exc:
            raise ValidationError(f"{exc}; expected a base name or STNet{{streams}}_{{scale}}_{{base}}")
        return text

    def clean_split_fraction(self):
        fraction = self.cleaned_data.get('split_fraction')
        if fraction is not None and not 0 < fraction < 1:
            raise ValidationError("split_fraction must lie strictly between 0 and 1")
        return fraction

    def clean_augment_kinds(self):
        return self._clean_kinds('augment_kinds')

    def clean(self):
        cleaned = super().clean()
        if cleaned.get('protocol') == 'aug' and not cleaned.get('augment_kinds'):
            raise ValidationError("the aug protocol needs augment_kinds")
        return cleaned

    def to_config(self):
        known = TrainConfig.__dataclass_fields__
        return TrainConfig(**{key: value for key, value in self.cleaned_data.items() if key in known})


class SuiteConfigForm(_ConfigForm):
    source = forms.ChoiceField(choices=_choices(SOURCES), initial='synth')
    train_size = forms.IntegerField(min_value=1, initial=2000)
    test_size = forms.IntegerField(min_value=1, initial=1000)
    seed = forms.IntegerField(min_value=0)
    kinds = forms.CharField(required=False, initial=','.join(KINDS))
    severities = forms.CharField(initial='3')
    suite_seed = forms.IntegerField(min_value=0)
    slice_mode = forms.ChoiceField(choices=_choices(MODES))
    stream_inputs = forms.ChoiceField(choices=_choices(STREAM_INPUTS))
    split_seed = forms.IntegerField(min_value=0)
    split_fraction = forms.FloatField()
    protocol = forms.ChoiceField(choices=_choices(PROTOCOLS), initial='no-aug')

    def clean_kinds(self):
        return self._clean_kinds('kinds')

    def clean_split_fraction(self):
        fraction = self.cleaned_data.get('split_fraction')
        if fraction is not None and not 0 < fraction < 1:
            raise ValidationError("split_fraction must lie strictly between 0 and 1")
        return fraction

    def clean_severities(self):
        try:
            severities = tuple(int(s) for s in _split_list(self.cleaned_data.get('severities')))
        except ValueError:
            raise ValidationError("severities must be integers")
        allowed = (IDENTITY_SEVERITY,) + SEVERITIES
        if not severities or any(s not in allowed for s in severities):
            raise ValidationError("severities must be a nonempty list drawn from 0..5")
        return severities
