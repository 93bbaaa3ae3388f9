"""Flat ``key = value`` experiment configuration.

Blank lines and ``#`` comments are ignored.  Unknown keys, duplicate keys
and malformed values are rejected with the offending line number.  Keys
prefixed ``b.`` are overrides for the second arm of a comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["ConfigError", "Config", "parse_config", "load_config", "KEYS", "REQUIRED"]


class ConfigError(ValueError):
    pass


def _ints(s):
    return tuple(int(x) for x in s.split(",") if x.strip())


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _choice(*options):
    def parse(s):
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s
    return parse


def _seed(s):
    v = int(s, 0)
    if not 0 <= v < 1 << 64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return v


# key -> (parser, default); a default of None with the key in REQUIRED means mandatory
KEYS = {
    "scene": (_choice("constant", "textured-box", "rotating-texture-4d", "shifted-grating"), None),
    "N": (int, None),
    "T": (int, 1),
    "mode": (_choice("dynamic", "static"), "dynamic"),
    "app_ranks": (_ints, (4, 4, 4)),
    "den_ranks": (_ints, (2, 2, 2)),
    "app_dim": (int, 8),
    "out_dim": (int, 8),
    "basis": (_choice("dtcwt", "dwt"), "dtcwt"),
    "wavelet": (str, ""),
    "level": (int, 1),
    "width": (int, 32),
    "height": (int, 32),
    "train_views": (int, 8),
    "test_views": (int, 2),
    "frames": (int, 0),
    "steps": (int, 2000),
    "batch": (int, 1024),
    "samples": (int, 64),
    "lr_plane": (float, 0.02),
    "lr_net": (float, 0.001),
    "lr_decay": (float, 0.1),
    "lambda_photo": (float, 1.0),
    "lambda_reg": (float, 1e-5),
    "lambda_reg_t": (float, 2e-5),
    "lambda_m": (float, 1e-11),
    "upsample_steps": (_ints, ()),
    "upsample_N": (_ints, ()),
    "emptiness_steps": (_ints, ()),
    "emptiness_res": (int, 32),
    "tau": (float, 1e-4),
    "clip_norm": (float, 10.0),
    "density_shift": (float, -3.0),
    "distance_scale": (float, 25.0),
    "use_masks": (_bool, True),
    "mask_mode": (_choice("ste", "soft"), "ste"),
    "quantize": (_bool, False),
    "chunk": (int, 256),
    "workers": (int, 0),
    "seed": (_seed, 0),
    "out": (str, "out"),
    "image": (str, ""),
    "archive": (str, ""),
}
REQUIRED = {
    "fit": ("scene", "N"),
    "compare": ("scene", "N"),
    "transform": ("image",),
    "inspect": ("archive",),
}


@dataclass
class Config:
    values: dict
    overrides: dict
    explicit: set

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def with_overrides(self):
        """The config of the second comparison arm."""
        vals = dict(self.values)
        vals.update(self.overrides)
        return Config(vals, {}, self.explicit | set(self.overrides))

    def dump(self):
        """Effective config text; parsing it back yields the same values."""
        lines = [f"{k} = {_fmt(self.values[k])}" for k in KEYS]
        lines += [f"b.{k} = {_fmt(v)}" for k, v in self.overrides.items()]
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config(text, command="fit"):
    values, overrides, seen = {}, {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        target = values
        name = key
        if key.startswith("b."):
            name = key[2:]
            target = overrides
        if name not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} (first set on line {seen[key]})")
        seen[key] = lineno
        try:
            target[name] = KEYS[name][0](val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    for key in REQUIRED.get(command, ()):
        if key not in values:
            raise ConfigError(f"missing required key {key!r}")
    explicit = set(values)
    for k, (_, default) in KEYS.items():
        values.setdefault(k, default)
    return Config(values, overrides, explicit)


def load_config(path, command="fit"):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, command)
