"""Typed INI experiment configs with ``section.key=value`` overrides."""

import configparser
import hashlib
import math

from .errors import ConfigError


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text):
    t = text.strip().lower()
    return None if t in ("", "auto", "none") else int(t)


def _opt_float(text):
    t = text.strip().lower()
    return None if t in ("", "none") else float(t)


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _strs(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _schedule(text):
    pairs = []
    for item in _strs(text):
        step, lr = item.split(":")
        pairs.append((int(step), float(lr)))
    return tuple(pairs)


# (section, key) -> (parser, default text)
SCHEMA = {
    ("experiment", "seed"): (int, "0"),
    ("experiment", "plot"): (_bool, "true"),

    ("data", "kind"): (str, "teacher_student"),
    ("data", "d0"): (int, "20"),
    ("data", "teacher_width"): (int, "1000"),
    ("data", "n_classes"): (int, "10"),
    ("data", "separation"): (float, "2.0"),
    ("data", "n_train"): (int, "2000"),
    ("data", "n_test"): (int, "2000"),
    ("data", "noise"): (float, "0.0"),
    ("data", "seed"): (_opt_int, "auto"),
    ("data", "train_path"): (str, ""),
    ("data", "test_path"): (str, ""),
    ("data", "task"): (str, "classification"),
    ("data", "header"): (_bool, "true"),
    ("data", "normalize"): (_bool, "false"),

    ("model", "kind"): (str, "linear"),
    ("model", "width"): (int, "50"),
    ("model", "hidden"): (_ints, "64"),
    ("model", "init_std"): (_opt_float, "none"),

    ("train", "lr"): (float, "0.5"),
    ("train", "lr_schedule"): (_schedule, ""),
    ("train", "epochs"): (int, "10"),
    ("train", "batch_size"): (int, "100"),
    ("train", "scheme"): (str, "plain"),
    ("train", "log_interval"): (int, "1"),
    ("train", "log_dispersion"): (_bool, "true"),
    ("train", "full_step_stats"): (_bool, "true"),
    ("train", "track_psi"): (_bool, "false"),
    ("train", "checkpoint_every"): (int, "0"),
    ("train", "stop_loss"): (_opt_float, "none"),

    ("clip", "alpha"): (float, "0.1"),
    ("clip", "start_step"): (_opt_int, "auto"),
    ("clip", "g_init"): (float, "inf"),

    ("gmp", "rho"): (float, "0.5"),
    ("gmp", "sigma"): (float, "0.03"),
    ("gmp", "k"): (int, "3"),
    ("gmp", "abs_variant"): (_bool, "false"),
    ("gmp", "relative_sigma"): (_bool, "false"),

    ("estimators", "sigma"): (_floats, "1e-6"),
    ("estimators", "k_psi"): (int, "20"),
    ("estimators", "probes"): (int, "256"),
    ("estimators", "hvp_eps"): (float, "1e-4"),
    ("estimators", "gamma_samples"): (int, "200"),
    ("estimators", "beta"): (_opt_float, "none"),
    ("estimators", "reference"): (str, "train"),
    ("estimators", "variants"): (_strs, "log_form, optimal_closed_form, norm_based"),

    ("bound", "trace"): (str, ""),

    ("sweep", "lrs"): (_floats, "0.1, 0.5"),
    ("sweep", "batch_sizes"): (_ints, "50, 100"),
    ("sweep", "stop_loss"): (float, "1e-4"),
    ("sweep", "max_epochs"): (int, "50"),
}

CHOICES = {
    ("data", "kind"): ("teacher_student", "gaussian_mixture", "csv"),
    ("data", "task"): ("regression", "classification"),
    ("model", "kind"): ("linear", "relu", "mlp"),
    ("train", "scheme"): ("plain", "clip", "gmp"),
    ("estimators", "reference"): ("train", "test"),
}


class Config:
    """Resolved experiment configuration.

    Raw text is kept next to the parsed values; the canonical text (every key,
    sorted) is what gets hashed and copied into output directories.
    """

    def __init__(self, raw=None):
        self.raw = {k: default for k, (_, default) in SCHEMA.items()}
        self.values = {}
        for key, text in (raw or {}).items():
            self.set(key, text)
        self._resolve()

    def set(self, key, text):
        if isinstance(key, str):
            if "." not in key:
                raise ConfigError(f"override {key!r} must look like section.key")
            key = tuple(key.split(".", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {'.'.join(key)}")
        self.raw[key] = str(text).strip()

    def _resolve(self):
        for key, (parse, _) in SCHEMA.items():
            try:
                value = parse(self.raw[key])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {'.'.join(key)}: {self.raw[key]!r} ({exc})") from None
            if key in CHOICES and value not in CHOICES[key]:
                raise ConfigError(f"{'.'.join(key)} must be one of {CHOICES[key]}, got {value!r}")
            self.values[key] = value

    def override(self, assignments):
        for item in assignments:
            if "=" not in item:
                raise ConfigError(f"override {item!r} must look like section.key=value")
            key, text = item.split("=", 1)
            self.set(key.strip(), text)
        self._resolve()
        return self

    def __getitem__(self, key):
        if isinstance(key, str):
            key = tuple(key.split(".", 1))
        return self.values[key]

    def section(self, name):
        return {k: v for (s, k), v in self.values.items() if s == name}

    def canonical(self):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for (s, k) in sorted(SCHEMA):
            if s not in cp:
                cp[s] = {}
            cp[s][k] = self.raw[(s, k)]
        lines = []
        for s in cp.sections():
            lines.append(f"[{s}]")
            lines.extend(f"{k} = {v}" for k, v in cp[s].items())
            lines.append("")
        return "\n".join(lines)

    def digest(self):
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()[:16]

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.canonical())

    def validate(self):
        """Semantic checks that must pass before any output is written."""
        c = self
        if c["data.kind"] != "csv":
            for key in ("data.d0", "data.n_train", "data.n_test"):
                if c[key] < 1:
                    raise ConfigError(f"{key} must be >= 1, got {c[key]}")
            if c["data.kind"] == "teacher_student" and c["data.teacher_width"] < 1:
                raise ConfigError("data.teacher_width must be >= 1")
            if c["data.kind"] == "gaussian_mixture" and c["data.n_classes"] < 2:
                raise ConfigError("data.n_classes must be >= 2")
        elif not c["data.train_path"]:
            raise ConfigError("data.train_path is required for csv datasets")
        if not 0.0 <= c["data.noise"] <= 1.0:
            raise ConfigError("data.noise must lie in [0, 1]")
        if c["train.batch_size"] < 1 or c["train.epochs"] < 1:
            raise ConfigError("train.batch_size and train.epochs must be positive")
        if not c["train.lr"] > 0:
            raise ConfigError("train.lr must be positive")
        if any(not s > 0 or not math.isfinite(s) for s in c["estimators.sigma"]):
            raise ConfigError("estimators.sigma values must be positive")
        return self


def load_config(path=None, overrides=()):
    raw = {}
    if path:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        for section in cp.sections():
            for key, value in cp[section].items():
                raw[(section, key)] = value
    cfg = Config(raw)
    return cfg.override(overrides)
