"""INI run configuration with a strict schema.

Every key every command may read is declared here with a type and a
default; unknown sections or keys are rejected before any compute, so
typos fail fast instead of silently running with defaults.
"""

import configparser
import hashlib

from .adapters import SfmaConfig, VARIANTS
from .codec import CodecConfig, PlacementConfig
from .errors import ConfigError

_MODES = ("human", "machine", "scalable")


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s):
    return tuple(int(p) for p in str(s).split(",") if p.strip() != "")


def _floats(s):
    return tuple(float(p) for p in str(s).split(",") if p.strip() != "")


def _strs(s):
    return tuple(p.strip() for p in str(s).split(",") if p.strip() != "")


# section -> key -> (parser, default)
SCHEMA = {
    "codec": {
        "n_channels": (int, 64),
        "m_channels": (int, 64),
    },
    "placement": {
        "encoder_stages": (_ints, (1, 2, 3)),
        "decoder_stages": (_ints, (1, 2, 3)),
        "hyper_encoder": (_bool, False),
        "hyper_decoder": (_bool, False),
    },
    "adapter": {
        "variant": (str, "SFMA_PARALLEL"),
        "middle_dim": (int, 4),
        "form": (str, "listing"),
        "fma_kernel": (int, 3),
        "sma_kernel": (int, 5),
    },
    "data": {
        "train_size": (int, 96),
        "eval_size": (int, 24),
        "image_size": (int, 64),
        "dataset_seed": (int, 100),
    },
    "train": {
        "lambda_grid": (_floats, (1.8, 3.5, 6.7, 13.0)),
        "base_lambda_mse": (_floats, (30.0, 100.0, 300.0, 1000.0)),
        "epochs": (int, 5),
        "batch_size": (int, 8),
        "base_lr": (float, 1e-4),
        "schedule": (str, "multistep"),
        "milestones": (_ints, (2, 4)),
        "decay": (float, 0.5),
        "base_epochs": (int, 30),
        "base_batch_size": (int, 8),
        "base_pretrain_lr": (float, 1e-3),
        "task_epochs": (int, 12),
        "task_lr": (float, 1e-2),
        "mask_hidden": (int, 16),
        "temperature": (float, 1.0),
    },
    "ablate": {
        "middle_dims": (_ints, (1, 32, 64)),
        "variants": (_strs, ("SFMA_PARALLEL",)),
        "seeds": (_ints, (0, 1, 2)),
        "epochs": (int, 2),
    },
    "eval": {
        "quality": (str, "accuracy"),
    },
    "run": {
        "mode": (str, "machine"),
        "seed": (int, 0),
        "out_dir": (str, "runs/out"),
    },
}


class RunConfig:
    """Typed view over the parsed INI; attributes are section_key."""

    def __init__(self, values, text):
        for (section, key), v in values.items():
            setattr(self, f"{section}_{key}", v)
        self.text = text
        if self.run_mode not in _MODES:
            raise ConfigError(f"run.mode must be one of {_MODES}, "
                              f"got {self.run_mode!r}")
        if self.train_schedule not in ("multistep", "constant"):
            raise ConfigError(
                f"unknown train.schedule {self.train_schedule!r}")
        if len(self.train_lambda_grid) != len(self.train_base_lambda_mse):
            raise ConfigError(
                "train.lambda_grid and train.base_lambda_mse must pair up "
                f"({len(self.train_lambda_grid)} vs "
                f"{len(self.train_base_lambda_mse)})")
        for v in self.ablate_variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r} in ablate.variants")
        if self.eval_quality not in ("accuracy", "psnr"):
            raise ConfigError(
                f"eval.quality must be accuracy or psnr, "
                f"got {self.eval_quality!r}")
        self.codec_config().validate()
        points = self.placement().validate().adapter_points(
            self.codec_config())
        if points:
            self.sfma_config(min(points.values())).validate()

    def config_hash(self):
        return hashlib.sha256(self.text.encode()).hexdigest()

    def codec_config(self):
        return CodecConfig(self.codec_n_channels, self.codec_m_channels)

    def placement(self):
        return PlacementConfig(
            encoder_stages=self.placement_encoder_stages,
            decoder_stages=self.placement_decoder_stages,
            hyper_encoder=self.placement_hyper_encoder,
            hyper_decoder=self.placement_hyper_decoder)

    def sfma_config(self, in_dim, middle_dim=None):
        return SfmaConfig(
            in_dim=in_dim,
            middle_dim=self.adapter_middle_dim
            if middle_dim is None else middle_dim,
            variant=self.adapter_variant,
            fma_kernel=self.adapter_fma_kernel,
            sma_kernel=self.adapter_sma_kernel,
            form=self.adapter_form)


def parse_config(path=None, text=None):
    """Load and schema-check an INI file (or literal text)."""
    if (path is None) == (text is None):
        raise ConfigError("pass exactly one of path or text")
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(
                    f"unknown key {key!r} in section [{section}]")
            fn, _ = SCHEMA[section][key]
            raw = parser[section][key]
            try:
                values[(section, key)] = fn(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(
                    f"bad value for {section}.{key}: {raw!r} "
                    f"({exc})") from exc
    for section, keys in SCHEMA.items():
        for key, (_, default) in keys.items():
            values.setdefault((section, key), default)
    return RunConfig(values, text)


def default_config():
    return parse_config(text="")
