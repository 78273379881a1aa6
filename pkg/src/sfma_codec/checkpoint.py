"""Versioned weight-group persistence on top of np.savez.

A checkpoint holds named groups (base_codec, prior, adapters.<point>,
mask_generator, task_model), each with its tensors, a JSON config blob
and a sha256 content checksum.  Loading reconstructs live objects
through the public constructors, validates every shape against the
freshly initialized layout, verifies checksums, and returns everything
frozen (requires_grad off).
"""

import hashlib
import json
from dataclasses import asdict

import numpy as np

from .adapters import SfmaConfig, init_adapter
from .autodiff import Var
from .codec import CodecConfig, CodecWeights, init_codec
from .entropy import FactorizedPrior
from .errors import ConfigError, DataError
from .scalable import MaskGenerator
from .tasks import TaskModel

FORMAT_VERSION = 1


def group_checksum(tensors):
    """sha256 over sorted (name, bytes); matches the containers' method."""
    h = hashlib.sha256()
    for name in sorted(tensors):
        arr = tensors[name]
        h.update(name.encode())
        h.update(np.ascontiguousarray(
            getattr(arr, "data", arr)).tobytes())
    return h.hexdigest()


def save_checkpoint(path, groups, configs=None):
    """groups: {group: {tensor: array-or-Var}}; configs: {group: dict}."""
    configs = configs or {}
    payload = {"v": np.array(FORMAT_VERSION)}
    for gname, tensors in groups.items():
        if "/" in gname:
            raise ConfigError(f"group name may not contain '/': {gname!r}")
        plain = {k: np.ascontiguousarray(getattr(v, "data", v))
                 for k, v in tensors.items()}
        for tname, arr in plain.items():
            payload[f"g/{gname}/{tname}"] = arr
        payload[f"h/{gname}"] = np.array(group_checksum(plain))
        if gname in configs:
            payload[f"c/{gname}"] = np.array(json.dumps(
                configs[gname], sort_keys=True))
    np.savez(path, **payload)
    return path


def load_checkpoint(path):
    """Read, checksum-verify and return {group: (tensors, config)}."""
    try:
        with np.load(path, allow_pickle=False) as npz:
            raw = {k: npz[k] for k in npz.files}
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if "v" not in raw:
        raise DataError("not a checkpoint: missing version entry")
    version = int(raw.pop("v"))
    if version != FORMAT_VERSION:
        raise ConfigError(
            f"unsupported checkpoint version {version}, "
            f"expected {FORMAT_VERSION}")
    groups = {}
    sums = {}
    configs = {}
    for key, arr in raw.items():
        kind, _, rest = key.partition("/")
        if kind == "g":
            gname, _, tname = rest.partition("/")
            groups.setdefault(gname, {})[tname] = arr
        elif kind == "h":
            sums[rest] = str(arr)
        elif kind == "c":
            configs[rest] = json.loads(str(arr))
        else:
            raise DataError(f"unknown checkpoint entry {key!r}")
    for gname, tensors in groups.items():
        if gname not in sums:
            raise DataError(f"group {gname!r} has no checksum")
        if group_checksum(tensors) != sums[gname]:
            raise DataError(f"checksum mismatch in group {gname!r}")
    return {g: (groups[g], configs.get(g)) for g in groups}


def _fill(template_tensors, loaded, gname):
    if set(template_tensors) != set(loaded):
        missing = set(template_tensors) ^ set(loaded)
        raise DataError(
            f"group {gname!r} tensor names do not match layout: {sorted(missing)}")
    for name, var in template_tensors.items():
        arr = loaded[name]
        if var.data.shape != arr.shape:
            raise DataError(
                f"{gname}/{name}: shape {arr.shape} does not match "
                f"expected {var.data.shape}")
        var.data = arr.astype(np.float64, copy=True)
        var.requires_grad = False


def save_state(path, codec=None, prior=None, adapters=None,
               mask_generator=None, task_model=None):
    """Persist any subset of the model state under canonical group names."""
    groups = {}
    configs = {}
    if codec is not None:
        groups["base_codec"] = dict(codec.tensors)
        configs["base_codec"] = dict(asdict(codec.config),
                                     frozen_capable=True)
    if prior is not None:
        groups["prior"] = dict(prior.params())
        configs["prior"] = {"channels": int(prior.channels)}
    if adapters is not None:
        for point, w in adapters.items():
            groups[f"adapters.{point}"] = dict(w.tensors)
            configs[f"adapters.{point}"] = asdict(w.config)
    if mask_generator is not None:
        groups["mask_generator"] = dict(mask_generator.tensors)
        configs["mask_generator"] = {
            "m_channels": mask_generator.m_channels,
            "hidden": mask_generator.hidden,
            "temperature": mask_generator.temperature,
        }
    if task_model is not None:
        groups["task_model"] = dict(task_model.tensors)
        configs["task_model"] = {
            "channels": list(task_model.channels),
            "num_classes": task_model.num_classes,
        }
    if not groups:
        raise ConfigError("nothing to save")
    return save_checkpoint(path, groups, configs)


def load_state(path):
    """Rebuild live objects from a checkpoint; everything comes back frozen.

    Returns a dict with any of: base_codec, prior, adapters (dict by
    point), mask_generator, task_model.
    """
    entries = load_checkpoint(path)
    out = {}
    for gname, (tensors, config) in sorted(entries.items()):
        if config is None:
            raise DataError(f"group {gname!r} has no config")
        if gname == "base_codec":
            cfg = {k: v for k, v in config.items() if k != "frozen_capable"}
            codec = init_codec(CodecConfig(**cfg), seed=0)
            _fill(codec.tensors, tensors, gname)
            out["base_codec"] = codec.set_trainable(False)
        elif gname == "prior":
            prior = FactorizedPrior(config["channels"])
            _fill(dict(prior.params()), tensors, gname)
            prior.set_trainable(False)
            out["prior"] = prior
        elif gname.startswith("adapters."):
            w = init_adapter(SfmaConfig(**config), seed=0)
            _fill(w.tensors, tensors, gname)
            out.setdefault("adapters", {})[
                gname.split(".", 1)[1]] = w.set_trainable(False)
        elif gname == "mask_generator":
            gen = MaskGenerator(config["m_channels"], config["hidden"],
                                config["temperature"], seed=0)
            _fill(gen.tensors, tensors, gname)
            out["mask_generator"] = gen.set_trainable(False)
        elif gname == "task_model":
            model = TaskModel(tuple(config["channels"]),
                              config["num_classes"], seed=0)
            _fill(model.tensors, tensors, gname)
            out["task_model"] = model.set_trainable(False)
        else:
            raise DataError(f"unknown group {gname!r}")
    return out
