"""Batch command-line surface.

Verbs: pretrain-base, train-adapters, compress, decompress, eval-rd,
analyze-latent, ablate.  Every command reads one INI config, runs
deterministically under the configured seed, writes its artifacts under
the output directory, and drops a machine-readable manifest describing
inputs, config hash, and outputs.  Exit codes: 0 success, 2 config
error, 3 data error, 4 numeric failure.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import analysis
from . import compress as cp
from .adapters import adapter_stack
from .bitstream import parse as parse_stream
from .checkpoint import load_state, save_state
from .codec import PlacementConfig, init_codec
from .config import default_config, parse_config
from .data import make_dataset
from .entropy import FactorizedPrior
from .errors import ConfigError, DataError, NumericError
from .experiments import (
    StudyConfig,
    adapter_param_count,
    evaluate_point,
    run_study,
)
from .scalable import MaskGenerator
from .tasks import pretrain_task_model
from .training import (
    TrainConfig,
    train_adapters,
    train_scalable_adapters,
)


def _load_cfg(args):
    cfg = (parse_config(path=args.config) if args.config
           else default_config())
    if args.seed is not None:
        cfg.run_seed = args.seed
    if args.out is not None:
        cfg.run_out_dir = args.out
    if getattr(args, "mode", None) is not None:
        if args.mode not in ("human", "machine", "scalable"):
            raise ConfigError(f"unknown mode {args.mode!r}")
        cfg.run_mode = args.mode
    return cfg


def _out_dir(cfg):
    os.makedirs(cfg.run_out_dir, exist_ok=True)
    return cfg.run_out_dir


def _manifest(cfg, verb, inputs, outputs, extra=None):
    man = {"command": verb,
           "config_hash": cfg.config_hash(),
           "seed": cfg.run_seed,
           "mode": cfg.run_mode,
           "inputs": [str(p) for p in inputs],
           "outputs": sorted(str(p) for p in outputs)}
    if extra:
        man.update(extra)
    path = os.path.join(cfg.run_out_dir,
                        f"manifest_{verb.replace('-', '_')}.json")
    with open(path, "w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _base_path(cfg, i):
    return os.path.join(cfg.run_out_dir, f"base_q{i}.npz")


def _adapter_path(cfg, i):
    return os.path.join(cfg.run_out_dir, f"adapters_l{i}.npz")


def _load_base(path):
    st = load_state(path)
    if "base_codec" not in st or "prior" not in st:
        raise DataError(f"{path} is not a base checkpoint "
                        "(needs base_codec + prior groups)")
    return st["base_codec"], st["prior"]


def _scalable_placement(cfg):
    # encoder path runs without adapters in scalable mode
    return PlacementConfig(encoder_stages=(),
                           decoder_stages=cfg.placement_decoder_stages)


def _eval_images(cfg):
    return make_dataset(cfg.data_eval_size, cfg.data_dataset_seed + 1,
                        cfg.data_image_size)


def cmd_pretrain_base(args):
    cfg = _load_cfg(args)
    out = _out_dir(cfg)
    inputs = [args.config] if args.config else []
    outputs = []

    if args.import_checkpoint:
        codec, prior = _load_base(args.import_checkpoint)
        path = _base_path(cfg, 0)
        save_state(path, codec=codec, prior=prior)
        outputs.append(path)
        _manifest(cfg, "pretrain-base", inputs + [args.import_checkpoint],
                  outputs, {"imported": True})
        return 0

    from .training import pretrain_base
    train_x, _ = make_dataset(cfg.data_train_size, cfg.data_dataset_seed,
                              cfg.data_image_size)
    eval_x, _ = _eval_images(cfg)
    psnrs = {}
    for i, lam_mse in enumerate(cfg.train_base_lambda_mse):
        codec = init_codec(cfg.codec_config(), seed=cfg.run_seed + i)
        prior = FactorizedPrior(cfg.codec_n_channels)
        log = os.path.join(out, f"base_q{i}_metrics.csv")
        pretrain_base(train_x, codec, prior, lam_mse,
                      epochs=cfg.train_base_epochs,
                      batch_size=cfg.train_base_batch_size,
                      lr=cfg.train_base_pretrain_lr,
                      seed=cfg.run_seed + i, log_path=log)
        path = _base_path(cfg, i)
        save_state(path, codec=codec, prior=prior)
        r = evaluate_point(eval_x, codec, prior, mode=cp.MODE_HUMAN)
        psnrs[f"base_q{i}"] = {"lam_mse": lam_mse, "psnr": r["psnr"],
                               "bpp": r["bpp"]}
        outputs += [path, log]
    _manifest(cfg, "pretrain-base", inputs, outputs, {"eval": psnrs})
    return 0


def _get_task_model(cfg, train_x, train_y, outputs):
    path = os.path.join(cfg.run_out_dir, "task_model.npz")
    if os.path.exists(path):
        return load_state(path)["task_model"]
    model = pretrain_task_model(train_x, train_y,
                                epochs=cfg.train_task_epochs,
                                lr=cfg.train_task_lr, seed=cfg.run_seed)
    save_state(path, task_model=model)
    outputs.append(path)
    return model


def cmd_train_adapters(args):
    cfg = _load_cfg(args)
    out = _out_dir(cfg)
    if cfg.run_mode == "human":
        raise ConfigError("adapters are trained in machine or scalable "
                          "mode, not human")
    inputs = [args.config] if args.config else []
    outputs = []
    train_x, train_y = make_dataset(cfg.data_train_size,
                                    cfg.data_dataset_seed,
                                    cfg.data_image_size)
    model = _get_task_model(cfg, train_x, train_y, outputs)

    scalable = cfg.run_mode == "scalable"
    placement = _scalable_placement(cfg) if scalable else cfg.placement()
    points = placement.adapter_points(cfg.codec_config())
    base_checksums = {}
    for i, lam in enumerate(cfg.train_lambda_grid):
        base = _base_path(cfg, i)
        if not os.path.exists(base):
            raise DataError(f"missing base checkpoint {base}; "
                            "run pretrain-base first")
        codec, prior = _load_base(base)
        inputs.append(base)
        stack = adapter_stack(points,
                              cfg.sfma_config(max(points.values())),
                              cfg.run_seed + 10 * i)
        tcfg = TrainConfig(lam=lam, batch_size=cfg.train_batch_size,
                           epochs=cfg.train_epochs,
                           base_lr=cfg.train_base_lr,
                           schedule=cfg.train_schedule,
                           milestones=cfg.train_milestones,
                           decay=cfg.train_decay,
                           crop_size=cfg.data_image_size,
                           seed=cfg.run_seed + 10 * i)
        log = os.path.join(out, f"adapters_l{i}_metrics.csv")
        if scalable:
            gen = MaskGenerator(cfg.codec_m_channels, cfg.train_mask_hidden,
                                cfg.train_temperature,
                                seed=cfg.run_seed + 10 * i)
            train_scalable_adapters(train_x, codec, prior, gen, stack,
                                    model, tcfg, placement, log_path=log)
            path = _adapter_path(cfg, i)
            save_state(path, adapters=stack, mask_generator=gen)
        else:
            train_adapters(train_x, codec, stack, prior, model, tcfg,
                           placement, log_path=log)
            path = _adapter_path(cfg, i)
            save_state(path, adapters=stack)
        base_checksums[f"lambda_{i}"] = codec.checksum()
        outputs += [path, log]
    _manifest(cfg, "train-adapters", inputs, outputs,
              {"lambda_grid": list(cfg.train_lambda_grid),
               "base_checksums": base_checksums,
               "adapter_params": adapter_param_count(stack)})
    return 0


def _load_codec_state(args, cfg):
    """Base + optional adapter checkpoint -> everything compress needs."""
    codec, prior = _load_base(args.checkpoint)
    adapters = None
    mask_gen = None
    placement = cfg.placement()
    if args.adapters:
        st = load_state(args.adapters)
        if "adapters" not in st:
            raise DataError(f"{args.adapters} holds no adapter group")
        adapters = st["adapters"]
        mask_gen = st.get("mask_generator")
    if cfg.run_mode == "scalable":
        placement = _scalable_placement(cfg)
        if mask_gen is None:
            raise ConfigError("scalable mode needs an adapter checkpoint "
                              "with a mask_generator group")
    return codec, prior, adapters, mask_gen, placement


def _read_array_or_image(path):
    if path.endswith(".npy"):
        try:
            arr = np.load(path)
        except (OSError, ValueError) as e:
            raise DataError(f"cannot read array {path}: {e}") from e
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise DataError(f"{path}: expected (3,H,W), got {arr.shape}")
        return arr
    return cp.load_image(path)


def cmd_compress(args):
    cfg = _load_cfg(args)
    _out_dir(cfg)
    codec, prior, adapters, mask_gen, placement = _load_codec_state(args, cfg)
    lam_id = args.lambda_id if args.lambda_id is not None else 0
    if not 0 <= lam_id < max(len(cfg.train_lambda_grid), 1):
        raise ConfigError(f"lambda id {lam_id} outside the configured grid")
    outputs = []
    report = {}
    for src in args.inputs:
        x = _read_array_or_image(src)
        stream = cp.compress(x, codec, adapters, placement, prior,
                             mode=cfg.run_mode, lambda_id=lam_id,
                             mask_gen=mask_gen)
        name = os.path.splitext(os.path.basename(src))[0] + ".sfma"
        path = os.path.join(cfg.run_out_dir, name)
        with open(path, "wb") as fh:
            fh.write(stream.serialize())
        h, w = x.shape[-2:]
        bpp = 8 * sum(len(s) for s in stream.sections) / (h * w)
        report[name] = {"bpp": bpp, "pixels": h * w}
        print(f"{src} -> {path}  {bpp:.4f} bpp")
        outputs.append(path)
    _manifest(cfg, "compress",
              ([args.config] if args.config else [])
              + [args.checkpoint] + list(args.inputs), outputs,
              {"lambda_id": lam_id, "streams": report})
    return 0


def cmd_decompress(args):
    cfg = _load_cfg(args)
    _out_dir(cfg)
    codec, prior, adapters, mask_gen, placement = _load_codec_state(args, cfg)
    outputs = []
    report = {}
    for src in args.inputs:
        try:
            with open(src, "rb") as fh:
                data = fh.read()
        except OSError as e:
            raise DataError(f"cannot read stream {src}: {e}") from e
        stream = parse_stream(data)
        img = cp.decompress(stream, codec, adapters=adapters, prior=prior,
                            placement=placement, mask_gen=mask_gen)
        name = os.path.splitext(os.path.basename(src))[0] + ".png"
        path = os.path.join(cfg.run_out_dir, name)
        cp.save_image(path, img)
        h, w = stream.original_dims
        bpp = 8 * sum(len(s) for s in stream.sections) / (h * w)
        report[name] = {"bpp": bpp, "mode": stream.mode,
                        "lambda_id": stream.lambda_id}
        print(f"{src} -> {path}  {bpp:.4f} bpp ({stream.mode})")
        outputs.append(path)
    _manifest(cfg, "decompress",
              ([args.config] if args.config else [])
              + [args.checkpoint] + list(args.inputs), outputs,
              {"streams": report})
    return 0


def cmd_eval_rd(args):
    cfg = _load_cfg(args)
    out = _out_dir(cfg)
    inputs = [args.config] if args.config else []
    eval_x, eval_y = _eval_images(cfg)
    task_path = os.path.join(out, "task_model.npz")
    if not os.path.exists(task_path):
        raise DataError(f"missing {task_path}; run train-adapters first")
    model = load_state(task_path)["task_model"]
    inputs.append(task_path)

    scalable = cfg.run_mode == "scalable"
    placement = _scalable_placement(cfg) if scalable else cfg.placement()
    anchor_pts, test_pts = [], []
    for i in range(len(cfg.train_lambda_grid)):
        base = _base_path(cfg, i)
        apath = _adapter_path(cfg, i)
        for p in (base, apath):
            if not os.path.exists(p):
                raise DataError(f"missing checkpoint {p}")
        inputs += [base, apath]
        codec, prior = _load_base(base)
        st = load_state(apath)
        r0 = evaluate_point(eval_x, codec, prior, mode=cp.MODE_HUMAN,
                            task_model=model, labels=eval_y)
        r1 = evaluate_point(eval_x, codec, prior, st["adapters"], placement,
                            mode=cfg.run_mode, lambda_id=i,
                            mask_gen=st.get("mask_generator"),
                            task_model=model, labels=eval_y)
        q = cfg.eval_quality
        anchor_pts.append((r0["bpp"], r0[q]))
        test_pts.append((r1["bpp"], r1[q]))
    anchor = analysis.RdCurve(anchor_pts, "base")
    test = analysis.RdCurve(test_pts, "adapted")
    outputs = analysis.emit_reports([anchor, test], {}, out,
                                    anchor_label="base")
    try:
        bd = analysis.bd_metric(anchor, test, "BD_RATE")
        bd_value = bd.value
        print(f"BD-rate adapted vs base: {bd.value:+.2f}% "
              f"(quality overlap [{bd.overlap_lo:.3f}, {bd.overlap_hi:.3f}])")
    except DataError as e:
        # curves with no common quality range still get their CSVs
        bd_value = None
        print(f"BD-rate not computable: {e}")
    _manifest(cfg, "eval-rd", inputs, outputs,
              {"bd_rate_percent": bd_value, "quality": cfg.eval_quality,
               "anchor": anchor_pts, "adapted": test_pts})
    return 0


def cmd_analyze_latent(args):
    cfg = _load_cfg(args)
    out = _out_dir(cfg)
    x = _read_array_or_image(args.input)
    from .analysis import bit_allocation_map, psd_map
    from .codec import analyze, hyper_analyze, hyper_synthesize, quantize
    from .entropy import EntropyParameters, gaussian_bits
    from . import autodiff as ad

    maps = {}
    for ckpt in args.checkpoints:
        codec, prior = _load_base(ckpt)
        adapters = None
        placement = cfg.placement()
        st = load_state(ckpt)
        if "adapters" in st:
            adapters = st["adapters"]
        elif args.adapters:
            st2 = load_state(args.adapters)
            adapters = st2.get("adapters")
        with ad.no_grad():
            xp, _ = cp.pad_to_multiple(x)
            y = analyze(ad.Var(xp[None]), codec, adapters, placement)
            z = hyper_analyze(y, codec, adapters, placement)
            z_hat = quantize(z.data, "ROUND")
            mu, sigma = hyper_synthesize(
                ad.Var(z_hat), codec, latent_hw=y.data.shape[-2:],
                adapters=adapters, placement=placement)
            y_hat = quantize(y.data, "ROUND")
            bits = gaussian_bits(ad.Var(y_hat),
                                 EntropyParameters(mu, sigma))
        tag = os.path.splitext(os.path.basename(ckpt))[0]
        maps[f"{tag}_bits"] = bit_allocation_map(bits.data[0])
        maps[f"{tag}_psd"] = psd_map(y_hat[0], log=True)
    outputs = analysis.emit_reports([], maps, out)
    _manifest(cfg, "analyze-latent",
              ([args.config] if args.config else [])
              + [args.input] + list(args.checkpoints), outputs,
              {"maps": sorted(maps)})
    return 0


def cmd_ablate(args):
    cfg = _load_cfg(args)
    out = _out_dir(cfg)
    study = StudyConfig(
        n_channels=cfg.codec_n_channels,
        m_channels=cfg.codec_m_channels,
        image_size=cfg.data_image_size,
        train_size=cfg.data_train_size,
        eval_size=cfg.data_eval_size,
        data_seed=cfg.data_dataset_seed,
        task_epochs=cfg.train_task_epochs,
        task_lr=cfg.train_task_lr,
        base_lambdas=cfg.train_base_lambda_mse,
        base_epochs=cfg.train_base_epochs,
        base_batch=cfg.train_base_batch_size,
        base_lr=cfg.train_base_pretrain_lr,
        lambda_grid=cfg.train_lambda_grid,
        adapter_middle=cfg.adapter_middle_dim,
        adapter_epochs=cfg.train_epochs,
        adapter_batch=cfg.train_batch_size,
        adapter_lr=cfg.train_base_lr,
        milestones=cfg.train_milestones,
        decay=cfg.train_decay,
        ablate_dims=cfg.ablate_middle_dims,
        ablate_seeds=cfg.ablate_seeds,
        ablate_epochs=cfg.ablate_epochs,
        quality=cfg.eval_quality,
        seed=cfg.run_seed)
    res = run_study(study, cache_dir=args.cache_dir,
                    log=print if args.verbose else None)
    rows_path = os.path.join(out, "ablation.csv")
    with open(rows_path, "w") as fh:
        fh.write("middle_dim,seed,params,bd_rate_percent\n")
        for r in res["ablation"]:
            fh.write(f"{r['middle_dim']},{r['seed']},{r['params']},"
                     f"{r['bd_rate']:.6f}\n")
    outputs = [rows_path]
    outputs += analysis.emit_reports([res["anchor"], res["adapted"]], {},
                                     out, anchor_label="base")
    print(f"adapted BD-rate vs frozen base: {res['bd_rate']:+.2f}%")
    for r in res["ablation"]:
        print(f"  middle_dim={r['middle_dim']:<3d} seed={r['seed']} "
              f"params={r['params']:<8d} bd_rate={r['bd_rate']:+.2f}%")
    _manifest(cfg, "ablate", [args.config] if args.config else [],
              outputs, {"grid_size": len(res["ablation"]),
                        "bd_rate_percent": res["bd_rate"]})
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sfma-codec",
        description="Adapter-based image codec for machine and human "
                    "vision: training, coding, and analysis commands.")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, mode=True, lam=False):
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--out", help="override run.out_dir")
        if mode:
            p.add_argument("--mode",
                           choices=("human", "machine", "scalable"),
                           help="override run.mode")
        if lam:
            p.add_argument("--lambda-id", type=int, dest="lambda_id",
                           help="index into the configured lambda grid")

    p = sub.add_parser("pretrain-base",
                       help="train (or import) the frozen base codecs")
    common(p)
    p.add_argument("--import-checkpoint",
                   help="validate and re-save an existing base checkpoint")
    p.set_defaults(func=cmd_pretrain_base)

    p = sub.add_parser("train-adapters",
                       help="train per-lambda adapters on frozen bases")
    common(p)
    p.set_defaults(func=cmd_train_adapters)

    p = sub.add_parser("compress", help="images -> .sfma streams")
    common(p, lam=True)
    p.add_argument("--checkpoint", required=True, help="base checkpoint")
    p.add_argument("--adapters", help="adapter checkpoint")
    p.add_argument("inputs", nargs="+", help="image files (.png/.npy)")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help=".sfma streams -> images")
    common(p)
    p.add_argument("--checkpoint", required=True, help="base checkpoint")
    p.add_argument("--adapters", help="adapter checkpoint")
    p.add_argument("inputs", nargs="+", help=".sfma files")
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("eval-rd",
                       help="rate/accuracy curves + BD report vs the "
                            "frozen base")
    common(p)
    p.set_defaults(func=cmd_eval_rd)

    p = sub.add_parser("analyze-latent",
                       help="bit-allocation and spectrum maps per "
                            "checkpoint")
    common(p)
    p.add_argument("--adapters", help="adapter checkpoint")
    p.add_argument("--input", required=True, help="image file")
    p.add_argument("checkpoints", nargs="+", help="base checkpoints")
    p.set_defaults(func=cmd_analyze_latent)

    p = sub.add_parser("ablate",
                       help="adapter middle-width sweep at toy scale")
    common(p, mode=False)
    p.add_argument("--cache-dir", help="reuse checkpoints across runs")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
