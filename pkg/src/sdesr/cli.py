"""Command-line front end: gen-data, train, sample, sweep-r and eval.

Every command accepts ``--config FILE`` (flat ``key=value`` lines, ``#``
comments). Values resolve as built-in defaults < config file < explicit
flags, and the resolved set is written to ``run_config.txt`` in the output
directory so a run can be repeated with ``--config out/run_config.txt``.

Exit codes: 0 success, 1 runtime or partial failure, 2 usage error,
3 training divergence.
"""

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from sdesr import dataio, metrics, training
from sdesr.denoiser import Architecture, DenoiserNet
from sdesr.samplers import Corrector, Predictor, SamplerConfig, SamplingError, pc_sample
from sdesr.sde import SdeKind, make_rng
from sdesr.training import DegradationSpec, DivergenceError, TrainConfig

log = logging.getLogger("sdesr")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
SWEEP_R_REFERENCE = 0.16


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config resolution


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _floats(v):
    if isinstance(v, (list, tuple)):
        return [float(x) for x in v]
    return [float(x) for x in str(v).split(",") if x.strip()]


def _fmt(v):
    if isinstance(v, (list, tuple)):
        return ",".join(repr(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_config(path):
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def write_config(path, cfg):
    lines = [f"{k}={_fmt(v)}" for k, v in cfg.items() if v is not None]
    Path(path).write_text("\n".join(lines) + "\n")


def resolve(schema, args, base=None):
    """Merge defaults, ``base`` overrides, the config file and explicit flags.

    ``schema`` maps each key to ``(converter, default)``. Unknown keys in the
    config file are a usage error.
    """
    cfg = {k: d for k, (_, d) in schema.items()}
    layers = [base or {}]
    if getattr(args, "config", None):
        layers.append(read_config(args.config))
    layers.append({k: v for k, v in vars(args).items() if k in schema and v is not None})
    for layer in layers:
        for k, v in layer.items():
            if k not in schema:
                raise UsageError(f"unknown config key {k!r}")
            conv = schema[k][0]
            try:
                cfg[k] = None if v is None or (v == "" and conv is not str) else conv(v)
            except ValueError as exc:
                raise UsageError(f"bad value for {k}: {exc}") from None
    return cfg


def _require(cfg, *keys):
    for k in keys:
        if cfg.get(k) in (None, ""):
            raise UsageError(f"missing required setting {k!r}")


def _out_dir(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# gen-data

GEN_SCHEMA = {
    "n": (int, 2000),
    "size": (int, 32),
    "seed": (int, 0),
    "out": (str, None),
}


def cmd_gen_data(args):
    cfg = resolve(GEN_SCHEMA, args)
    _require(cfg, "out")
    if cfg["n"] < 1:
        raise UsageError("n must be >= 1")
    out = _out_dir(cfg)
    handle = dataio.synth_faces(cfg["n"], (cfg["size"], cfg["size"]), seed=cfg["seed"])
    for name, img in zip(handle.names, handle.images):
        dataio.write_image(out / name, img)
    (out / "manifest.txt").write_text("\n".join(handle.names) + "\n")
    write_config(out / "run_config.txt", cfg)
    log.info("wrote %d images to %s", len(handle), out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train

_TRAIN_TYPES = {"int": int, "float": float, "str": str}
TRAIN_SCHEMA = {
    f: ((lambda v: None if str(v).lower() == "none" else float(v)) if f == "grad_clip"
        else _TRAIN_TYPES[type(d).__name__], d)
    for f, d in TrainConfig().as_dict().items()
}
TRAIN_SCHEMA.update({
    "data": (str, ""),
    "n_synth": (int, 2000),
    "size": (int, 32),
    "data_seed": (int, 0),
    "model_seed": (int, 0),
    "out": (str, None),
    "resume": (str, ""),
})


_DATA_KEYS = ("data", "n_synth", "size", "data_seed", "model_seed")


def _training_images(cfg):
    if cfg["data"]:
        handle = dataio.load_image_dir(cfg["data"])
        for name, why in handle.rejected:
            log.warning("rejected %s: %s", name, why)
    else:
        handle = dataio.synth_faces(cfg["n_synth"], (cfg["size"], cfg["size"]), seed=cfg["data_seed"])
    return handle.images


def _truncate_loss_csv(path, step):
    if not path.exists():
        return
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    keep = rows[:1] + [r for r in rows[1:] if r and int(r[0]) <= step]
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(keep)


def cmd_train(args):
    base, ckpt = None, None
    if getattr(args, "resume", None):
        ckpt = dataio.load_checkpoint(args.resume)
        base = {k[6:]: v for k, v in ckpt.meta.items() if k.startswith("train.")}
        base.update({k[5:]: v for k, v in ckpt.meta.items() if k.startswith("data.")})
    cfg = resolve(TRAIN_SCHEMA, args, base)
    _require(cfg, "out")
    config = TrainConfig.from_dict({k: cfg[k] for k in TrainConfig().as_dict()})
    out = _out_dir(cfg)
    images = _training_images(cfg)

    if ckpt is not None:
        if ckpt.meta["sde.kind"] != config.sde_kind:
            raise UsageError(f"checkpoint kind {ckpt.meta['sde.kind']} != sde_kind {config.sde_kind}")
        net = training.net_from_checkpoint(ckpt, use_ema=False)
        state = training.TrainState(step=int(ckpt.meta["step"]))
        if any(k.startswith("ema.") for k in ckpt.arrays):
            state.ema = {k[4:]: v.copy() for k, v in ckpt.arrays.items() if k.startswith("ema.")}
        opt = training.Adam(net.params)
        if "adam.t" in ckpt.meta:
            opt.load_state(ckpt.arrays, ckpt.meta["adam.t"])
        _truncate_loss_csv(out / "loss.csv", state.step)
        log.info("resuming at step %d", state.step)
    else:
        arch = Architecture(channels=images.shape[-1])
        net = DenoiserNet(config.sde(), arch, seed=cfg["model_seed"])
        state, opt = training.TrainState(), None
    write_config(out / "run_config.txt", cfg)

    def on_checkpoint(st, optimizer):
        ck = training.make_checkpoint(net, config, st, optimizer)
        # the data source is not part of TrainConfig but resume must rebuild it
        ck.meta.update({f"data.{k}": cfg[k] for k in _DATA_KEYS})
        if st.step % config.checkpoint_every == 0:
            dataio.save_checkpoint(ck, out / f"ckpt_{st.step:06d}.sdesr")
        if st.step == config.steps:
            dataio.save_checkpoint(ck, out / "model.sdesr")

    training.train(config, images, net, state=state, optimizer=opt, out_dir=out, on_checkpoint=on_checkpoint)
    return EXIT_OK


# ---------------------------------------------------------------------------
# sampling helpers


def _load_model(path, kind=None, use_ema=True):
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    ckpt = dataio.load_checkpoint(path)
    if kind and ckpt.meta["sde.kind"] != SdeKind(kind).value:
        raise UsageError(f"checkpoint was trained with {ckpt.meta['sde.kind']}, not {kind}")
    net = training.net_from_checkpoint(ckpt, use_ema=use_ema)
    return net, training.config_from_checkpoint(ckpt).degradation()


def _sampler_config(cfg, kind):
    corrector = Corrector(cfg["corrector"])
    if cfg.get("snr") is not None and corrector is not Corrector.LANGEVIN:
        raise UsageError("--r only applies with --corrector langevin")
    m = cfg["m_corrector"]
    if m is None:
        m = 2 if corrector is Corrector.LANGEVIN else 0
    if corrector is Corrector.LANGEVIN and kind is not SdeKind.VE:
        log.warning("Langevin correction with a %s model is experimental", kind.value)
    predictor = cfg["predictor"] or (Predictor.EULER_MARUYAMA if kind is SdeKind.VE
                                     else Predictor.REVERSE_DIFFUSION)
    snr = cfg["snr"] if cfg.get("snr") is not None else SWEEP_R_REFERENCE
    return SamplerConfig(n_steps=cfg["n_steps"], m_corrector=m, snr=snr, predictor=predictor,
                         corrector=corrector, denoise_final=cfg["denoise_final"])


def super_resolve(net, y_up, scfg, seed, index, batch):
    """Sample SR images for ``y_up``; image ``index[i]`` uses stream ``(seed, index[i])``."""
    out = np.empty_like(y_up)
    for start in range(0, len(y_up), batch):
        sl = slice(start, start + batch)
        rngs = [make_rng(seed, int(i)) for i in index[sl]]
        out[sl] = pc_sample(net.sde, net, y_up[sl], scfg, rngs)
        log.info("sampled %d/%d", min(start + batch, len(y_up)), len(y_up))
    return out


def make_grid(columns, gap=1):
    """Tile a list of equally sized ``(N, H, W, C)`` stacks into one image (one row per item)."""
    n, h, w, c = columns[0].shape
    grid = np.ones((n * (h + gap) - gap, len(columns) * (w + gap) - gap, c), dtype=np.float32)
    for j, col in enumerate(columns):
        for i in range(n):
            grid[i * (h + gap):i * (h + gap) + h, j * (w + gap):j * (w + gap) + w] = col[i]
    return grid


def _inputs(cfg, spec):
    """Return names, HR stack (or None), LR stack and upsampled LR stack."""
    hr = lr = None
    if cfg["lr"]:
        lr = dataio.load_image_dir(cfg["lr"])
    if cfg["hr"]:
        hr = dataio.load_image_dir(cfg["hr"])
    if hr is None and lr is None:
        raise UsageError("give --hr (images to degrade) or --lr (low-resolution inputs)")
    if lr is not None:
        names, y_lr = lr.names, lr.images
        hr_imgs = None
        if hr is not None:
            by_name = dict(zip(hr.names, hr.images))
            if all(n in by_name for n in names):
                hr_imgs = np.stack([by_name[n] for n in names])
    else:
        names, hr_imgs = hr.names, hr.images
        y_lr = training.downsample(hr_imgs, spec)
    if cfg["limit"] > 0:
        names, y_lr = names[:cfg["limit"]], y_lr[:cfg["limit"]]
        hr_imgs = None if hr_imgs is None else hr_imgs[:cfg["limit"]]
    return names, hr_imgs, y_lr, training.upsample(y_lr, spec).astype(np.float32)


# ---------------------------------------------------------------------------
# sample

SAMPLE_SCHEMA = {
    "checkpoint": (str, None),
    "hr": (str, ""),
    "lr": (str, ""),
    "out": (str, None),
    "kind": (str, ""),
    "n_steps": (int, 2000),
    "m_corrector": (int, None),
    "snr": (float, None),
    "predictor": (str, ""),
    "corrector": (str, "none"),
    "seed": (int, 0),
    "denoise_final": (_bool, True),
    "use_ema": (_bool, True),
    "batch": (int, 16),
    "limit": (int, 0),
}


def cmd_sample(args):
    cfg = resolve(SAMPLE_SCHEMA, args)
    _require(cfg, "checkpoint", "out")
    net, spec = _load_model(cfg["checkpoint"], cfg["kind"], cfg["use_ema"])
    scfg = _sampler_config(cfg, net.sde.kind)
    names, hr, y_lr, y_up = _inputs(cfg, spec)
    out = _out_dir(cfg)
    write_config(out / "run_config.txt", cfg)
    sr = super_resolve(net, y_up, scfg, cfg["seed"], np.arange(len(names)), cfg["batch"])
    (out / "sr").mkdir(exist_ok=True)
    for name, img in zip(names, sr):
        dataio.write_image(out / "sr" / (Path(name).stem + ".png"), img)
    cols = [y_up, sr] + ([hr] if hr is not None else [])
    dataio.write_image(out / "grid.png", make_grid(cols))
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep-r

SWEEP_SCHEMA = {
    "checkpoint": (str, None),
    "hr": (str, ""),
    "n_test": (int, 200),
    "data_seed": (int, 1),
    "size": (int, 32),
    "r": (_floats, [0.05, 0.1, 0.16, 0.3, 0.5]),
    "L": (int, 64),
    "select_seed": (int, 0),
    "seed": (int, 0),
    "n_steps": (int, 1000),
    "m_corrector": (int, 2),
    "predictor": (str, ""),
    "denoise_final": (_bool, True),
    "use_ema": (_bool, True),
    "batch": (int, 16),
    "out": (str, None),
}

SWEEP_COLUMNS = ("psnr_db", "ssim", "consistency_x1e4", "cosine", "hf_energy")


def held_out_images(cfg):
    """Held-out HR images: a directory, or synthetic faces from ``data_seed``."""
    if cfg["hr"]:
        handle = dataio.load_image_dir(cfg["hr"])
    else:
        handle = dataio.synth_faces(cfg["n_test"], (cfg["size"], cfg["size"]), seed=cfg["data_seed"])
    idx, hr = dataio.sample_test_set(handle, cfg["L"], cfg["select_seed"])
    return [handle.names[i] for i in idx], hr


def evaluate_batch(sr, hr, y_lr, spec):
    report, hf = metrics.MetricReport(), []
    for i in range(len(sr)):
        report.add(i, *metrics.evaluate_image(sr[i], hr[i], y_lr[i], spec))
        hf.append(metrics.high_frequency_energy(sr[i]))
    return report, np.array(hf)


def cmd_sweep_r(args):
    cfg = resolve(SWEEP_SCHEMA, args)
    _require(cfg, "checkpoint", "out")
    if len(cfg["r"]) < 3:
        raise UsageError("the sweep needs at least 3 r values")
    net, spec = _load_model(cfg["checkpoint"], use_ema=cfg["use_ema"])
    if net.sde.kind is not SdeKind.VE:
        raise UsageError(f"the r-sweep expects a VE checkpoint, got {net.sde.kind.value}")
    names, hr = held_out_images(cfg)
    y_lr = training.downsample(hr, spec)
    y_up = training.upsample(y_lr, spec).astype(np.float32)
    out = _out_dir(cfg)
    write_config(out / "run_config.txt", cfg)

    rows, per_image, grids = [], [], [y_up[:8]]
    for r in cfg["r"]:
        scfg = SamplerConfig(n_steps=cfg["n_steps"], m_corrector=cfg["m_corrector"], snr=r,
                             predictor=cfg["predictor"] or Predictor.EULER_MARUYAMA,
                             corrector=Corrector.LANGEVIN, denoise_final=cfg["denoise_final"])
        log.info("r=%g", r)
        # same per-image streams for every r, so differences come from r alone
        sr = super_resolve(net, y_up, scfg, cfg["seed"], np.arange(len(hr)), cfg["batch"])
        report, hf = evaluate_batch(sr, hr, y_lr, spec)
        grids.append(sr[:8])
        with open(out / f"images_r{r:g}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("image",) + SWEEP_COLUMNS)
            for name, rec, e in zip(names, report.records, hf):
                w.writerow([name] + [f"{min(rec[c], metrics.PSNR_CAP_DB) if c == 'psnr_db' else rec[c]:.10g}"
                                     for c in metrics.METRIC_COLUMNS] + [f"{e:.10g}"])
        agg = report.aggregates()
        agg["hf_energy"] = (float(hf.mean()), float(hf.std()))
        rows.append((r, agg))
        per_image.append((r, report.column("psnr_db"), report.column("cosine"), hf))
    grids.append(hr[:8])
    dataio.write_image(out / "r_grid.png", make_grid(grids))

    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "L"] + [f"{c}_{s}" for c in SWEEP_COLUMNS for s in ("mean", "std")] + ["reference_r"])
        for r, agg in rows:
            w.writerow([f"{r:g}", len(hr)] + [f"{v:.10g}" for c in SWEEP_COLUMNS for v in agg[c]]
                       + [int(np.isclose(r, SWEEP_R_REFERENCE))])

    rs = np.array([r for r, _ in rows])
    means = {c: np.array([agg[c][0] for _, agg in rows]) for c in SWEEP_COLUMNS}
    all_psnr = np.concatenate([p for _, p, _, _ in per_image])
    all_cos = np.concatenate([c for _, _, c, _ in per_image])
    pairs = [
        ("r", "hf_energy", "per_r_mean", rs, means["hf_energy"]),
        ("r", "psnr_db", "per_r_mean", rs, means["psnr_db"]),
        ("r", "cosine", "per_r_mean", rs, means["cosine"]),
        ("cosine", "psnr_db", "per_r_mean", means["cosine"], means["psnr_db"]),
        ("cosine", "psnr_db", "per_image", all_cos, all_psnr),
    ]
    with open(out / "correlation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("x", "y", "over", "n", "pearson", "spearman"))
        for x, y, over, xs, ys in pairs:
            c = metrics.metric_correlation(xs, ys)
            w.writerow([x, y, over, len(xs), f"{c.pearson:.10g}", f"{c.spearman:.10g}"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval

EVAL_SCHEMA = {
    "sr": (str, None),
    "hr": (str, None),
    "lr": (str, ""),
    "factor": (int, 4),
    "down_method": (str, "area"),
    "features_sr": (str, ""),
    "features_hr": (str, ""),
    "baseline": (_bool, False),
    "out": (str, None),
}


def _by_stem(handle):
    return {Path(n).stem: img for n, img in zip(handle.names, handle.images)}


def cmd_eval(args):
    cfg = resolve(EVAL_SCHEMA, args)
    _require(cfg, "sr", "hr", "out")
    if bool(cfg["features_sr"]) != bool(cfg["features_hr"]):
        raise UsageError("give both --features-sr and --features-hr, or neither")
    spec = DegradationSpec(cfg["factor"], cfg["down_method"])
    sr_h = dataio.load_image_dir(cfg["sr"])
    sr_imgs, hr_imgs = _by_stem(sr_h), _by_stem(dataio.load_image_dir(cfg["hr"]))
    lr_imgs = _by_stem(dataio.load_image_dir(cfg["lr"])) if cfg["lr"] else None
    out = _out_dir(cfg)
    write_config(out / "run_config.txt", cfg)

    problems = [f"{n}: {why}" for n, why in sr_h.rejected]
    report, base = metrics.MetricReport(), metrics.MetricReport()
    for stem, sr in sr_imgs.items():
        if stem not in hr_imgs:
            problems.append(f"{stem}: no matching HR image")
            continue
        hr = hr_imgs[stem]
        if lr_imgs is None:
            y_lr = training.downsample(hr, spec)
        elif stem in lr_imgs:
            y_lr = lr_imgs[stem]
        else:
            problems.append(f"{stem}: no matching LR image")
            continue
        feats = None
        if cfg["features_sr"]:
            try:
                feats = (metrics.read_fvec(Path(cfg["features_sr"]) / f"{stem}.fvec"),
                         metrics.read_fvec(Path(cfg["features_hr"]) / f"{stem}.fvec"))
            except (OSError, metrics.MetricError) as exc:
                problems.append(f"{stem}: features: {exc}")
                continue
        try:
            report.add(stem, *metrics.evaluate_image(sr, hr, y_lr, spec, feats))
            if cfg["baseline"]:
                up = training.upsample(y_lr, spec)
                base.add(stem, *metrics.evaluate_image(up, hr, y_lr, spec))
        except metrics.MetricError as exc:
            problems.append(f"{stem}: {exc}")
    missing_hr = sorted(set(hr_imgs) - set(sr_imgs))
    problems += [f"{stem}: no matching SR image" for stem in missing_hr]

    if len(report):
        report.write_csv(out / "per_image.csv")
        report.write_summary(out / "summary.csv")
        if cfg["baseline"]:
            base.write_csv(out / "baseline_per_image.csv")
            base.write_summary(out / "baseline_summary.csv")
    for p in problems:
        print(f"sdesr eval: unmatched or invalid: {p}", file=sys.stderr)
    return EXIT_OK if not problems and len(report) else EXIT_FAIL


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    p = argparse.ArgumentParser(prog="sdesr", description="Score-based SDE super-resolution toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="flat key=value file; explicit flags override it")
        sp.set_defaults(func=fn)
        return sp

    g = cmd("gen-data", cmd_gen_data, "write synthetic toy faces and a manifest")
    g.add_argument("--n", type=int)
    g.add_argument("--size", type=int, help="image side in pixels (default 32)")
    g.add_argument("--seed", type=int)
    g.add_argument("--out")

    t = cmd("train", cmd_train, "train a conditional denoiser with denoising score matching")
    for key, (conv, default) in TRAIN_SCHEMA.items():
        if key in ("resume", "out", "data"):
            continue
        t.add_argument("--" + key.replace("_", "-"), dest=key, help=f"default {default}")
    t.add_argument("--kind", dest="sde_kind", choices=[k.value for k in SdeKind])
    t.add_argument("--data", help="directory of HR images (default: synthetic faces)")
    t.add_argument("--out")
    t.add_argument("--resume", help="checkpoint to continue from")

    s = cmd("sample", cmd_sample, "super-resolve images with a trained checkpoint")
    s.add_argument("--checkpoint")
    s.add_argument("--hr", help="directory of HR images to degrade")
    s.add_argument("--lr", help="directory of LR input images")
    s.add_argument("--out")
    s.add_argument("--kind", choices=[k.value for k in SdeKind], help="must match the checkpoint")
    s.add_argument("--N", "--n-steps", dest="n_steps", type=int, help="time steps (default 2000)")
    s.add_argument("--M", "--m-corrector", dest="m_corrector", type=int,
                   help="corrector steps (default 0, or 2 with langevin)")
    s.add_argument("--r", "--snr", dest="snr", type=float, help="Langevin signal-to-noise ratio")
    s.add_argument("--predictor", choices=[x.value for x in Predictor])
    s.add_argument("--corrector", choices=[x.value for x in Corrector])
    s.add_argument("--seed", type=int)
    s.add_argument("--denoise-final", dest="denoise_final")
    s.add_argument("--use-ema", dest="use_ema")
    s.add_argument("--batch", type=int)
    s.add_argument("--limit", type=int, help="only the first LIMIT images (0 = all)")

    w = cmd("sweep-r", cmd_sweep_r, "sample held-out images for several Langevin r values")
    w.add_argument("--checkpoint")
    w.add_argument("--hr", help="directory of held-out HR images (default: synthetic)")
    w.add_argument("--n-test", dest="n_test", type=int)
    w.add_argument("--data-seed", dest="data_seed", type=int)
    w.add_argument("--size", type=int)
    w.add_argument("--r", help="comma-separated r values")
    w.add_argument("--L", type=int, help="number of test images")
    w.add_argument("--select-seed", dest="select_seed", type=int)
    w.add_argument("--seed", type=int)
    w.add_argument("--N", "--n-steps", dest="n_steps", type=int)
    w.add_argument("--M", "--m-corrector", dest="m_corrector", type=int)
    w.add_argument("--predictor", choices=[x.value for x in Predictor])
    w.add_argument("--denoise-final", dest="denoise_final")
    w.add_argument("--use-ema", dest="use_ema")
    w.add_argument("--batch", type=int)
    w.add_argument("--out")

    e = cmd("eval", cmd_eval, "score SR images against HR references")
    e.add_argument("--sr")
    e.add_argument("--hr")
    e.add_argument("--lr", help="LR inputs (default: degrade the HR images)")
    e.add_argument("--factor", type=int)
    e.add_argument("--down-method", dest="down_method", choices=["area", "bicubic"])
    e.add_argument("--features-sr", dest="features_sr", help="directory of <name>.fvec files")
    e.add_argument("--features-hr", dest="features_hr")
    e.add_argument("--baseline", help="also score the bicubic upsample (true/false)")
    e.add_argument("--out")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"sdesr {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"sdesr {args.command}: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, dataio.DataError, dataio.CheckpointError, SamplingError, ValueError) as exc:
        print(f"sdesr {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
