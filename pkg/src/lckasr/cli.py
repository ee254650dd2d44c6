"""Command-line interface: analyze | degrade | train | infer | eval | probe-attn.

Configuration is a flat UTF-8 ``key = value`` file (``--config``) whose
entries can be overridden by ``--key value`` flags. Exit codes: 0 success,
2 usage/config, 3 data, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import complexity, image, model
from .blocks import AttentionVariant
from .data import list_pngs, load_pairs
from .errors import ConfigError, DataError, FormatError, LckasrError, NumericError
from .train import Schedule, train, write_trace

log = logging.getLogger("lckasr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _crop(text: str):
    return None if str(text).strip().lower() == "auto" else int(text)


# key -> (parser, default)
KEYS = {
    "scale": (int, 2),
    "channels": (int, 48),
    "blocks": (int, 8),
    "replication": (int, 3),
    "attention": (str, "lcka"),
    "attn_kernel": (int, 5),
    "attn_dilation": (int, 3),
    "distill_ratio": (float, 0.5),
    "stages": (int, 3),
    "conv_block": (str, "mbsconv"),
    "bias": (_bool, True),
    "seed": (int, 0),
    "iters": (int, 1_000_000),
    "batch": (int, 64),
    "patch": (int, 48),
    "lr": (float, 5e-3),
    "beta1": (float, 0.98),
    "beta2": (float, 0.92),
    "beta3": (float, 0.99),
    "eps": (float, 1e-8),
    "weight_decay": (float, 0.0),
    "ema_decay": (float, 0.999),
    "augment": (_bool, False),
    "border_crop": (_crop, None),
    "out_h": (int, 720),
    "out_w": (int, 1280),
}


class RunConfig(dict):
    """Resolved flat configuration."""

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls({k: d for k, (_, d) in KEYS.items()})

    def set(self, key: str, raw, origin: str):
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r} ({origin})")
        try:
            self[key] = KEYS[key][0](raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r} ({origin}): {exc}") from None

    def load_file(self, path):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            self.set(key, value, f"{path}:{lineno}")

    def canonical(self) -> str:
        shown = {k: ("auto" if v is None else v) for k, v in self.items()}
        return "".join(f"{k}={shown[k]}\n" for k in sorted(shown))

    @property
    def crop(self) -> int:
        return self["scale"] if self["border_crop"] is None else self["border_crop"]

    def model_config(self) -> model.ModelConfig:
        return model.ModelConfig(
            scale=self["scale"], channels=self["channels"], blocks=self["blocks"],
            replication=self["replication"],
            attention=AttentionVariant(self["attention"], self["attn_kernel"], self["attn_dilation"]),
            distill_ratio=self["distill_ratio"], stages=self["stages"], conv_block=self["conv_block"],
            bias=self["bias"], seed=self["seed"],
        )

    def schedule(self) -> Schedule:
        return Schedule(
            iters=self["iters"], batch=self["batch"], patch=self["patch"], lr=self["lr"],
            betas=(self["beta1"], self["beta2"], self["beta3"]), eps=self["eps"],
            weight_decay=self["weight_decay"], ema_decay=self["ema_decay"], augment=self["augment"],
        )


def resolve(args) -> RunConfig:
    cfg = RunConfig.defaults()
    if args.config:
        cfg.load_file(args.config)
    for key in KEYS:
        value = getattr(args, key, None)
        if value is not None:
            cfg.set(key, value, "command line")
    log.info("resolved config:\n%s", cfg.canonical().rstrip())
    return cfg


def _write_text(path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _config_header(cfg: RunConfig) -> str:
    return "".join(f"# {line}\n" for line in cfg.canonical().splitlines())


# commands -----------------------------------------------------------------

def cmd_analyze(args, cfg: RunConfig) -> int:
    mc = cfg.model_config()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = complexity.count_multiadds(mc, cfg["out_h"], cfg["out_w"])
    table = complexity.compare_variants(mc, cfg["out_h"], cfg["out_w"])
    _write_text(out / "complexity.txt", _config_header(cfg) + report.to_text())
    _write_text(out / "complexity.csv", report.to_csv())
    _write_text(out / "variants.txt", _config_header(cfg) + table.to_text())
    _write_text(out / "variants.csv", table.to_csv())
    print(f"params {report.total_params} ({report.total_params / 1e3:.2f} K), "
          f"multi-adds {report.total_macs} ({report.total_macs / 1e9:.2f} G) at {cfg['out_w']}x{cfg['out_h']}")
    print(table.to_text(), end="")
    return EXIT_OK


def cmd_degrade(args, cfg: RunConfig) -> int:
    s = cfg["scale"]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = list_pngs(args.hr_dir)
    done = 0
    for path in paths:
        try:
            hr = image.read_png(path)
        except DataError as exc:
            log.warning("skipping %s: %s", path.name, exc)
            continue
        hr = image.crop_to_multiple(hr, s)
        if hr.shape[0] == 0 or hr.shape[1] == 0:
            log.warning("skipping %s: smaller than scale %d", path.name, s)
            continue
        image.write_png(out / path.name, image.degrade(hr, s))
        done += 1
    log.info("degraded %d of %d images by x%d", done, len(paths), s)
    if done == 0:
        raise DataError(f"no image in {args.hr_dir} could be degraded")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    mc = cfg.model_config()
    try:
        pairs = load_pairs(args.hr_dir, mc.scale, args.lr_dir)
    except DataError as exc:
        if "no PNG images" in str(exc):
            raise ConfigError(str(exc)) from None
        raise
    result = train(mc, pairs, cfg.schedule(), log_every=args.log_every)
    model.save(result.params, args.out)
    if args.trace:
        write_trace(args.trace, result.trace)
    if result.trace:
        log.info("final loss %.6f after %d iterations", result.trace[-1].loss, len(result.trace))
    return EXIT_OK


def _load_weights(path, mc):
    try:
        return model.load(path, mc)
    except OSError as exc:
        raise DataError(f"cannot read weights {path}: {exc}") from None


def cmd_infer(args, cfg: RunConfig) -> int:
    mc = cfg.model_config()
    params = _load_weights(args.weights, mc)
    lr = image.to_tensor(image.read_png(args.input))
    fn = model.forward_ensemble if args.ensemble else model.forward
    sr = fn(params, mc, lr)
    if not np.all(np.isfinite(sr)):
        raise NumericError("network output has non-finite values")
    image.write_png(args.output, image.to_image(sr))
    return EXIT_OK


def _format_psnr(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.4f}"


def cmd_eval(args, cfg: RunConfig) -> int:
    s, crop = cfg["scale"], cfg.crop
    paths = list_pngs(args.hr_dir)
    if not paths:
        raise ConfigError(f"no PNG images in {args.hr_dir}")
    params = mc = None
    if args.weights:
        mc = cfg.model_config()
        params = _load_weights(args.weights, mc)
    rows = []
    for path in paths:
        hr = image.crop_to_multiple(image.read_png(path), s)
        if args.sr_dir:
            sr = image.read_png(Path(args.sr_dir) / path.name)
        else:
            lr = image.degrade(hr, s)
            if params is not None:
                fn = model.forward_ensemble if args.ensemble else model.forward
                sr = image.to_image(fn(params, mc, image.to_tensor(lr)))
            elif args.baseline == "nearest":
                sr = image.nearest_upscale(lr, s)
            else:
                sr = image.bicubic_resize(lr, hr.shape[0], hr.shape[1])
        if sr.shape != hr.shape:
            raise DataError(f"{path.name}: SR size {sr.shape[:2]} != HR size {hr.shape[:2]}")
        rows.append((path.name, image.psnr_y(sr, hr, crop), image.ssim_y(sr, hr, crop)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("name", "psnr_db", "ssim"))
    for name, p, q in rows:
        w.writerow((name, _format_psnr(p), f"{q:.6f}"))
    mean_p = float(np.mean([r[1] for r in rows]))
    mean_q = float(np.mean([r[2] for r in rows]))
    w.writerow(("MEAN", _format_psnr(mean_p), f"{mean_q:.6f}"))
    _write_text(args.out, buf.getvalue())
    print(f"mean PSNR {_format_psnr(mean_p)} dB, mean SSIM {mean_q:.6f} over {len(rows)} images")
    print(f"* Y = 16 + (65.481 R + 128.553 G + 24.966 B) / 255; border crop {crop} px; "
          f"SSIM 11x11 Gaussian sigma 1.5, valid windows")
    return EXIT_OK


def cmd_probe_attn(args, cfg: RunConfig) -> int:
    v = AttentionVariant(cfg["attention"], cfg["attn_kernel"], cfg["attn_dilation"])
    rf = complexity.probe_receptive_field(v)
    span = v.kernel + v.dilation * (v.kernel - 1) if v.kind != "none" else 1
    text = (
        f"variant {v.kind} kernel {v.kernel} dilation {v.dilation}\n"
        f"receptive field {rf.height}x{rf.width} ({'dense' if rf.dense else 'sparse'}); "
        f"analytic span {span}\n"
        f"spatial params per channel {complexity.spatial_params_per_channel(v)}\n"
    )
    print(text, end="")
    if args.out:
        _write_text(args.out, text)
    return EXIT_OK


COMMANDS = {
    "analyze": cmd_analyze,
    "degrade": cmd_degrade,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "probe-attn": cmd_probe_attn,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    for key in KEYS:
        common.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None, metavar="VALUE")

    parser = argparse.ArgumentParser(prog="lckasr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="parameter and Multi-Adds report")
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("degrade", parents=[common], help="bicubic-degrade a folder of HR PNGs")
    p.add_argument("--hr-dir", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("train", parents=[common], help="train and write a weight file")
    p.add_argument("--hr-dir", required=True)
    p.add_argument("--lr-dir")
    p.add_argument("--out", required=True, help="weight file to write")
    p.add_argument("--trace", help="loss trace CSV to write")
    p.add_argument("--log-every", type=int, default=0)

    p = sub.add_parser("infer", parents=[common], help="super-resolve one PNG")
    p.add_argument("--weights", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--ensemble", action="store_true", help="average over the 8 dihedral transforms")

    p = sub.add_parser("eval", parents=[common], help="Y-channel PSNR/SSIM against HR PNGs")
    p.add_argument("--hr-dir", required=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--weights")
    src.add_argument("--sr-dir", help="compare existing SR images (matched by name)")
    src.add_argument("--baseline", choices=("bicubic", "nearest"), default="bicubic")
    p.add_argument("--ensemble", action="store_true")
    p.add_argument("--out", required=True, help="metrics CSV to write")

    p = sub.add_parser("probe-attn", parents=[common], help="receptive field and cost of an attention variant")
    p.add_argument("--out")
    return parser


def _apply_thread_cap():
    cap = os.environ.get("LCKASR_THREADS")
    if not cap:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, int(cap)))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    _apply_thread_cap()
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, FormatError) as exc:
        print(f"lckasr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"lckasr {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"lckasr {args.command}: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except LckasrError as exc:
        print(f"lckasr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
