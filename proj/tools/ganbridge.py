#!/usr/bin/env python3
"""Export generator pairs and encoder latents in the latseg dataset formats.

Two subcommands:

  export-pairs  draw z, write G(z) and G(z + s*h) as a pair dataset
  encode        encode a directory of images into a latents matrix

--model selects the backend. "toy" is a small deterministic numpy generator
and encoder used for tests and smoke runs; anything else is handed to
tensorflow_hub (a hub handle or a local SavedModel path of a BigBiGAN module).
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

LATENT_DIM = 120
MANIFEST_VERSION = 1


class BridgeError(Exception):
    pass


# ---- models ----------------------------------------------------------------


class ToyModel:
    """Blob scene whose colors and layout are smooth functions of z.

    Output range is [-1, 1] like the real generator.
    """

    def __init__(self, side=32, dim=LATENT_DIM):
        self.side = side
        self.dim = dim
        rng = np.random.default_rng(12345)
        self.fg = rng.normal(size=(3, dim)) / np.sqrt(dim)
        self.bg = rng.normal(size=(3, dim)) / np.sqrt(dim)
        self.pos = rng.normal(size=(3, dim)) / np.sqrt(dim)
        self.tex = rng.normal(size=(3, 3, dim)) / np.sqrt(dim)
        n = side * side * 3
        self.enc = rng.normal(size=(dim, n)) / np.sqrt(n)

    def generate(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[1] != self.dim:
            raise BridgeError(f"latent dimension {z.shape[1]} does not match model dimension {self.dim}")
        out = []
        yy, xx = np.mgrid[0:self.side, 0:self.side] / (self.side - 1)
        for row in z:
            cx, cy, r = np.tanh(self.pos @ row) * np.array([0.2, 0.2, 0.08]) + np.array([0.5, 0.5, 0.25])
            inside = ((xx - cx) ** 2 + (yy - cy) ** 2 <= r * r)[..., None]
            fg = np.tanh(self.fg @ row) * 0.7
            bg = np.tanh(self.bg @ row) * 0.7
            # per-channel ripples so pixel colors fill out all three dimensions
            t = np.tanh(self.tex @ row) + np.array([[1.0, 0.0, 0.0], [0.0, 1.5, 1.0], [-1.2, 0.8, 2.0]])
            texture = 0.25 * np.stack([np.sin(2 * np.pi * (a * xx + b * yy) + c) for a, b, c in t], axis=-1)
            img = np.where(inside, fg, bg) + texture
            out.append(np.clip(img, -1.0, 1.0))
        return np.stack(out)

    def encode(self, images):
        # images in [-1, 1], shape (n, h, w, 3); resized to the model side
        x = np.stack([resize(im, self.side) for im in images]).reshape(len(images), -1)
        return x @ self.enc.T


class HubModel:
    """BigBiGAN through tensorflow_hub ("generate" and "encode" signatures)."""

    def __init__(self, handle):
        os.environ.setdefault("TF_CPP_MIN_LOG_LEVEL", "3")
        try:
            import tensorflow_hub as hub
            import tensorflow as tf
        except ImportError as e:
            raise BridgeError(f"loading {handle} needs tensorflow and tensorflow_hub: {e}") from e
        try:
            self.tf = tf
            self.module = hub.load(handle)
        except Exception as e:  # hub raises assorted types
            raise BridgeError(f"cannot load model {handle}: {e}") from e
        self.dim = LATENT_DIM
        self.side = 128

    def generate(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=np.float32))
        if z.shape[1] != self.dim:
            raise BridgeError(f"latent dimension {z.shape[1]} does not match model dimension {self.dim}")
        out = self.module.signatures["generate"](z=self.tf.constant(z))
        return np.asarray(out["default"], dtype=np.float64)

    def encode(self, images):
        x = np.stack([resize(im, 256) for im in images]).astype(np.float32)
        out = self.module.signatures["encode"](x=self.tf.constant(x))
        return np.asarray(out["z_sample"] if "z_sample" in out else out["default"], dtype=np.float64)


def load_model(ref):
    if ref == "toy":
        return ToyModel()
    return HubModel(ref)


# ---- formats ---------------------------------------------------------------


def resize(img, side):
    if img.shape[0] == side and img.shape[1] == side:
        return img
    u8 = to_u8((img + 1.0) / 2.0)
    out = np.asarray(Image.fromarray(u8).resize((side, side), Image.BILINEAR), dtype=np.float64) / 255.0
    return out * 2.0 - 1.0


def to_u8(unit):
    return np.round(np.clip(unit, 0.0, 1.0) * 255.0).astype(np.uint8)


def generator_to_unit(x):
    return np.clip((x + 1.0) / 2.0, 0.0, 1.0)


def save_png(path, unit):
    Image.fromarray(to_u8(unit), mode="RGB").save(path)


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def read_directions(path, dim):
    rows = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append([float(v) for v in line.split()])
        except ValueError as e:
            raise BridgeError(f"{path}:{n}: {e}") from e
    if not rows:
        raise BridgeError(f"{path}: no directions")
    for n, r in enumerate(rows):
        if len(r) != dim:
            raise BridgeError(f"{path}: direction {n} has dimension {len(r)}, model latent dimension is {dim}")
    return np.array(rows)


def save_latents(z, out):
    z = np.asarray(z, dtype="<f4")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "latents.bin").write_bytes(z.tobytes(order="C"))
    write_json(out / "latents.json", {"n": int(z.shape[0]), "d": int(z.shape[1]), "dtype": "float32-le"})


def load_latents(path):
    d = Path(path)
    if d.is_file():
        d = d.parent
    meta = json.loads((d / "latents.json").read_text())
    n, dim = int(meta["n"]), int(meta["d"])
    raw = np.frombuffer((d / "latents.bin").read_bytes(), dtype="<f4")
    if raw.size != n * dim:
        raise BridgeError(f"latents.bin holds {raw.size * 4} bytes, expected {n * dim * 4}")
    return raw.reshape(n, dim).astype(np.float64)


def pair_id(seed, index):
    return f"s{seed}-{index:06d}"


# ---- operations ------------------------------------------------------------


def export_pairs(args, model=None):
    if args.count < 1:
        raise BridgeError("count must be >= 1")
    model = model or load_model(args.model)
    dirs = read_directions(args.directions, model.dim)
    if not 0 <= args.direction_index < len(dirs):
        raise BridgeError(f"direction index {args.direction_index} out of range (file has {len(dirs)})")
    h = dirs[args.direction_index]
    norm = np.linalg.norm(h)
    # unit direction times the scale, as the primary CLI scales directions
    shift = h / norm * args.scale if norm > 0 else h

    if args.latents:
        pool = load_latents(args.latents)
        if pool.shape[1] != model.dim:
            raise BridgeError(f"latents dimension {pool.shape[1]} does not match model dimension {model.dim}")
        if args.count > pool.shape[0]:
            raise BridgeError(f"count {args.count} exceeds the {pool.shape[0]} rows in {args.latents}")
        z = pool[: args.count]
    else:
        z = np.random.default_rng(args.seed).standard_normal((args.count, model.dim))

    out = Path(args.out)
    (out / "img").mkdir(parents=True, exist_ok=True)
    (out / "shift").mkdir(parents=True, exist_ok=True)
    samples = []
    for start in range(0, args.count, args.batch):
        zb = z[start : start + args.batch]
        a = generator_to_unit(model.generate(zb))
        b = generator_to_unit(model.generate(zb + shift))
        for k in range(len(zb)):
            sid = pair_id(args.seed, start + k)
            save_png(out / "img" / f"{sid}.png", a[k])
            save_png(out / "shift" / f"{sid}.png", b[k])
            samples.append({"id": sid, "image": f"img/{sid}.png", "shifted": f"shift/{sid}.png"})
    meta = {
        "source": "ganbridge",
        "model": args.model,
        "direction_index": str(args.direction_index),
        "scale": repr(float(args.scale)),
        "seed": str(args.seed),
    }
    write_json(out / "manifest.json", {"version": MANIFEST_VERSION, "samples": samples, "metadata": meta})
    write_json(
        out / "export_spec.json",
        {
            "model": args.model,
            "directions": str(args.directions),
            "direction_index": args.direction_index,
            "scale": args.scale,
            "latent_source": "latents" if args.latents else "prior",
            "latents": str(args.latents) if args.latents else None,
            "count": args.count,
            "seed": args.seed,
        },
    )
    return out


def encode_images(args, model=None):
    src = Path(args.images)
    if not src.is_dir():
        raise BridgeError(f"image directory not found: {src}")
    files = sorted(p for p in src.iterdir() if p.suffix.lower() in {".png", ".jpg", ".jpeg"})
    if not files:
        raise BridgeError(f"no images in {src}")
    images = []
    for f in files:
        try:
            with Image.open(f) as im:
                images.append(np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0 * 2.0 - 1.0)
        except OSError as e:
            raise BridgeError(f"unreadable image {f}: {e}") from e
    model = model or load_model(args.model)
    z = np.concatenate([model.encode(images[i : i + args.batch]) for i in range(0, len(images), args.batch)])
    save_latents(z, args.out)
    write_json(Path(args.out) / "encode_spec.json", {"model": args.model, "images": [f.name for f in files]})
    return Path(args.out)


# ---- command line ------------------------------------------------------------


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def build_parser():
    p = Parser(prog="ganbridge", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    e = sub.add_parser("export-pairs", help="write (G(z), G(z + s*h)) pairs")
    e.add_argument("--model", default="toy", help="toy, a hub handle or a local module path (default: toy)")
    e.add_argument("--directions", required=True, help="text file, one direction vector per line")
    e.add_argument("--direction-index", type=int, default=0, help="row of the directions file (default: 0)")
    e.add_argument("--scale", type=float, default=5.0, help="shift length (default: 5)")
    e.add_argument("--latents", help="latents directory to take z from instead of the prior")
    e.add_argument("--count", type=int, default=16, help="pairs to write (default: 16)")
    e.add_argument("--seed", type=int, default=0, help="prior sampling seed (default: 0)")
    e.add_argument("--batch", type=int, default=16, help="generator batch size (default: 16)")
    e.add_argument("--out", required=True, help="output dataset directory")

    c = sub.add_parser("encode", help="encode images into a latents matrix")
    c.add_argument("--model", default="toy", help="toy, a hub handle or a local module path (default: toy)")
    c.add_argument("--images", required=True, help="directory of images, encoded in filename order")
    c.add_argument("--batch", type=int, default=16, help="encoder batch size (default: 16)")
    c.add_argument("--out", required=True, help="output latents directory")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export-pairs":
            export_pairs(args)
        else:
            encode_images(args)
    except BridgeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
