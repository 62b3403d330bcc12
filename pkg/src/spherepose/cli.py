"""Command-line interface: generate | train | eval | viz | selftest.

Configuration precedence is explicit flags, then --config JSON file, then
built-in defaults that follow the reference setup (band limit 6,
projection recursion 2, 20 retained points, training grid recursion 3,
evaluation grid recursion 5, 8 channels, one SO(3) conv, 22.5 degree
filter support). Every artifact a command writes embeds its resolved
configuration. Relative output paths are placed under $SPHEREPOSE_OUT_DIR
when it is set.

Exit codes: 0 success, 1 validation error, 2 runtime failure.

Heavy imports happen inside commands so that --threads can pin the BLAS
pool before numpy loads. SPHEREPOSE_SELFTEST_FAULT is a testing hook:
setting it to "wigner" corrupts one rotation block inside selftest's
equivariance check, which must then fail by name.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

MODEL_DEFAULTS = {
    "band_limit": 6,
    "channels": 8,
    "n_so3_convs": 1,
    "projection": "spatial",
    "s2_filter": "fourier",
    "proj_recursion": 2,
    "n_keep": 20,
    "grid_recursion": 3,
    "filter_grid_recursion": 3,
    "support_angle_deg": 22.5,
    "encoder_channels": "16,32",
    "final_filter_scale": 0.01,
    "dtype": "float32",
}

TRAIN_DEFAULTS = {
    "lr": 0.015,
    "momentum": 0.9,
    "batch_size": 64,
    "epochs": 16,
    "lr_decay": 0.1,
    "decay_every": 8,
    "seed": 0,
    "max_steps": None,
    "checkpoint_every": 5,
    "grad_clip": None,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; bad flags are 1
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _out_path(path: str) -> str:
    base = os.environ.get("SPHEREPOSE_OUT_DIR", "")
    if base and not os.path.isabs(path):
        os.makedirs(base, exist_ok=True)
        return os.path.join(base, path)
    return path


def _merge(args: argparse.Namespace, defaults: dict, allowed=None) -> dict:
    """flags > config file > defaults; unknown file keys are rejected.

    ``allowed`` widens the set of accepted file keys when one config file
    feeds several defaults dicts; keys outside ``defaults`` are ignored here.
    """
    merged = dict(defaults)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(allowed if allowed is not None else defaults)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        merged.update({k: v for k, v in file_cfg.items() if k in defaults})
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _model_config(cfg: dict):
    from .model import ModelConfig

    enc = cfg["encoder_channels"]
    if isinstance(enc, str):
        enc = tuple(int(x) for x in enc.split(","))
    return ModelConfig(
        band_limit=cfg["band_limit"],
        channels=cfg["channels"],
        n_so3_convs=cfg["n_so3_convs"],
        projection=cfg["projection"],
        s2_filter_mode=cfg["s2_filter"],
        proj_recursion=cfg["proj_recursion"],
        n_keep=cfg["n_keep"],
        grid_recursion=cfg["grid_recursion"],
        filter_grid_recursion=cfg["filter_grid_recursion"],
        support_angle_deg=cfg["support_angle_deg"],
        encoder_channels=tuple(enc),
        final_filter_scale=cfg["final_filter_scale"],
        dtype=cfg["dtype"],
    )


# -- commands ----------------------------------------------------------------


def cmd_generate(args) -> int:
    import numpy as np

    from . import solids

    out = _out_path(args.out)
    ds = solids.generate(args.shape, args.n, np.random.default_rng(args.seed),
                         split=args.split)
    ds.save(out)
    digest = hashlib.sha256(open(out, "rb").read()).hexdigest()
    print(f"wrote {args.split} split: shape={args.shape} n={args.n} "
          f"seed={args.seed} -> {out}")
    print(f"sha256 {digest}")
    return 0


def cmd_train(args) -> int:
    import numpy as np

    from .model import Model
    from .solids import load_dataset
    from .trainer import TrainConfig, train

    both = set(MODEL_DEFAULTS) | set(TRAIN_DEFAULTS)
    model_cfg = _model_config(_merge(args, MODEL_DEFAULTS, allowed=both))
    t = _merge(args, TRAIN_DEFAULTS, allowed=both)
    train_cfg = TrainConfig(
        lr=t["lr"],
        momentum=t["momentum"],
        batch_size=t["batch_size"],
        epochs=t["epochs"],
        lr_decay=t["lr_decay"],
        decay_every=t["decay_every"],
        seed=t["seed"],
        max_steps=t["max_steps"],
        checkpoint_every=t["checkpoint_every"],
        grad_clip=t["grad_clip"],
    )
    dataset = load_dataset(args.dataset)
    model = Model(model_cfg, np.random.default_rng(train_cfg.seed))
    out = _out_path(args.out)
    log = _out_path(args.log) if args.log else None
    history = train(model, dataset, train_cfg, checkpoint_path=out,
                    log_path=log, verbose=args.verbose)
    print(f"trained {history[-1]['epoch']} epochs "
          f"({history[-1]['steps']} steps), final loss "
          f"{history[-1]['loss']:.4f} -> {out}")
    return 0


def cmd_eval(args) -> int:
    from .metrics import evaluate
    from .model import Model
    from .solids import load_dataset

    model = Model.load(args.checkpoint)
    dataset = load_dataset(args.dataset)
    report, _ = evaluate(model, dataset, grid_recursion=args.grid_recursion)
    out = _out_path(args.out)
    with open(out, "w") as fh:
        fh.write(report.to_json() + "\n")
    agg = report.aggregate
    print(f"n={agg.n} MedErr={agg.med_err_deg:.2f}deg Acc@15={agg.acc15:.3f} "
          f"Acc@30={agg.acc30:.3f} avg_log_lik={agg.avg_log_lik:.4f} -> {out}")
    return 0


def cmd_viz(args) -> int:
    import numpy as np

    from .grids import healpix_so3
    from .head import grid_basis, softmax_distribution
    from .model import Model
    from .solids import load_dataset
    from .viz import mollweide_svg

    model = Model.load(args.checkpoint)
    dataset = load_dataset(args.dataset)
    if not 0 <= args.index < len(dataset):
        raise ValueError(
            f"index {args.index} out of range for {len(dataset)} samples"
        )
    grid = healpix_so3(args.grid_recursion)
    sig, _ = model.forward_coeffs(dataset.images[args.index : args.index + 1], None)
    logits = sig[0, 0].astype(np.float64) @ grid_basis(grid, model.config.band_limit).T
    dist = softmax_distribution(logits, grid)
    gt = (dataset.equivalents[args.index] if dataset.split == "eval"
          else dataset.labels[args.index : args.index + 1])
    svg = mollweide_svg(dist, gt=gt, threshold=args.threshold)
    config_echo = json.dumps(
        {"checkpoint": json.loads(model.config.to_json()),
         "index": args.index, "grid_recursion": args.grid_recursion},
        sort_keys=True,
    )
    svg = svg.replace("\n", f"\n<!-- config: {config_echo} -->\n", 1)
    out = _out_path(args.out)
    with open(out, "w", encoding="ascii") as fh:
        fh.write(svg)
    print(f"wrote {out}")
    return 0


# -- selftest ----------------------------------------------------------------


def _selftest_checks(fault: str | None):
    import numpy as np

    from . import harmonics as hm
    from . import layers as ly
    from . import rotations as rot
    from .grids import healpix_s2, healpix_so3, quadrature_s2, quadrature_so3

    rng = np.random.default_rng(0)
    L = 3

    def grid_counts():
        for r in range(4):
            assert len(healpix_s2(r)) == 12 * 4**r
        assert len(healpix_so3(2)) == 4608

    def quaternion_roundtrip():
        q = rot.random_rotations(64, rng)
        back = rot.matrix_to_quat(rot.quat_to_matrix(q))
        err = np.minimum(np.abs(back - q).max(axis=1),
                         np.abs(back + q).max(axis=1))
        assert err.max() < 1e-12

    def s2_roundtrip():
        quad = quadrature_s2(L)
        c = hm.S2Coeffs(rng.standard_normal((2, hm.n_s2_coeffs(L))), L)
        back = hm.s2_fft(hm.s2_ifft(c, quad.points), quad, L)
        assert np.abs(back.data - c.data).max() < 1e-8

    def so3_roundtrip():
        quad = quadrature_so3(L)
        c = hm.SO3Coeffs(rng.standard_normal((2, hm.n_so3_coeffs(L))), L)
        back = hm.so3_fft(hm.so3_ifft(c, quad.rotations), quad, L)
        assert np.abs(back.data - c.data).max() < 1e-8

    def _maybe_corrupt(shifted):
        if fault == "wigner":
            sl = slice(1, 4)  # degree-1 block of an S^2 signal
            shifted.data[:, sl] *= 1.01
        return shifted

    def s2_conv_equivariance():
        sig = hm.S2Coeffs(rng.standard_normal((2, hm.n_s2_coeffs(L))), L)
        filt = ly.S2Filter.random(rng, 2, 2, L)
        g = rot.random_rotations(1, rng)
        lhs = ly.s2_conv(_maybe_corrupt(ly.rotate_signal(sig, g)), filt)
        rhs = ly.rotate_signal(ly.s2_conv(sig, filt), g)
        assert np.abs(lhs.data - rhs.data).max() < 1e-6

    def so3_conv_equivariance():
        sig = hm.SO3Coeffs(rng.standard_normal((2, hm.n_so3_coeffs(L))), L)
        filt = ly.SO3Filter.random(rng, 2, 1, L, healpix_so3(2))
        g = rot.random_rotations(1, rng)
        lhs = ly.so3_conv(ly.rotate_signal(sig, g), filt)
        rhs = ly.rotate_signal(ly.so3_conv(sig, filt), g)
        assert np.abs(lhs.data - rhs.data).max() < 1e-6

    def relu_equivariance():
        quad = quadrature_so3(2 * L)
        sig = hm.SO3Coeffs(rng.standard_normal((1, hm.n_so3_coeffs(L))), L)
        g = rot.random_rotations(1, rng)
        lhs = ly.spatial_relu(ly.rotate_signal(sig, g), quad)
        rhs = ly.rotate_signal(ly.spatial_relu(sig, quad), g)
        rel = np.linalg.norm(lhs.data - rhs.data) / np.linalg.norm(rhs.data)
        assert rel < 0.05

    def gradient_check():
        from . import head as hd
        from .grids import nearest_index
        from .model import Model, ModelConfig

        config = ModelConfig(
            band_limit=2, channels=4, n_so3_convs=1, proj_recursion=2,
            n_keep=12, grid_recursion=0, filter_grid_recursion=2,
            image_size=8, encoder_channels=(4, 6), final_filter_scale=1.0,
            dtype="float64",
        )
        model = Model(config, np.random.default_rng(42))
        pert = np.random.default_rng(5)
        for arr in model.params.values():
            arr += 0.05 * pert.standard_normal(arr.shape)
        images = np.random.default_rng(11).standard_normal((2, 3, 8, 8))
        targets = nearest_index(
            model.grid, rot.random_rotations(2, np.random.default_rng(11))
        )

        def loss():
            logits, cache = model.forward(images, None)
            losses, dl = hd.cross_entropy_batch(logits, targets)
            return float(losses.mean()), cache, dl

        _, cache, dl = loss()
        grads = model.backward(cache, dl / 2)
        eps = 1e-5
        pick = np.random.default_rng(7)
        for name, arr in model.params.items():
            j = int(pick.choice(arr.size))
            old = arr.flat[j]
            arr.flat[j] = old + eps
            lp = loss()[0]
            arr.flat[j] = old - eps
            lm = loss()[0]
            arr.flat[j] = old
            num = (lp - lm) / (2 * eps)
            ana = grads[name].flat[j]
            assert abs(num - ana) <= 1e-3 * max(abs(num), abs(ana), 1e-8)

    return [
        ("grid-counts", grid_counts),
        ("quaternion-roundtrip", quaternion_roundtrip),
        ("s2-roundtrip", s2_roundtrip),
        ("so3-roundtrip", so3_roundtrip),
        ("s2-conv-equivariance", s2_conv_equivariance),
        ("so3-conv-equivariance", so3_conv_equivariance),
        ("relu-equivariance", relu_equivariance),
        ("gradient-check", gradient_check),
    ]


def cmd_selftest(args) -> int:
    fault = os.environ.get("SPHEREPOSE_SELFTEST_FAULT")
    failures = []
    for name, check in _selftest_checks(fault):
        try:
            check()
            print(f"{name:24s} PASS")
        except Exception as exc:  # noqa: BLE001 - report and keep going
            failures.append(name)
            print(f"{name:24s} FAIL ({exc.__class__.__name__})")
    if failures:
        print(f"FAILED: {', '.join(failures)}")
        return 2
    print("all checks passed")
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spherepose",
                     description="rotation-distribution pose toolkit")
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS worker threads (set before numpy loads)")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a synthetic solid dataset")
    g.add_argument("--shape", required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--split", choices=("train", "eval"), default="train")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on a dataset file")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--log", default=None, help="JSONL metrics path")
    t.add_argument("--config", default=None, help="JSON file of defaults")
    t.add_argument("--verbose", action="store_true")
    t.add_argument("--band-limit", "-L", dest="band_limit", type=int)
    t.add_argument("--channels", type=int)
    t.add_argument("--n-so3-convs", dest="n_so3_convs", type=int,
                   choices=(0, 1, 2))
    t.add_argument("--projection", choices=("spatial", "fourier"))
    t.add_argument("--s2-filter", dest="s2_filter",
                   choices=("fourier", "spatial"))
    t.add_argument("--proj-recursion", dest="proj_recursion", type=int)
    t.add_argument("--n-keep", dest="n_keep", type=int)
    t.add_argument("--grid-recursion", dest="grid_recursion", type=int)
    t.add_argument("--filter-grid-recursion", dest="filter_grid_recursion",
                   type=int)
    t.add_argument("--support-angle-deg", dest="support_angle_deg", type=float)
    t.add_argument("--encoder-channels", dest="encoder_channels",
                   help="comma-separated, e.g. 16,32")
    t.add_argument("--final-filter-scale", dest="final_filter_scale",
                   type=float)
    t.add_argument("--dtype", choices=("float32", "float64"))
    t.add_argument("--lr", type=float)
    t.add_argument("--momentum", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr-decay", dest="lr_decay", type=float)
    t.add_argument("--grad-clip", dest="grad_clip", type=float)
    t.add_argument("--decay-every", dest="decay_every", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--max-steps", dest="max_steps", type=int)
    t.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on an eval dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--grid-recursion", dest="grid_recursion", type=int,
                   default=5)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("viz", help="render one sample's distribution as SVG")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--dataset", required=True)
    v.add_argument("--index", type=int, required=True)
    v.add_argument("--grid-recursion", dest="grid_recursion", type=int,
                   default=3)
    v.add_argument("--threshold", type=float, default=None)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_viz)

    s = sub.add_parser("selftest", help="run the fast invariant suite")
    s.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.threads is not None:
            if args.threads < 1:
                raise ValueError("--threads must be at least 1")
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                        "MKL_NUM_THREADS"):
                os.environ[var] = str(args.threads)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failure boundary
        print(f"runtime failure: {exc.__class__.__name__}: {exc}",
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
