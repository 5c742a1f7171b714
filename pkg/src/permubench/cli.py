"""Command-line entry points.

Subcommands: run (train/evaluate matrix cells), report (render tables and
rank/retention files), inject (build a record store from per-cell means),
corrupt (dump corrupted images to NPY), attack (dump adversarial images),
selftest (data-free invariant battery).  Exit codes: 0 ok, 1 runtime
failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import orchestrator
from .errors import PermubenchError, UsageError


def _csv_list(text):
    return [t for t in text.split(",") if t]


def _csv_ints(text):
    try:
        return [int(t) for t in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="permubench",
                                     description="few-shot robustness benchmark runner")
    sub = parser.add_subparsers(dest="command", required=True)

    def scope_flags(p, regimes=True):
        p.add_argument("--config", help="JSON run-config file; flags override its values")
        p.add_argument("--data-dir", help="directory holding <dataset>.npz files")
        p.add_argument("--out-dir", help="record store / output directory")
        p.add_argument("--models", type=_csv_list, help="comma-separated model names")
        p.add_argument("--datasets", type=_csv_list, help="comma-separated dataset names")
        p.add_argument("--seeds", type=_csv_ints, help="comma-separated run seeds")
        if regimes:
            p.add_argument("--regimes", type=_csv_list,
                           help="subset of clean,corruption,fgsm,pgd")

    run = sub.add_parser("run", help="execute the benchmark matrix (or a slice)")
    scope_flags(run)
    run.add_argument("--jobs", type=int, help="parallel worker processes")

    rep = sub.add_parser("report", help="render report files from a record store")
    rep.add_argument("--out-dir", required=True, help="directory holding records.csv")
    rep.add_argument("--report-dir", help="where to write reports (default: store dir)")

    inj = sub.add_parser("inject", help="build a record store from per-cell means")
    inj.add_argument("--means", required=True, help="CSV: dataset,model,regime,metric,value")
    inj.add_argument("--out-dir", required=True)
    inj.add_argument("--seeds", type=_csv_ints)

    cor = sub.add_parser("corrupt", help="dump corrupted test images to NPY")
    scope_flags(cor, regimes=False)
    cor.add_argument("--count", type=int, default=16, help="images per setting")

    atk = sub.add_parser("attack", help="train briefly and dump adversarial images to NPY")
    scope_flags(atk, regimes=False)
    atk.add_argument("--count", type=int, default=32, help="images per epsilon")

    sub.add_parser("selftest", help="run the data-free invariant battery")
    return parser


def _cmd_run(args) -> int:
    cfg = orchestrator.load_config(args.config, data_dir=args.data_dir,
                                   out_dir=args.out_dir, models=args.models,
                                   datasets=args.datasets, seeds=args.seeds,
                                   regimes=args.regimes, jobs=args.jobs)
    result = orchestrator.run_matrix(cfg)
    print(f"completed {result['completed']} cells, skipped {result['skipped']}, "
          f"failed {len(result['failures'])}")
    return 1 if result["failures"] else 0


def _cmd_report(args) -> int:
    written = orchestrator.report(args.out_dir, args.report_dir)
    for path in written:
        print(path)
    return 0


def _cmd_inject(args) -> int:
    seeds = tuple(args.seeds) if args.seeds else orchestrator.DEFAULT_SEEDS
    count = orchestrator.inject(args.means, args.out_dir, seeds=seeds)
    print(f"wrote {count} records to {os.path.join(args.out_dir, orchestrator.RECORDS_NAME)}")
    return 0


def _safe(setting: str) -> str:
    return setting.replace(":", "_").replace("/", "over")


def _cmd_corrupt(args) -> int:
    from . import corruptions, data

    data_dir = data.find_data_dir(args.data_dir)
    if data_dir is None:
        raise UsageError("no data directory: pass --data-dir or set PERMUBENCH_DATA_DIR")
    if not args.out_dir:
        raise UsageError("corrupt needs --out-dir")
    names = args.datasets or list(data.DATASET_NAMES)
    os.makedirs(args.out_dir, exist_ok=True)
    for name in names:
        ds = data.load_npz(data.dataset_path(data_dir, name), name=name)
        take = ds.test.take(np.arange(min(args.count, len(ds.test))))
        np.save(os.path.join(args.out_dir, f"{name}_clean.npy"), take.images)
        for cspec in corruptions.corruption_grid():
            out = corruptions.apply(cspec, take)
            np.save(os.path.join(args.out_dir, f"{name}_{_safe(cspec.setting)}.npy"),
                    out.images)
        print(f"{name}: wrote clean + 15 corrupted batches of {len(take)}")
    return 0


def _cmd_attack(args) -> int:
    from . import attacks, data, models
    from .trainer import TrainData, train

    cfg = orchestrator.load_config(args.config, data_dir=args.data_dir,
                                   out_dir=args.out_dir, models=args.models,
                                   datasets=args.datasets, seeds=args.seeds)
    os.makedirs(cfg.out_dir, exist_ok=True)
    for model, dataset, seed in cfg.cells():
        ds = data.load_npz(data.dataset_path(cfg.data_dir, dataset), name=dataset)
        spec = models.default_spec(model, ds.num_classes)
        params, _ = train(spec, TrainData.from_dataset(ds), cfg.train, seed)
        run_spec = dataclasses.replace(spec, seed=seed)
        fwd = lambda p, x: models.forward(run_spec, p, x)
        take = ds.test.take(np.arange(min(args.count, len(ds.test))))
        for kind in ("fgsm", "pgd"):
            for aspec in attacks.attack_grid(kind):
                adv = attacks.attack_batch(aspec, fwd, params, take)
                name = f"{dataset}_{model}_s{seed}_{_safe(aspec.setting)}.npy"
                np.save(os.path.join(cfg.out_dir, name), adv.images)
        print(f"{dataset}/{model}/seed {seed}: wrote 8 adversarial batches of {len(take)}")
    return 0


def _selftest_checks():
    from . import aggregate, attacks, autodiff as ad, corruptions, jpeg, kernels
    from . import metrics, models, rng
    from .data import ImageBatch
    from .trainer import adam_step, init_adam

    def check_rng():
        assert rng.splitmix_next(0)[0] == 0xE220A8397B1DCDAF
        s = rng.PermStream(1234)
        assert s.below(10) in range(10)
        perm = rng.PermStream(7).permutation(50)
        assert sorted(perm) == list(range(50))
        first = rng.PermStream(99)
        bulk = kernels.bulk_u64(99, 3000)
        assert all(first.next_u64() == int(bulk[i]) for i in range(3000))

    def check_autodiff():
        gamma = ad.Tensor(np.ones(4, dtype=np.float64))
        beta = ad.Tensor(np.zeros(4, dtype=np.float64))
        w = ad.Tensor(np.full((4, 2), 0.3, dtype=np.float64), requires_grad=True)
        labels = np.array([0, 1, 0])

        def f(arr):
            h = ad.layernorm(ad.Tensor(arr), gamma, beta)
            return ad.cross_entropy(ad.matmul(ad.gelu(h), w.detach()), labels)

        x64 = ad.Tensor(np.linspace(-1.0, 1.0, 12, dtype=np.float64).reshape(3, 4),
                        requires_grad=True)
        loss = ad.cross_entropy(
            ad.matmul(ad.gelu(ad.layernorm(x64, gamma, beta)), w), labels)
        ad.backward(loss)
        grad = x64.grad.copy()
        eps = 1e-6
        flat = x64.data.reshape(-1)
        for idx in (0, 5, 11):
            orig = flat[idx]
            vals = []
            for delta in (eps, -eps):
                flat[idx] = orig + delta
                with ad.no_grad():
                    vals.append(float(f(x64.data).data))
                flat[idx] = orig
            fd = (vals[0] - vals[1]) / (2 * eps)
            assert abs(grad.reshape(-1)[idx] - fd) < 1e-7 * max(1.0, abs(fd))

    def check_models():
        img = (kernels.bulk_u64(0xCAFE, 2 * 28 * 28 * 3).astype(np.float64)
               * 2.0 ** -64).astype(np.float32).reshape(2, 28, 28, 3)
        for arch in ("zachvit", "abmil", "transmil"):
            spec = models.default_spec(arch, 3)
            params = models.build(spec)
            with ad.no_grad():
                base = models.forward(spec, params, img).data
            for k in range(5):
                perm = rng.PermStream(k + 1).permutation(49)
                shuffled = _permute_patches(img, 4, perm)
                with ad.no_grad():
                    out = models.forward(spec, params, shuffled).data
                assert np.max(np.abs(out - base)) < 1e-5, arch
        spec = models.default_spec("minimalvit", 3)
        params = models.build(spec)
        with ad.no_grad():
            base = models.forward(spec, params, img).data
        deltas = []
        for k in range(20):
            perm = rng.PermStream(k + 1).permutation(49)
            with ad.no_grad():
                out = models.forward(spec, params, _permute_patches(img, 4, perm)).data
            deltas.append(float(np.max(np.abs(out - base))))
        assert max(deltas) > 1e-3

    def check_corruptions():
        corruptions.validate_table(corruptions.DEFAULT_TABLE)
        img = (kernels.bulk_u64(3, 64 * 28 * 28 * 3).astype(np.float64)
               * 2.0 ** -64).astype(np.float32).reshape(64, 28, 28, 3)
        batch = ImageBatch(images=img, labels=np.zeros(64, dtype=np.int64),
                           ids=np.arange(64, dtype=np.int64))
        for cspec in corruptions.corruption_grid():
            a = corruptions.apply(cspec, batch)
            b = corruptions.apply(cspec, batch)
            assert a.images.tobytes() == b.images.tobytes(), cspec.setting
            assert a.images.min() >= 0.0 and a.images.max() <= 1.0, cspec.setting
        spec = corruptions.CorruptionSpec("gaussian_noise", 2)
        field = corruptions.noise_field(spec, batch)
        sigma2 = corruptions.DEFAULT_TABLE["gaussian_noise"][2] ** 2
        assert abs(field.var() - sigma2) < 0.1 * sigma2

    def check_jpeg():
        flat = np.full((1, 16, 16, 3), 0.5, dtype=np.float32)
        out = jpeg.roundtrip(flat[0], 100)
        assert np.all(np.abs(out - 0.5) < 2 / 255)

    def check_attacks():
        spec = models.ModelSpec(arch="zachvit", num_classes=2, input=(8, 8, 3),
                                patch_size=4, embed_dims=(8, 12, 16), depth=1,
                                heads=4, mlp_ratio=2.0, seed=0)
        params = models.build(spec)
        fwd = lambda p, x: models.forward(spec, p, x)
        img = (kernels.bulk_u64(11, 8 * 8 * 8 * 3).astype(np.float64)
               * 2.0 ** -64).astype(np.float32).reshape(8, 8, 8, 3)
        batch = ImageBatch(images=img, labels=np.arange(8, dtype=np.int64) % 2,
                           ids=np.arange(8, dtype=np.int64))
        eps = 8 / 255
        for fn in (attacks.fgsm, attacks.pgd):
            adv = fn(fwd, params, batch, eps)
            delta = np.abs(adv.images.astype(np.float64) - img.astype(np.float64))
            assert delta.max() <= eps + 1e-7
            assert adv.images.min() >= 0.0 and adv.images.max() <= 1.0

    def check_metrics():
        assert metrics.auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
        assert abs(metrics.macro_f1([0, 1, 1], [0, 1, 2], 3) - 5 / 9) < 1e-12

    def check_aggregate():
        vals = dict(zip(aggregate.expected_settings("fgsm"), (0.2, 0.16, 0.12, 0.08)))
        recs = [aggregate.MetricRecord("d", "m", 3, "fgsm", s, "auc", v)
                for s, v in vals.items()]
        assert abs(aggregate.regime_mean_per_seed(recs, "d", "m", 3, "fgsm") - 0.14) < 1e-15

    def check_adam():
        p = {"w": ad.Tensor(np.array([1.0]), requires_grad=True)}
        state = init_adam(p)
        adam_step(p, {"w": np.array([0.5])}, state, lr=0.1)
        expected = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8)
        assert abs(float(p["w"].data[0]) - expected) < 1e-12

    return [("rng streams", check_rng), ("autodiff gradients", check_autodiff),
            ("model permutation behavior", check_models),
            ("corruption determinism and closure", check_corruptions),
            ("jpeg roundtrip", check_jpeg), ("attack ball constraints", check_attacks),
            ("metrics examples", check_metrics), ("aggregation arithmetic", check_aggregate),
            ("adam step", check_adam)]


def _permute_patches(images, patch, perm):
    b, h, w, c = images.shape
    gh, gw = h // patch, w // patch
    tiles = images.reshape(b, gh, patch, gw, patch, c).transpose(0, 1, 3, 2, 4, 5)
    tiles = tiles.reshape(b, gh * gw, patch, patch, c)[:, perm]
    tiles = tiles.reshape(b, gh, gw, patch, patch, c).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(tiles.reshape(b, h, w, c))


def _cmd_selftest(args) -> int:
    failures = 0
    for name, check in _selftest_checks():
        try:
            check()
            print(f"ok - {name}")
        except Exception as exc:
            failures += 1
            print(f"FAIL - {name}: {exc!r}")
    print(f"{failures} failures" if failures else "all checks passed")
    return 1 if failures else 0


_HANDLERS = {
    "run": _cmd_run,
    "report": _cmd_report,
    "inject": _cmd_inject,
    "corrupt": _cmd_corrupt,
    "attack": _cmd_attack,
    "selftest": _cmd_selftest,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PermubenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
