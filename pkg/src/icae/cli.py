"""Command-line pipeline: gen -> units -> train -> convert -> verify."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import formats
from .config import ExperimentConfig, config_dict, parse_config, serialize_config
from .errors import IcaeError
from .genproc import FrameDataset, ParallelPairs, make_spec, sample_dataset
from .indep import DELTA, RBF, hsic_permutation_test
from .model import IcaeModel, LabelScale, TrainConfig, convert, train
from .numkit import make_rng, sub_seed
from .units import asymmetry_check, build_proxy
from .verify import check_error_bound, check_injectivity, check_t_consistency

log = logging.getLogger("icae")

STAGES = ("gen", "units", "train", "convert", "verify")
SEED_SLOTS = {"spec": 0, "data": 1, "eval": 2, "units": 3, "init": 4, "train": 5, "hsic": 6, "verify": 7}

EXIT_OK, EXIT_ERROR, EXIT_CHECK_FAILED = 0, 1, 3

DATASET = "dataset.icae"
EVAL_SRC = "eval_src.icae"
EVAL_TGT = "eval_tgt.icae"
UNITS = "units.icau"
DATASET_UNITS = "dataset_units.icae"
MODEL = "model.icap"
CONVERTED = "converted.icae"


def stage_seeds(seed: int) -> dict:
    return {name: sub_seed(seed, slot) for name, slot in SEED_SLOTS.items()}


def spec_from_config(cfg: ExperimentConfig):
    return make_spec(
        cfg.k_s, cfg.k_c, cfg.d_u, cfg.d_c, cfg.mixing, stage_seeds(cfg.seed)["spec"],
        alpha=cfg.alpha, ratio=cfg.prior_ratio,
    )


def _json(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n").encode()


class Outputs:
    """Writes artifacts atomically and remembers them for cleanup on failure."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.written: list[Path] = []

    def path(self, name: str) -> Path:
        return self.root / name

    def write(self, name: str, data: bytes) -> Path:
        target = self.root / name
        tmp = target.with_name(target.name + ".part")
        tmp.write_bytes(data)
        os.replace(tmp, target)
        self.written.append(target)
        return target

    def cleanup(self):
        for p in self.written:
            p.unlink(missing_ok=True)
            p.with_name(p.name + ".part").unlink(missing_ok=True)
        self.written.clear()


def _csv(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode()


def _load_pairs(out: Outputs):
    if not (out.path(EVAL_SRC).exists() and out.path(EVAL_TGT).exists()):
        return None
    return ParallelPairs.from_datasets(
        formats.load_dataset(out.path(EVAL_SRC)), formats.load_dataset(out.path(EVAL_TGT))
    )


def stage_gen(cfg: ExperimentConfig, out: Outputs) -> dict:
    seeds = stage_seeds(cfg.seed)
    if cfg.synthetic:
        spec = spec_from_config(cfg)
        ds, _ = sample_dataset(spec, cfg.n_train, seeds["data"])
        _, pairs = sample_dataset(spec, 1, seeds["eval"], n_pairs=cfg.n_eval)
        src, tgt = pairs.as_datasets()
        out.write(EVAL_SRC, formats.dataset_to_bytes(src))
        out.write(EVAL_TGT, formats.dataset_to_bytes(tgt))
        info = {
            "source": "synthetic",
            "prior": spec.prior.tolist(),
            "gap_min": spec.gap_min,
            "data_std": float(ds.x.std()),
        }
    else:
        ds = formats.ingest_external(cfg.input_path, fmt=cfg.input_format)
        info = {"source": cfg.input_path}
    out.write(DATASET, formats.dataset_to_bytes(ds))
    info.update({"n": ds.n, "d_x": ds.d_x, "d_c": ds.d_c})
    out.write("gen.json", _json(info))
    return {"gen": True}


def stage_units(cfg: ExperimentConfig, out: Outputs) -> dict:
    seeds = stage_seeds(cfg.seed)
    ds = formats.load_dataset(out.path(DATASET))
    units, labelled = build_proxy(ds, cfg.units, "most", seeds["units"], label_order=cfg.label_order)
    out.write(UNITS, formats.units_to_bytes(units))
    out.write(DATASET_UNITS, formats.dataset_to_bytes(labelled))
    asym = asymmetry_check(units, cfg.gap_tol)
    out.write("asymmetry.json", _json({
        **asym.to_dict(), "k": units.k, "ref_cond": units.ref_cond,
        "prior_hist": units.prior_hist.tolist(), "seed": seeds["units"],
    }))
    rng = make_rng(seeds["hsic"])
    m = min(cfg.hsic_n, labelled.n)
    idx = np.sort(rng.choice(labelled.n, m, replace=False))
    proxy = hsic_permutation_test(
        labelled.proxy_s[idx], labelled.cond_id[idx], DELTA, DELTA, cfg.n_perm, seeds["hsic"]
    )
    contrast = hsic_permutation_test(
        labelled.x[idx], labelled.cond_id[idx], RBF, DELTA, cfg.n_perm, seeds["hsic"]
    )
    out.write("hsic.json", _json({"proxy_vs_condition": proxy.to_dict(), "x_vs_condition": contrast.to_dict()}))
    return {
        "asymmetry": asym.passed,
        "proxy_independent": proxy.p_value > cfg.hsic_alpha,
        "x_dependent": contrast.p_value <= cfg.hsic_alpha,
    }


def stage_train(cfg: ExperimentConfig, out: Outputs) -> dict:
    seeds = stage_seeds(cfg.seed)
    ds = formats.load_dataset(out.path(DATASET_UNITS))
    k = formats.load_units(out.path(UNITS)).k
    model = IcaeModel.init(
        ds.d_x, ds.d_c, k, seeds["init"], d_latent=cfg.d_latent, hidden=cfg.hidden_dims,
        activation=cfg.activation, label_scale=LabelScale.for_units(k, cfg.target_spacing),
    )
    tcfg = TrainConfig(
        lam=cfg.lam, lr=cfg.lr, batch_size=min(cfg.batch_size, ds.n), epochs=cfg.epochs,
        seed=seeds["train"], lr_schedule=cfg.lr_schedule,
    )
    res = train(model, ds, tcfg, verbose=lambda e, r, i: log.info("epoch %d recon %.6g indep %.6g", e, r, i))
    out.write(MODEL, formats.model_to_bytes(res.model))
    out.write("loss_trace.csv", _csv(["epoch", "recon", "indep", "total"], [
        [e, repr(float(r)), repr(float(i)), repr(float(t))] for e, r, i, t in res.trace
    ]))
    return {"train": True}


def stage_convert(cfg: ExperimentConfig, out: Outputs) -> dict:
    model = formats.load_model(out.path(MODEL))
    pairs = _load_pairs(out)
    if pairs is None:
        log.info("no evaluation pairs; convert stage skipped")
        return {}
    conv = convert(model, pairs.x_src, pairs.c_tgt)
    ds = FrameDataset(conv, pairs.c_tgt, cond_id=pairs.cond_tgt, true_s=pairs.shared_s)
    out.write(CONVERTED, formats.dataset_to_bytes(ds))
    return {"convert": True}


def stage_verify(cfg: ExperimentConfig, out: Outputs) -> dict:
    seeds = stage_seeds(cfg.seed)
    model = formats.load_model(out.path(MODEL))
    pairs = _load_pairs(out)
    checks = {}
    summary = {"config": config_dict(cfg), "seeds": stage_seeds(cfg.seed)}
    if pairs is not None:
        rep = check_error_bound(model, pairs, seeds["verify"], cfg.lipschitz_pairs)
        out.write("error_bound.json", _json({**rep.to_dict(), "config": config_dict(cfg)}))
        out.write("conversion_errors.csv", _csv(
            ["pair", "shared_s", "cond_src", "cond_tgt", "conv_error", "recon_error_tgt", "baseline"],
            [[i, int(pairs.shared_s[i]), int(pairs.cond_src[i]), int(pairs.cond_tgt[i]),
              repr(float(rep.conv_errors[i])), repr(float(rep.recon_errors[i])), repr(float(b))]
             for i, b in enumerate(((pairs.x_src - pairs.x_tgt) ** 2).sum(1))],
        ))
        base = ((pairs.x_src - pairs.x_tgt) ** 2).sum(1)
        summary["conversion"] = {
            "recon_rmse": float(np.sqrt(rep.recon_errors.mean() / pairs.x_tgt.shape[1])),
            "median_recon_error": float(np.median(rep.recon_errors)),
            "median_conv_error": float(np.median(rep.conv_errors)),
            "median_baseline": float(np.median(base)),
            "holds_fraction": rep.holds_fraction,
        }
        checks["error_bound"] = rep.holds_fraction == 1.0
    if cfg.synthetic:
        spec = spec_from_config(cfg)
        ref = int(formats.load_units(out.path(UNITS)).ref_cond)
        inj = check_injectivity(model, spec, ref, cfg.margin_tol)
        tc = check_t_consistency(model, spec, cfg.spread_tol)
        out.write("injectivity.json", _json(inj.to_dict()))
        out.write("t_consistency.json", _json(tc.to_dict()))
        checks["injectivity"] = inj.passed
        checks["t_consistency"] = not tc.flagged
        summary["injectivity_margin"] = inj.min_margin
        summary["spread_ratio"] = tc.spread_ratio
    summary["checks"] = checks
    out.write("summary.json", _json(summary))
    return checks


RUNNERS = {
    "gen": stage_gen,
    "units": stage_units,
    "train": stage_train,
    "convert": stage_convert,
    "verify": stage_verify,
}


def run_pipeline(cfg: ExperimentConfig, stages, out_dir) -> int:
    """Run the requested stages in order; returns the process exit status."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    out = Outputs(root)
    checks = {}
    try:
        out.write("config.txt", serialize_config(cfg).encode())
        for stage in stages:
            log.info("stage %s", stage)
            checks.update(RUNNERS[stage](cfg, out))
    except (IcaeError, FileNotFoundError, ValueError) as exc:
        out.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    failed = sorted(k for k, ok in checks.items() if not ok)
    if failed:
        print("checks failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="icae", description=__doc__)
    p.add_argument("stage", choices=STAGES + ("all",))
    p.add_argument("--config", type=Path, help="key = value configuration file")
    p.add_argument("--out", type=Path, default=Path("icae_out"), help="output directory")
    p.add_argument("--seed", type=int, help="overrides the configured seed")
    p.add_argument("--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr
    )
    try:
        cfg = parse_config(args.config.read_text(encoding="utf-8")) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg = cfg.with_overrides(seed=args.seed)
    except (IcaeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    stages = STAGES if args.stage == "all" else (args.stage,)
    return run_pipeline(cfg, stages, args.out)


if __name__ == "__main__":
    sys.exit(main())
