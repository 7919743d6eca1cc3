"""``latentflow`` command-line entry point.

Exit codes: 0 success, 1 validation, 2 runtime divergence, 3 IO.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import data_io
from .config import COMMANDS, ConfigError, RunSpec, parse_config
from .data_io import Checkpoint, CheckpointError
from .flows import PosteriorSpec
from .ndtensor import Rng, grad_check
from .objectives import (
    ConfigurationError,
    NonFiniteElbo,
    TrainConfig,
    TrainingDiverged,
    Vae,
    elbo_estimate,
    elbo_objective,
    exact_marginal_linear_gaussian,
    free_bits_objective,
    init_params,
    iwae_loglik_estimate,
    iwae_objective,
    kl_annealed_elbo,
    model_sample,
    per_sample_variational_gradients,
    train_aevb,
)

log = logging.getLogger("latentflow")

EXIT_OK, EXIT_VALIDATION, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3
STREAM_CLI_EVAL = 11
STREAM_CLI_SAMPLE = 12
STREAM_CLI_COMPARE = 13
GRADCHECK_TOL = 1e-5


# --- construction helpers -----------------------------------------------------

def load_dataset(v: dict) -> data_io.Dataset:
    name = v["dataset"]
    if name == "toy4":
        return data_io.make_toy_four_points()
    if name == "lingauss":
        r = Rng(v["data_seed"]).substream(1)
        W = r.substream(0).normal((v["lingauss_dim"], v["lingauss_latent"]))
        return data_io.make_linear_gaussian_synthetic(W, v["obs_sigma"], v["lingauss_n"], r.substream(1))
    raw = data_io.load_idx(name[4:])
    raw = raw.reshape(raw.shape[0], -1)
    if v["binarize"] == "none":
        return data_io.Dataset(raw, "continuous")
    return data_io.binarize(raw, v["binarize"], Rng(v["data_seed"]).substream(2))


def likelihood_for(v: dict, data: data_io.Dataset) -> str:
    if v["likelihood"] != "auto":
        return v["likelihood"]
    return "bernoulli" if data.kind == "binary" else "gaussian"


def posterior_spec(v: dict) -> PosteriorSpec:
    kind = v["posterior"]
    steps = {"iaf": v["iaf_steps"], "planar": v["planar_steps"]}.get(kind, 1)
    return PosteriorSpec(kind, v["latent_dim"], steps, v["context_dim"] if kind == "iaf" else 0,
                         list(v["made_hidden"]), v["iaf_gated"], v["iaf_reverse"])


def build_vae(v: dict, data: data_io.Dataset) -> Vae:
    return Vae.build(data.dim, posterior_spec(v), hidden=list(v["hidden"]),
                     likelihood=likelihood_for(v, data), obs_sigma=v["obs_sigma"])


def train_config(v: dict) -> TrainConfig:
    return TrainConfig(steps=v["steps"], batch_size=v["batch_size"], free_bits=v["free_bits"],
                       free_bits_groups=v["free_bits_groups"], anneal_steps=v["anneal_steps"],
                       optimizer=v["optimizer"], lr=v["lr"], seed=v["seed"], iwae_samples=v["L"],
                       eval_every=v["eval_every"], patience=v["patience"])


def worker_count() -> int:
    raw = os.environ.get("LATENTFLOW_THREADS", "")
    try:
        n = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError:
        raise ConfigError("LATENTFLOW_THREADS", f"not an integer: {raw!r}") from None
    return max(1, n)


EVAL_KEYS = ("seed", "L", "n_samples", "sample_means", "estimator_samples")


def _load_model(spec: RunSpec):
    """Model, parameters and data for the evaluation commands."""
    if spec.checkpoint is not None:
        ck = data_io.load_checkpoint(spec.checkpoint)
        v = dict(ck.config)
        # architecture and data come from the checkpoint, evaluation knobs from the command
        v.update({k: spec[k] for k in EVAL_KEYS})
        data = load_dataset(v)
        return build_vae(v, data), ck.params, data, v
    v = spec.values
    data = load_dataset(v)
    vae = build_vae(v, data)
    return vae, init_params(vae, v["seed"]), data, v


def _emit(spec: RunSpec, payload: dict, lines: list[str]):
    if spec.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print("\n".join(lines))


# --- commands -----------------------------------------------------------------

def cmd_train(spec: RunSpec) -> int:
    v = dict(spec.values)
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    params = opt_state = None
    start, hold_hist, prior_rows = 0, [], []
    if spec.resume is not None:
        ck = data_io.load_checkpoint(spec.resume)
        saved = dict(ck.config)
        for key in ("steps", "eval_every", "patience"):
            saved[key] = v[key]
        v = saved
        params, opt_state, start, hold_hist = ck.params, ck.opt_state, ck.step, ck.holdout_history
        metrics_path = out / "metrics.csv"
        if metrics_path.is_file():
            prior_rows = [r for r in data_io.read_metrics(metrics_path) if r["step"] <= start]
    data = load_dataset(v)
    train, holdout = data.items, None
    if v["holdout_fraction"] > 0:
        train, holdout = data.split(v["holdout_fraction"])
    vae = build_vae(v, data)
    cfg = train_config(v)
    try:
        res = train_aevb(train, vae, cfg, params=params, opt_state=opt_state, start_step=start,
                         holdout=holdout, holdout_history=hold_hist)
    except TrainingDiverged as exc:
        _save(out / "checkpoint.lfc", v, exc.params, exc.opt_state, exc.step, hold_hist)
        data_io.write_metrics(out / "metrics.csv", prior_rows + exc.history)
        print(f"error: {exc}; last good state saved to {out / 'checkpoint.lfc'}", file=sys.stderr)
        return EXIT_DIVERGED
    data_io.write_metrics(out / "metrics.csv", prior_rows + res.history)
    _save(out / "checkpoint.lfc", v, res.params, res.opt_state, res.step, res.holdout_history)
    ev = Rng(cfg.seed).substream(STREAM_CLI_EVAL)
    final_train = float(np.mean(elbo_estimate(train, vae, res.params,
                                              eps=ev.normal((train.shape[0], vae.post.spec.latent_dim))).elbo))
    payload = {"steps": res.step, "train_elbo": final_train, "stopped_early": res.stopped_early}
    lines = [f"steps: {res.step}", f"final train ELBO: {final_train:.6f}"]
    if holdout is not None and len(holdout):
        hv = float(np.mean(elbo_estimate(holdout, vae, res.params,
                                         eps=ev.normal((holdout.shape[0], vae.post.spec.latent_dim))).elbo))
        payload["holdout_elbo"] = hv
        lines.append(f"final holdout ELBO: {hv:.6f}")
    if res.stopped_early:
        lines.append("stopped early (holdout ELBO stalled)")
    _emit(spec, payload, lines)
    return EXIT_OK


def _save(path, v, params, opt_state, step, hold_hist):
    ck = Checkpoint(config=_jsonable(v), params=params, opt_state=opt_state,
                    rng_state=(v["seed"], (), 0), step=step, holdout_history=list(hold_hist))
    data_io.save_checkpoint(path, ck)


def _jsonable(v: dict) -> dict:
    return {k: (list(x) if isinstance(x, (list, tuple)) else x) for k, x in v.items()}


def _per_point_noise(seed: int, i: int, L: int, D: int) -> np.ndarray:
    return Rng(seed).substream(STREAM_CLI_EVAL, i).normal((L, 1, D))


def _per_point_estimates(vae, params, x, seed, L, estimator):
    D = vae.post.spec.latent_dim

    def one(i):
        eps = _per_point_noise(seed, i, L, D)
        if estimator == "elbo":
            return float(elbo_estimate(x[i:i + 1], vae, params, eps=eps[0]).elbo[0])
        return float(iwae_loglik_estimate(x[i:i + 1], vae, params, L, eps=eps)[0])

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return list(pool.map(one, range(x.shape[0])))


def cmd_eval_elbo(spec: RunSpec) -> int:
    vae, params, data, v = _load_model(spec)
    vals = _per_point_estimates(vae, params, data.items, v["seed"], 1, "elbo")
    _emit(spec, {"per_datapoint": vals, "mean": float(np.mean(vals))},
          [f"{i}\t{val:.10g}" for i, val in enumerate(vals)] + [f"mean ELBO: {np.mean(vals):.10g}"])
    return EXIT_OK


def cmd_estimate_loglik(spec: RunSpec) -> int:
    vae, params, data, v = _load_model(spec)
    L = spec["L"]
    vals = _per_point_estimates(vae, params, data.items, v["seed"], L, "iwae")
    payload = {"L": L, "per_datapoint": vals, "mean": float(np.mean(vals))}
    lines = [f"{i}\t{val:.10g}" for i, val in enumerate(vals)] + [f"mean log p(x) estimate (L={L}): {np.mean(vals):.10g}"]
    try:
        W, b, sigma = vae.gen.linear_gaussian_parts(params)
    except ValueError:
        pass
    else:
        exact = np.atleast_1d(exact_marginal_linear_gaussian(data.items - b, W, sigma))
        payload["exact_mean"] = float(np.mean(exact))
        lines.append(f"exact log p(x) (linear-Gaussian): {np.mean(exact):.10g}")
    _emit(spec, payload, lines)
    return EXIT_OK


def cmd_sample(spec: RunSpec) -> int:
    vae, params, _, v = _load_model(spec)
    x = model_sample(vae.gen, params, v["n_samples"], Rng(v["seed"]).substream(STREAM_CLI_SAMPLE),
                     means=v["sample_means"])
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "samples.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in x:
            w.writerow([data_io.metrics.format_float(a) for a in row])
    print(f"wrote {x.shape[0]} samples to {out / 'samples.csv'}")
    return EXIT_OK


def gradcheck_suite(seed: int = 0, fd_step: float = 1e-5):
    """``(posterior, objective, max_rel_err, worst_param)`` for each combination."""
    data = data_io.make_toy_four_points(6).items
    rows = []
    for kind in ("diag", "fullcov", "planar", "iaf"):
        spec = PosteriorSpec(kind, 2, 2, 3 if kind == "iaf" else 0, [5])
        vae = Vae.build(data.shape[1], spec, hidden=[4])
        params = vae.init(Rng(seed).substream(7))
        r = Rng(seed).substream(8)
        eps = r.normal((data.shape[0], 2))
        eps_l = r.normal((3, data.shape[0], 2))
        objectives = {
            "elbo": lambda pv: elbo_objective(elbo_estimate(data, vae, pv, eps=eps)),
            "annealed": lambda pv: kl_annealed_elbo(data, vae, pv, 0.3, eps=eps)[0],
            "iwae": lambda pv: iwae_objective(data, vae, pv, eps_l),
        }
        if kind == "diag":
            objectives["free_bits"] = lambda pv: free_bits_objective(data, vae, pv, 0.5, 2, eps=eps)[0]
        for name, fn in objectives.items():
            err, (pname, idx) = grad_check(fn, params, fd_step, report=True)
            where = "" if idx is None else str([int(i) for i in idx])
            rows.append((kind, name, err, f"{pname}{where}"))
    return rows


def cmd_gradcheck(spec: RunSpec) -> int:
    rows = gradcheck_suite(spec["seed"])
    bad = [r for r in rows if not r[2] < GRADCHECK_TOL]
    lines = [f"{'posterior':<9} {'objective':<10} {'max_rel_err':>12}  worst parameter"]
    lines += [f"{k:<9} {o:<10} {e:>12.3e}  {w}" for k, o, e, w in rows]
    lines.append(f"{len(rows) - len(bad)}/{len(rows)} combinations below {GRADCHECK_TOL:g}")
    _emit(spec, {"results": [dict(zip(("posterior", "objective", "max_rel_err", "worst"), r)) for r in rows],
                 "passed": not bad}, lines)
    return EXIT_OK if not bad else EXIT_VALIDATION


def compare_estimators(vae, params, x, n, seed):
    r = Rng(seed).substream(STREAM_CLI_COMPARE)
    g_rep = per_sample_variational_gradients(x, vae, params, n, r.substream(0), "reparam")
    g_sf = per_sample_variational_gradients(x, vae, params, n, r.substream(1), "score")
    D = vae.post.spec.latent_dim
    names = [f"mu[{i}]" for i in range(D)] + [f"log_sigma[{i}]" for i in range(D)]
    rows = []
    for j, name in enumerate(names):
        mr, ms = g_rep[:, j].mean(), g_sf[:, j].mean()
        vr, vs = g_rep[:, j].var(ddof=1), g_sf[:, j].var(ddof=1)
        se = np.sqrt((vr + vs) / n)
        rows.append({"coordinate": name, "mean_reparam": mr, "mean_score": ms, "se_diff": se,
                     "z": (ms - mr) / se if se > 0 else 0.0, "var_reparam": vr, "var_score": vs,
                     "variance_ratio": vs / vr if vr > 0 else float("inf")})
    return rows


def cmd_compare_estimators(spec: RunSpec) -> int:
    vae, params, data, v = _load_model(spec)
    if vae.post.spec.latent_dim > 4:
        raise ConfigError("latent_dim", "compare-estimators is capped at latent_dim <= 4")
    rows = compare_estimators(vae, params, data.items[0], v["estimator_samples"], v["seed"])
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    fields = list(rows[0])
    with open(out / "estimators.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([row["coordinate"]] + [data_io.metrics.format_float(row[f]) for f in fields[1:]])
    lines = [f"{'coordinate':<14} {'reparam mean':>13} {'score mean':>13} {'z':>7} {'var ratio':>10}"]
    lines += [f"{r['coordinate']:<14} {r['mean_reparam']:>13.5g} {r['mean_score']:>13.5g} "
              f"{r['z']:>7.2f} {r['variance_ratio']:>10.3g}" for r in rows]
    _emit(spec, {"rows": [{k: (float(x) if k != "coordinate" else x) for k, x in r.items()} for r in rows]},
          lines)
    return EXIT_OK


HANDLERS = {
    "train": cmd_train,
    "eval-elbo": cmd_eval_elbo,
    "estimate-loglik": cmd_estimate_loglik,
    "sample": cmd_sample,
    "gradcheck": cmd_gradcheck,
    "compare-estimators": cmd_compare_estimators,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latentflow", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("pairs", nargs="*", metavar="key=value", help="config overrides")
    p.add_argument("--config", type=Path)
    p.add_argument("--seed")
    p.add_argument("--out", type=Path, default=Path("runs"))
    p.add_argument("--resume", type=Path)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--L", dest="L")
    p.add_argument("--posterior")
    p.add_argument("--iaf-steps", dest="iaf_steps")
    p.add_argument("--free-bits", dest="free_bits")
    p.add_argument("--anneal-steps", dest="anneal_steps")
    p.add_argument("--dataset")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_intermixed_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in
                 ("seed", "L", "posterior", "iaf_steps", "free_bits", "anneal_steps", "dataset")}
    try:
        spec = parse_config(args.command, args.config, overrides, args.pairs, out=args.out,
                            resume=args.resume, checkpoint=args.checkpoint, json=args.json)
        return HANDLERS[spec.command](spec)
    except (ConfigError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrainingDiverged, NonFiniteElbo) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, CheckpointError, data_io.IdxError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
