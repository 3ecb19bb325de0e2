"""Batch pipeline stages with dependency checks, quarantined outputs and run manifests."""
from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
import os
import shutil
import time
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from cofindiff import __version__
from cofindiff.baselines.gan import GanConfig, GanControl, GanModel, as_generator as gan_generator, train_cgan
from cofindiff.baselines.stochastic import GarchParams, GBMParams, gbm_log_returns, simulate_garch
from cofindiff.checkpoint import load_checkpoint, save_checkpoint
from cofindiff.config import RunConfig
from cofindiff.diffusion.denoiser import DenoiserConfig
from cofindiff.diffusion.model import DiffusionModel
from cofindiff.diffusion.sampling import as_generator as diffusion_generator, generate_batch
from cofindiff.diffusion.schedule import make_schedule
from cofindiff.diffusion.training import TrainControl, train
from cofindiff.hedging import (HedgeControl, HedgePolicy, OptionSpec, RiskParams, SLICES,
                               evaluate_hedger, real_episodes, scenario_masks, synthetic_episodes, train_hedger,
                               zero_policy)
from cofindiff.market_data import (ConditionPair, DatasetSplit, DaySeries, build_dataset,
                                   forward_fill_and_slice, load_price_csv, toy_garch_corpus, write_manifest)
from cofindiff.metrics import ConditionGrid, condition_mae, diversity_report, stylized_fact_report

logger = logging.getLogger(__name__)

OUT_ENV = "COFINDIFF_OUT"
HEDGER_KIND = "cofindiff-hedger"


class MissingUpstream(RuntimeError):
    pass


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def output_root(cfg: RunConfig, override: str | None = None) -> Path:
    return Path(override or os.environ.get(OUT_ENV) or cfg.out_dir)


# --------------------------------------------------------------- persistence


def save_days(days: list[DaySeries], path: Path) -> None:
    np.savez(path, prices=np.stack([d.prices for d in days]), tickers=np.array([d.ticker for d in days]),
             dates=np.array([d.date.isoformat() for d in days]))


def load_days(path: Path) -> list[DaySeries]:
    with np.load(path) as z:
        return [DaySeries(str(t), dt.date.fromisoformat(str(d)), p)
                for p, t, d in zip(z["prices"], z["tickers"], z["dates"])]


def load_split(cfg: RunConfig, root: Path) -> DatasetSplit:
    days = load_days(root / "ingest" / "days.npz")
    return build_dataset(days, None, cfg.data.split_dates, cfg.data.tiers, cfg.data.upsample_mode)


def _optional_generators(root: Path) -> dict[str, Callable]:
    gens = {}
    ckpt = root / "fit-diffusion" / "checkpoint"
    if ckpt.exists():
        gens["cofindiff"] = diffusion_generator(DiffusionModel.load(ckpt))
    gan_root = root / "fit-gan"
    if gan_root.exists():
        for sub in sorted(p for p in gan_root.iterdir() if (p / "meta.json").exists()):
            gens[sub.name] = gan_generator(GanModel.load(sub))
    return gens


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True))


# -------------------------------------------------------------------- stages


def stage_ingest(cfg: RunConfig, out: Path, root: Path) -> dict:
    dc = cfg.data
    if dc.csv_path:
        days = forward_fill_and_slice(load_price_csv(dc.csv_path, dc.schema))
        days = [d for d in days if d.T == dc.T]
    else:
        days = toy_garch_corpus(dc.toy_days, dc.T, seed=dc.toy_seed)
    split = build_dataset(days, None, dc.split_dates, dc.tiers, dc.upsample_mode)
    save_days(days, out / "days.npz")
    write_manifest(split, out / "dataset.json")
    return {"days": "days.npz", "dataset": "dataset.json"}


def stage_fit_diffusion(cfg: RunConfig, out: Path, root: Path) -> dict:
    d = cfg.diffusion
    split = load_split(cfg, root)
    den = DenoiserConfig(base_channels=d.base_channels, channel_mult=tuple(d.channel_mult),
                         attention_heads=d.attention_heads, res_blocks=d.res_blocks, cond_embed_dim=d.cond_embed_dim,
                         cond_tokens=d.cond_tokens, image_shape=(cfg.wavelet.rows, cfg.wavelet.cols))
    ctl = TrainControl(max_epochs=d.max_epochs, lr=d.lr, lr_min=d.lr_min, patience=d.patience,
                       batch_size=d.batch_size, p_uncond=d.p_uncond, seed=cfg.seed,
                       steps_per_epoch=d.steps_per_epoch, time_budget_s=d.time_budget_s)
    state = train(split, make_schedule(d.K, d.beta_start, d.beta_end, d.variance), den, ctl)
    state.model.save(out / "checkpoint")
    _write_json(out / "history.json", {"best_epoch": state.best_epoch, "best_val": state.best_val,
                                       "epochs": state.history})
    return {"checkpoint": "checkpoint", "history": "history.json"}


def stage_fit_gan(cfg: RunConfig, out: Path, root: Path) -> dict:
    b = cfg.baselines
    split = load_split(cfg, root)
    outputs = {}
    for flavor in b.flavors:
        gcfg = GanConfig(flavor=flavor, latent_dim=b.latent_dim, clip_bound=b.clip_bound,
                         n_critic=b.n_critic if flavor == "wasserstein" else 1, length=cfg.data.T)
        ctl = GanControl(max_epochs=b.max_epochs, lr=b.lr, lr_min=b.lr_min, patience=b.patience,
                         batch_size=b.batch_size, seed=cfg.seed, time_budget_s=b.time_budget_s)
        state = train_cgan(split, gcfg, ctl)
        state.model.save(out / flavor)
        outputs[flavor] = flavor
    return outputs


def stage_generate(cfg: RunConfig, out: Path, root: Path) -> dict:
    model = DiffusionModel.load(root / "fit-diffusion" / "checkpoint")
    conds = [ConditionPair(*c) for c in cfg.generate.conditions]
    result = generate_batch(model, conds, cfg.generate.count, cfg.seed, cfg.diffusion.gamma)
    result.write_csv(out / "series.csv")
    _write_json(out / "generation.json", result.manifest())
    return {"series": "series.csv", "manifest": "generation.json"}


def stage_eval_stylized(cfg: RunConfig, out: Path, root: Path) -> dict:
    m, b = cfg.metrics, cfg.baselines
    n, T = m.stylized_days, cfg.data.T
    days = load_days(root / "ingest" / "days.npz")
    columns = {}
    by_ticker: dict[str, list] = {}
    for d in days:
        by_ticker.setdefault(d.ticker, []).append(d.log_returns)
    for ticker, rets in sorted(by_ticker.items()):
        if len(rets) >= 30:
            columns[f"real:{ticker}"] = stylized_fact_report(np.stack(rets), tail_frac=m.hill_tail_frac).to_dict()
    columns["gbm"] = stylized_fact_report(
        gbm_log_returns(GBMParams(b.gbm_mu, b.gbm_sigma), T, n, cfg.seed), tail_frac=m.hill_tail_frac).to_dict()
    garch = simulate_garch(GarchParams(b.garch_omega, b.garch_lambda, b.garch_nu), T, cfg.seed, n_paths=n)
    columns["garch"] = stylized_fact_report(garch, tail_frac=m.hill_tail_frac).to_dict()
    cond = ConditionPair(*m.stylized_condition)
    for name, gen in _optional_generators(root).items():
        r = np.asarray(gen([cond], n, cfg.seed))[0]
        columns[name] = stylized_fact_report(r, tail_frac=m.hill_tail_frac).to_dict()
    _write_json(out / "stylized.json", columns)
    return {"stylized": "stylized.json"}


def stage_eval_conditions(cfg: RunConfig, out: Path, root: Path) -> dict:
    m = cfg.metrics
    grid = ConditionGrid(tuple(m.grid_trends), tuple(m.grid_rvs))
    split = load_split(cfg, root)
    grid.check_disjoint([c for _, c in split.train])
    table, outputs = {}, {}
    for name, gen in _optional_generators(root).items():
        res = condition_mae(gen, grid, m.per_point, cfg.seed)
        table[name] = res.to_dict()
        res.write_scatter_csv(out / f"scatter_{name}.csv")
        outputs[f"scatter_{name}"] = f"scatter_{name}.csv"
    _write_json(out / "conditions.json", table)
    return {"conditions": "conditions.json", **outputs}


def stage_eval_diversity(cfg: RunConfig, out: Path, root: Path) -> dict:
    m = cfg.metrics
    table = {}
    for name, gen in _optional_generators(root).items():
        rows = {}
        for c in m.diversity_conditions:
            samples = np.asarray(gen([ConditionPair(*c)], m.diversity_samples, cfg.seed))[0]
            rows[f"({c[0]:g}, {c[1]:g})"] = diversity_report(samples).to_dict()
        table[name] = rows
    _write_json(out / "diversity.json", table)
    return {"diversity": "diversity.json"}


def _slice_mask(episodes, name):
    return scenario_masks(episodes)[name]


def stage_hedge_train(cfg: RunConfig, out: Path, root: Path) -> dict:
    h = cfg.hedging
    split = load_split(cfg, root)
    spec = OptionSpec(h.strike, cfg.data.T)
    risk = RiskParams(h.erm_gamma, h.cvar_alpha)
    train_real = real_episodes([d for d, _ in split.train])
    val_real = real_episodes([d for d, _ in split.val])
    sources = {"real": (train_real, None)}
    train_conds = [c for _, c in split.train]
    for name, gen in _optional_generators(root).items():
        sources[name] = (synthetic_episodes(gen, train_conds, h.per_condition, cfg.seed), gen)
    outputs = {}
    for source, (episodes, gen) in sources.items():
        for slice_name in SLICES:
            data = episodes
            if slice_name == "high_vol" and gen is not None:
                # zero-trend synthetic data, filtered by volatility
                data = synthetic_episodes(gen, [ConditionPair(0.0, c.rv) for c in train_conds], h.per_condition,
                                          cfg.seed, zero_trend=True)
            data = data.subset(_slice_mask(data, slice_name))
            val = val_real.subset(_slice_mask(val_real, slice_name))
            if len(data) == 0 or len(val) == 0:
                logger.warning("skipping hedger %s/%s: empty slice", source, slice_name)
                continue
            up = slice_name == "uptrend"
            ctl = HedgeControl(lr=h.uptrend_lr if up else h.lr, patience=h.uptrend_patience if up else h.patience,
                               max_epochs=h.max_epochs, batch_size=h.batch_size, cost_rate=h.cost_rate,
                               seed=cfg.seed, width=h.width, time_budget_s=h.time_budget_s)
            state = train_hedger(data, val, risk, ctl, spec)
            key = f"{source}-{slice_name}"
            save_checkpoint(out / key, state.policy.state_dict(), {"kind": HEDGER_KIND, "width": h.width},
                            {"source": source, "slice": slice_name, "best_val": state.best_val,
                             "best_epoch": state.best_epoch})
            outputs[key] = key
    return outputs


def stage_hedge_eval(cfg: RunConfig, out: Path, root: Path) -> dict:
    h = cfg.hedging
    split = load_split(cfg, root)
    spec = OptionSpec(h.strike, cfg.data.T)
    risk = RiskParams(h.erm_gamma, h.cvar_alpha)
    test = real_episodes([d for d, _ in split.test])
    table: dict = {}
    for ckpt in sorted(p for p in (root / "hedge-train").iterdir() if (p / "meta.json").exists()):
        state, meta = load_checkpoint(ckpt)
        policy = HedgePolicy(width=meta["header"]["width"]).double()
        policy.load_state_dict(state)
        policy.eval()
        s = meta["slice"]
        rep = evaluate_hedger({meta["source"]: policy, "no_hedge": zero_policy}, test, risk, h.cost_rate, spec,
                              slices=[s])
        for name, rows in rep["policies"].items():
            table.setdefault(s, {})[name] = rows[s]
    _write_json(out / "hedging.json", table)
    return {"hedging": "hedging.json"}


def stage_report(cfg: RunConfig, out: Path, root: Path) -> dict:
    sections = {"stylized": ("eval-stylized", "stylized.json"),
                "conditions": ("eval-conditions", "conditions.json"),
                "diversity": ("eval-diversity", "diversity.json"),
                "hedging": ("hedge-eval", "hedging.json")}
    report = {}
    for key, (stage, fname) in sections.items():
        path = root / stage / fname
        if path.exists():
            report[key] = json.loads(path.read_text())
    if not report:
        raise MissingUpstream("report needs at least one completed eval stage (eval-stylized, eval-conditions, "
                              "eval-diversity or hedge-eval)")
    _write_json(out / "report.json", report)
    outputs = {"report": "report.json"}
    if "stylized" in report:
        with (out / "stylized.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            cols = list(report["stylized"])
            w.writerow(["statistic", *cols])
            first = report["stylized"][cols[0]]
            w.writerow(["kurtosis_mean", *(report["stylized"][c]["kurtosis_mean"] for c in cols)])
            w.writerow(["hill", *(report["stylized"][c]["hill"] for c in cols)])
            for lag in first["acorr"]:
                w.writerow([f"acorr_{lag}", *(report["stylized"][c]["acorr"][lag][0] for c in cols)])
        outputs["stylized_csv"] = "stylized.csv"
    return outputs


STAGES: dict[str, tuple[tuple[str, ...], Callable]] = {
    "ingest": ((), stage_ingest),
    "fit-diffusion": (("ingest",), stage_fit_diffusion),
    "fit-gan": (("ingest",), stage_fit_gan),
    "generate": (("fit-diffusion",), stage_generate),
    "eval-stylized": (("ingest",), stage_eval_stylized),
    "eval-conditions": (("ingest", "fit-diffusion"), stage_eval_conditions),
    "eval-diversity": (("fit-diffusion",), stage_eval_diversity),
    "hedge-train": (("ingest",), stage_hedge_train),
    "hedge-eval": (("ingest", "hedge-train"), stage_hedge_eval),
    "report": ((), stage_report),
}


def _input_hashes(cfg: RunConfig, root: Path, deps) -> dict:
    hashes = {}
    if cfg.data.csv_path:
        hashes[cfg.data.csv_path] = sha256_file(Path(cfg.data.csv_path))
    for dep in deps:
        hashes[f"{dep}/manifest.json"] = sha256_file(root / dep / "manifest.json")
    return hashes


def run_stage(name: str, cfg: RunConfig, out_root: str | None = None) -> dict:
    """Run one stage; outputs land in ``<root>/<name>`` only after the stage succeeds."""
    if name not in STAGES:
        raise ValueError(f"unknown stage {name!r}; choose from {', '.join(STAGES)}")
    deps, fn = STAGES[name]
    root = output_root(cfg, out_root)
    for dep in deps:
        if not (root / dep / "manifest.json").exists():
            raise MissingUpstream(f"stage {name!r} needs the output of stage {dep!r}; run `cofindiff {dep}` first")
    root.mkdir(parents=True, exist_ok=True)
    tmp = root / f".tmp-{name}"
    shutil.rmtree(tmp, ignore_errors=True)
    tmp.mkdir()
    torch.manual_seed(cfg.seed)
    started = time.time()
    outputs = fn(cfg, tmp, root)
    manifest = {
        "stage": name,
        "tool_version": __version__,
        "config": cfg.to_dict(),
        "inputs": _input_hashes(cfg, root, deps),
        "started": dt.datetime.fromtimestamp(started, dt.timezone.utc).isoformat(),
        "wall_clock_s": time.time() - started,
        "outputs": {k: {"path": v, "sha256": sha256_file(tmp / v) if (tmp / v).is_file() else None}
                    for k, v in outputs.items()},
    }
    _write_json(tmp / "manifest.json", manifest)
    final = root / name
    shutil.rmtree(final, ignore_errors=True)
    tmp.rename(final)
    return manifest
