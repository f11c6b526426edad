"""Command-line front end: synth, dataset, train, predict, backtest.

Exit codes: 0 success, 2 usage or data error, 3 training divergence.
Every command echoes its fully resolved configuration into the output
directory; re-running from that file reproduces the outputs byte for
byte.  Report-producing commands also render companion figures next to
the CSV outputs unless --no-plots is given.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from typing import List, Optional

from . import backtest as bt
from . import data as dt
from . import gan
from . import predict as pr
from .config import (
    RunConfig,
    coerce_value,
    load_config_file,
    merge_config,
    save_config_file,
)
from .errors import ConfigError, DivergenceError, GanfolioError

SEED_REQUIRED = ("synth", "train")


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="config file to start from")
    parser.add_argument("--no-plots", action="store_true",
                        help="skip figure rendering")
    for field in dataclasses.fields(RunConfig):
        if field.name == "plots":
            continue
        flag = "--" + field.name.replace("_", "-")
        parser.add_argument(flag, dest=field.name, default=None, metavar="V")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ganfolio",
        description="Adversarial return forecasting with entropy risk "
                    "filtering and market-neutral backtesting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("synth", "generate a synthetic price universe and manifest"),
        ("dataset", "build the training-pair CSV from prices"),
        ("train", "train the adversarial model and write a checkpoint"),
        ("predict", "dump ensemble predictions for one date"),
        ("backtest", "run the walk-forward evaluation and report bundle"),
    ]:
        cmd = sub.add_parser(name, help=help_text)
        _add_common_flags(cmd)
    return parser


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    file_values = load_config_file(args.config) if args.config else {}
    flag_values = {}
    for field in dataclasses.fields(RunConfig):
        if field.name == "plots":
            continue
        raw = getattr(args, field.name, None)
        if raw is None:
            continue
        flag_values[field.name] = coerce_value(field.name, str(raw))
    config = merge_config(file_values, flag_values)
    if args.no_plots:
        config.plots = False
    return config


def _prepare_out(config: RunConfig, command: str) -> str:
    os.makedirs(config.out_dir, exist_ok=True)
    save_config_file(os.path.join(config.out_dir, f"{command}.config"), config)
    return config.out_dir


def _require(config: RunConfig, command: str, *keys: str) -> None:
    for key in keys:
        if getattr(config, key) is None:
            raise ConfigError(f"{command}: --{key.replace('_', '-')} is required")


def _threads(config: RunConfig) -> int:
    return config.threads if config.threads > 0 else (os.cpu_count() or 1)


def _sample_times(config: RunConfig, universe) -> List[int]:
    lo = min(int(s.dates[0]) for s in universe.values())
    hi = max(int(s.dates[-1]) for s in universe.values())
    start = config.sample_start if config.sample_start is not None else lo + config.t_i
    end = config.sample_end if config.sample_end is not None else hi - config.t_o
    if end < start:
        raise ConfigError(f"empty sample range [{start}, {end}]")
    return list(range(start, end + 1, config.sample_stride))


def cmd_synth(config: RunConfig) -> int:
    _require(config, "synth", "seed")
    out = _prepare_out(config, "synth")
    scfg = dt.SynthConfig(
        n_signal_assets=config.n_signal,
        n_noise_assets=config.n_noise,
        n_days=config.n_days,
        rng_seed=config.seed,
        signal_strength=config.signal_strength,
        noise_sigma=config.noise_sigma,
        t_i=config.t_i,
        t_o=config.t_o,
    )
    universe, manifest = dt.synth_market(scfg)
    dt.save_prices(os.path.join(out, "prices.csv"), universe)
    dt.save_manifest(os.path.join(out, "manifest.csv"), manifest)
    print(f"synth: {config.n_signal} signal + {config.n_noise} noise assets, "
          f"{config.n_days} days, seed {config.seed} -> {out}")
    return 0


def cmd_dataset(config: RunConfig) -> int:
    _require(config, "dataset", "prices")
    out = _prepare_out(config, "dataset")
    universe = dt.load_prices(config.prices)
    pairs, report = dt.build_dataset(
        universe, _sample_times(config, universe),
        config.t_i, config.t_o, config.th_l, config.th_u,
    )
    dt.save_dataset_csv(os.path.join(out, "dataset.csv"), pairs)
    print(f"dataset: {report.emitted} pairs "
          f"(skipped {report.insufficient_history} no-history, "
          f"{report.insufficient_future} no-future) -> {out}")
    return 0


def _train_config(config: RunConfig) -> gan.TrainConfig:
    return gan.TrainConfig(
        rng_seed=config.seed,
        lr_d=config.lr_d,
        lr_g=config.lr_g,
        beta1=config.beta1,
        beta2=config.beta2,
        lambda_cg=config.lambda_cg,
        lambda_cd=config.lambda_cd,
        batch_size=config.batch_size,
        epochs=config.epochs,
        noise_dim=config.noise_dim,
        g_hidden=config.g_hidden,
        d_hidden=config.d_hidden_tuple(),
        condition_gain=config.condition_gain,
    )


def cmd_train(config: RunConfig) -> int:
    _require(config, "train", "seed", "prices")
    out = _prepare_out(config, "train")
    universe = dt.load_prices(config.prices)
    pairs, report = dt.build_dataset(
        universe, _sample_times(config, universe),
        config.t_i, config.t_o, config.th_l, config.th_u,
    )
    g_net, d_net, trace = gan.train(pairs, _train_config(config))
    gan.save_checkpoint(os.path.join(out, "checkpoint.json"),
                        g_net, d_net, _train_config(config), config.epochs)
    gan.save_loss_trace(os.path.join(out, "loss_trace.csv"), trace)
    if config.plots and len(trace):
        from . import plots
        plots.save_loss_figure(os.path.join(out, "loss_trace.png"), trace)
    last = (f"d_loss {trace.d_loss[-1]:.4f}, g_loss {trace.g_loss[-1]:.4f}"
            if len(trace) else "no epochs")
    print(f"train: {report.emitted} pairs, {config.epochs} epochs, {last} -> {out}")
    return 0


def _warn_i_samples(config: RunConfig) -> None:
    if config.i_samples != pr.REFERENCE_SAMPLE_COUNT and config.th_r < 0:
        print(
            f"warning: risk thresholds are calibrated at I={pr.REFERENCE_SAMPLE_COUNT} "
            f"samples; the risk measure scales with I and you asked for "
            f"I={config.i_samples}",
            file=sys.stderr,
        )


def cmd_predict(config: RunConfig) -> int:
    _require(config, "predict", "checkpoint", "prices", "predict_time")
    out = _prepare_out(config, "predict")
    _warn_i_samples(config)
    g_net, _, train_cfg, _ = gan.load_checkpoint(config.checkpoint)
    universe = dt.load_prices(config.prices)
    t = config.predict_time
    conditions = []
    skipped = 0
    for asset_id in sorted(universe):
        try:
            x = dt.build_features(universe[asset_id], t, config.t_i)
        except GanfolioError:
            skipped += 1
            continue
        conditions.append(((asset_id, t), x.values))
    seed = config.seed if config.seed is not None else train_cfg.rng_seed
    preds = pr.predict_universe(g_net, conditions, config.i_samples, seed,
                                threads=_threads(config))
    pr.save_predictions_csv(os.path.join(out, "predictions.csv"), preds)
    print(f"predict: {len(preds)} assets at t={t} "
          f"({skipped} skipped), I={config.i_samples} -> {out}")
    return 0


def cmd_backtest(config: RunConfig) -> int:
    _require(config, "backtest", "checkpoint", "prices",
             "train_end", "eval_start", "eval_end")
    out = _prepare_out(config, "backtest")
    _warn_i_samples(config)
    g_net, _, train_cfg, _ = gan.load_checkpoint(config.checkpoint)
    universe = dt.load_prices(config.prices)
    seed = config.seed if config.seed is not None else train_cfg.rng_seed
    bcfg = bt.BacktestConfig(
        train_end=config.train_end,
        eval_start=config.eval_start,
        eval_end=config.eval_end,
        rng_seed=seed,
        rebalance_stride=config.rebalance_stride,
        th_p=config.th_p,
        th_r=config.th_r,
        i_samples=config.i_samples,
        t_i=config.t_i,
        t_o=config.t_o,
        benchmark=config.benchmark,
        threads=_threads(config),
    )
    thr_values = config.thr_grid_list()
    thp_values = config.thp_grid_list() or [config.th_p]
    predictions, skipped = bt.predict_evaluation(g_net, universe, bcfg)
    report = bt.evaluate_strategy(predictions, skipped, universe, bcfg)
    grid = None
    if thr_values:
        reports = {
            (p, r): bt.evaluate_strategy(predictions, skipped, universe, bcfg,
                                         th_p=p, th_r=r)
            for p in thp_values for r in thr_values
        }
        grid = bt.GridResult(reports=reports, predictions_by_time=predictions,
                             th_p_values=thp_values, th_r_values=thr_values)
    paths = bt.save_report_bundle(out, report, bcfg, grid)
    if config.plots:
        from . import plots
        figure_path = os.path.join(out, "equity.png")
        plots.save_equity_figure(figure_path, report, grid)
        paths.append(figure_path)
    metrics = report.metrics.as_dict()
    shown = ", ".join(
        f"{k}={'undefined' if v is None else f'{v:.4f}'}" for k, v in metrics.items()
    )
    print(f"backtest: {len(report.period_returns)} periods, "
          f"{report.degenerate_periods} degenerate | {shown} -> {out}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "dataset": cmd_dataset,
    "train": cmd_train,
    "predict": cmd_predict,
    "backtest": cmd_backtest,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _resolve_config(args)
        return COMMANDS[args.command](config)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except GanfolioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
