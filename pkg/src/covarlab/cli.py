"""Command-line front end for the full pipeline.

Subcommands: simulate, fit-var, fit-covar, predict, backtest, report.
Each reads a declarative TOML (or JSON) config; command-line flags
override config values. Every command writes a manifest.json into its
output directory listing the config snapshot, the seed, and the sha256 of
every input and output artifact; downstream commands check their inputs
against upstream manifests and refuse stale files.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Re-running a
command with the same inputs and seed reproduces its primary outputs byte
for byte (manifest timestamps may differ). COVARLAB_THREADS caps the
parallel grid.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - python < 3.11
    import tomli as tomllib

from . import backtest as bt
from . import covar_pipeline as pipe
from . import sentiment as senti
from . import simulation as sim
from . import trainer as trn
from . import transformer as tfm
from .data_io import load_embeddings, load_returns, save_embeddings, save_returns


class ManifestError(RuntimeError):
    pass


def _load_config(path) -> dict:
    p = Path(path)
    if p.suffix == ".json":
        return json.loads(p.read_text())
    with open(p, "rb") as f:
        return tomllib.load(f)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _verify_inputs(paths):
    """Check each input against the manifest of the directory it came from."""
    for path in paths:
        p = Path(path)
        manifest = p.parent / "manifest.json"
        if not manifest.exists():
            continue
        recorded = json.loads(manifest.read_text()).get("outputs", {})
        if p.name in recorded:
            actual = _sha256(p)
            if actual != recorded[p.name]:
                raise ManifestError(
                    f"manifest mismatch for {p}: expected {recorded[p.name][:12]}..., "
                    f"found {actual[:12]}... (stale or modified upstream artifact)"
                )


def _write_manifest(out_dir: Path, command: str, config: dict, seed, inputs, started: float):
    outputs = {
        f.name: _sha256(f)
        for f in sorted(out_dir.iterdir())
        if f.is_file() and f.name != "manifest.json"
    }
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": outputs,
        "started": started,
        "finished": time.time(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


# ------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    started = time.time()
    cfg = _load_config(args.config) if args.config else {}
    s = dict(cfg.get("sim", {}))
    if args.seed is not None:
        s["seed"] = args.seed
    if args.tau is not None:
        s["tau"] = args.tau
    text_d_e = int(s.pop("text_d_e", 8))
    max_per_day = int(s.pop("text_max_per_day", 3))
    noise_scale = float(s.pop("text_noise_scale", 0.1))
    zero_noise = bool(s.pop("zero_noise", False))
    start_date = str(s.pop("start_date", "2006-10-02"))
    config = sim.SimConfig(**s)

    ds = sim.build_sim_dataset(config, d_e=text_d_e, max_per_day=max_per_day,
                               zero_noise=zero_noise, start_date=start_date,
                               noise_scale=noise_scale)
    out = _out_dir(args)
    save_returns(ds.panel, out / "returns.csv")
    save_embeddings(ds.store, out / "embeddings.cvem")
    with open(out / "oracle.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["date", "var1", "covar", "var2"])
        for i, d in enumerate(ds.panel.dates):
            w.writerow([d, _fmt(ds.var1[i]), _fmt(ds.covar[i]), _fmt(ds.var2[i])])
    _write_manifest(out, "simulate", cfg, config.seed, [], started)
    print(f"simulated T={config.T} -> {out}")
    return 0


# -------------------------------------------------------------- fit-var


def cmd_fit_var(args) -> int:
    started = time.time()
    cfg = _load_config(args.config) if args.config else {}
    returns_path = args.returns or cfg.get("data", {}).get("returns")
    if not returns_path:
        raise ValueError("no returns file (flag --returns or [data].returns)")
    _verify_inputs([returns_path])
    panel = load_returns(returns_path)

    taus = list(cfg.get("var", {}).get("taus", []))
    if args.tau is not None and args.tau not in taus:
        taus.append(args.tau)
    if not taus:
        taus = [0.05, 0.5]
    if 0.5 not in taus:
        taus.append(0.5)  # the median series anchors the spillover measure

    split = tuple(cfg.get("train", {}).get("split", (0.40, 0.20, 0.40)))
    var_all = pipe.estimate_var_all(panel, taus, split)
    labels = pipe.split_labels(len(panel.dates), split)

    out = _out_dir(args)
    with open(out / "var.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["date", "ticker", "tau", "var", "split"])
        for ticker in panel.tickers:
            for tau in taus:
                series = var_all[(ticker, tau)]
                for i, d in enumerate(panel.dates):
                    w.writerow([d, ticker, _fmt(tau), _fmt(series[i]), labels[i]])
    _write_manifest(out, "fit-var", cfg, None, [returns_path], started)
    print(f"fit {len(panel.tickers)} x {len(taus)} VaR series -> {out}")
    return 0


def _load_var_csv(path, dates=None) -> dict:
    values: dict = {}
    row_dates: dict = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            key = (row["ticker"], float(row["tau"]))
            values.setdefault(key, []).append(float(row["var"]))
            row_dates.setdefault(key, []).append(row["date"])
    if dates is not None:
        for key, ds in row_dates.items():
            if ds != list(dates):
                raise ValueError(
                    f"VaR series for {key} is not aligned with the returns panel dates"
                )
    return {k: np.array(v) for k, v in values.items()}


# ------------------------------------------------------------ fit-covar


def _arch_from_config(cfg: dict, args, d_e: int, J: int) -> tfm.ArchConfig:
    a = cfg.get("arch", {})
    return tfm.ArchConfig(
        n=int(a.get("n", 97)),
        d_e=d_e,
        J=J,
        H=int(args.heads if args.heads is not None else a.get("heads", 1)),
        d_h=int(a.get("d_h", 64)),
        L=int(a.get("layers", 1)),
        D=int(a.get("mlp_depth", 2)),
        d_m=int(a.get("mlp_width", 64)),
        variant=str(args.variant or a.get("variant", "plain")),
    )


def _train_config(cfg: dict, args) -> trn.TrainConfig:
    t = cfg.get("train", {})
    return trn.TrainConfig(
        tau=float(args.tau if args.tau is not None else t.get("tau", 0.05)),
        lr_grid=tuple(t.get("lr_grid", (0.00015, 0.0015, 0.015))),
        batch_grid=tuple(int(b) for b in t.get("batch_grid", (32, 64, 128))),
        max_epochs=int(t.get("max_epochs", 200)),
        patience=int(t.get("patience", 50)),
        split=tuple(t.get("split", (0.40, 0.20, 0.40))),
        seed=int(args.seed if args.seed is not None else t.get("seed", 0)),
        momentum=float(t.get("momentum", 0.0)),
        parallel=bool(args.parallel_grid or t.get("parallel", False)),
    )


def cmd_fit_covar(args) -> int:
    started = time.time()
    cfg = _load_config(args.config) if args.config else {}
    data = cfg.get("data", {})
    returns_path = args.returns or data.get("returns")
    if not returns_path:
        raise ValueError("no returns file (flag --returns or [data].returns)")
    inputs = [returns_path]
    panel = load_returns(returns_path)

    model_kind = str(cfg.get("train", {}).get("model", "transformer"))
    target = args.target_ticker or cfg.get("train", {}).get("target")
    if not target:
        raise ValueError("no target institution (flag --target-ticker or [train].target)")
    config = _train_config(cfg, args)
    window = int(cfg.get("arch", {}).get("window_days", 5))
    include_day_t = bool(args.include_day_t or cfg.get("arch", {}).get("include_day_t", False))
    out = _out_dir(args)

    if model_kind == "transformer":
        emb_path = args.embeddings or data.get("embeddings")
        if not emb_path:
            raise ValueError("transformer model needs an embeddings file")
        inputs.append(emb_path)
        _verify_inputs(inputs)
        store = load_embeddings(emb_path)
        arch = _arch_from_config(cfg, args, d_e=store.d_e, J=len(panel.tickers))
        model, report, _ = pipe.fit_covar_model(
            target, panel, store, arch, config, window, include_day_t
        )
        tfm.save_model(model, out / "model.cvtf")
        report.weights_ref = "model.cvtf"
    elif model_kind == "sentiment_transformer":
        emb_path = args.embeddings or data.get("embeddings")
        senti_path = args.sentiment or data.get("sentiment")
        if not emb_path or not senti_path:
            raise ValueError("sentiment transformer needs embeddings and sentiment files")
        inputs += [emb_path, senti_path]
        _verify_inputs(inputs)
        store = load_embeddings(emb_path)
        labels_by_id, _ = senti.load_sentiment_csv(senti_path)
        arch = _arch_from_config(cfg, args, d_e=1, J=len(panel.tickers))
        windows = pipe.prepare_sentiment_windows(
            panel, store, labels_by_id, arch.n, window, include_day_t
        )
        data_set = pipe.build_covar_dataset(panel, windows, target)
        model = tfm.init_transformer(arch, seed=config.seed)
        model, report = trn.train(model, data_set, config)
        tfm.save_model(model, out / "model.cvtf")
        report.weights_ref = "model.cvtf"
    elif model_kind in ("returns_mlp", "sentiment_mlp"):
        extra = None
        if model_kind == "sentiment_mlp":
            senti_path = args.sentiment or data.get("sentiment")
            if not senti_path:
                raise ValueError("sentiment MLP needs a sentiment file")
            inputs.append(senti_path)
            _verify_inputs(inputs)
            _, counts = senti.load_sentiment_csv(senti_path)
            extra = pipe.sentiment_index_series(panel, counts, include_day_t)[:, None]
        else:
            _verify_inputs(inputs)
        t = cfg.get("train", {})
        model, report = pipe.fit_returns_baseline(
            target, panel, config,
            width=int(t.get("mlp_width", 64)), depth=int(t.get("mlp_depth", 2)),
            extra=extra,
        )
        tfm.save_mlp(model, out / "model.cvmb")
        report.weights_ref = "model.cvmb"
    else:
        raise ValueError(f"unknown model kind {model_kind!r}")

    trn.write_report_records(report, out / "train_report.csv")
    (out / "train_report.json").write_text(
        json.dumps(trn.report_to_dict(report), indent=2, sort_keys=True)
    )
    _write_manifest(out, "fit-covar", cfg, config.seed, inputs, started)
    print(
        f"trained {model_kind} for {target}: val={report.best_val:.6f} "
        f"(lr={report.chosen_lr}, batch={report.chosen_batch}, epoch={report.best_epoch}) -> {out}"
    )
    return 0


# -------------------------------------------------------------- predict


def _load_any_model(path):
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == b"CVTF":
        return tfm.load_model(path)
    if magic == b"CVMB":
        return tfm.load_mlp(path)
    raise ValueError(f"unrecognized checkpoint magic {magic!r}")


def cmd_predict(args) -> int:
    started = time.time()
    cfg = _load_config(args.config) if args.config else {}
    data = cfg.get("data", {})
    p = cfg.get("predict", {})
    returns_path = args.returns or data.get("returns")
    ckpt_path = args.checkpoint or p.get("checkpoint")
    var_path = args.var or p.get("var_csv")
    if not (returns_path and ckpt_path and var_path):
        raise ValueError("predict needs returns, checkpoint and var files")
    inputs = [returns_path, ckpt_path, var_path]

    panel = load_returns(returns_path)
    model = _load_any_model(ckpt_path)
    var_all = _load_var_csv(var_path, dates=panel.dates)
    tau = float(args.tau if args.tau is not None else p.get("tau", cfg.get("train", {}).get("tau", 0.05)))
    target = args.target_ticker or p.get("target") or cfg.get("train", {}).get("target")
    if not target:
        raise ValueError("no target institution")
    window = int(cfg.get("arch", {}).get("window_days", 5))
    include_day_t = bool(args.include_day_t or cfg.get("arch", {}).get("include_day_t", False))
    split = tuple(cfg.get("train", {}).get("split", (0.40, 0.20, 0.40)))

    windows = None
    extra = None
    if isinstance(model, tfm.TransformerModel):
        if model.config.d_e == 1 and (args.sentiment or data.get("sentiment")):
            senti_path = args.sentiment or data.get("sentiment")
            emb_path = args.embeddings or data.get("embeddings")
            inputs += [senti_path, emb_path]
            store = load_embeddings(emb_path)
            labels_by_id, _ = senti.load_sentiment_csv(senti_path)
            windows = pipe.prepare_sentiment_windows(
                panel, store, labels_by_id, model.config.n, window, include_day_t
            )
        else:
            emb_path = args.embeddings or data.get("embeddings")
            if not emb_path:
                raise ValueError("transformer predictions need an embeddings file")
            inputs.append(emb_path)
            store = load_embeddings(emb_path)
            windows = pipe.prepare_windows(panel, store, model.config, window, include_day_t)
    elif model.input_dim == len(panel.tickers):  # returns + sentiment index
        senti_path = args.sentiment or data.get("sentiment")
        if not senti_path:
            raise ValueError("this baseline expects a sentiment file")
        inputs.append(senti_path)
        _, counts = senti.load_sentiment_csv(senti_path)
        extra = pipe.sentiment_index_series(panel, counts, include_day_t)[:, None]
    _verify_inputs(inputs)

    table = pipe.predict_risk_series(model, panel, windows, var_all, target, tau,
                                     split=split, extra=extra)
    out = _out_dir(args)
    pipe.write_risk_csv(table, out / "risk.csv")
    _write_manifest(out, "predict", cfg, None, inputs, started)
    print(f"predicted {len(table.dates)} dates for {target} at tau={tau} -> {out}")
    return 0


# ------------------------------------------------------------- backtest


def _risk_specs(args, cfg):
    specs = []
    for spec in args.risk or []:
        if "=" in spec:
            name, path = spec.split("=", 1)
        else:
            name, path = Path(spec).parent.name or Path(spec).stem, spec
        specs.append((name, path))
    for entry in cfg.get("backtest", {}).get("models", []):
        specs.append((entry["name"], entry["risk"]))
    if not specs:
        raise ValueError("no risk series given (--risk name=path)")
    return specs


def cmd_backtest(args) -> int:
    started = time.time()
    cfg = _load_config(args.config) if args.config else {}
    returns_path = args.returns or cfg.get("data", {}).get("returns")
    if not returns_path:
        raise ValueError("no returns file")
    specs = _risk_specs(args, cfg)
    inputs = [returns_path] + [p for _, p in specs]
    _verify_inputs(inputs)

    panel = load_returns(returns_path)
    tables = {name: pipe.load_risk_csv(path) for name, path in specs}
    first = next(iter(tables.values()))
    tau = float(args.tau) if args.tau is not None else first.tau
    test_idx = [i for i, s in enumerate(first.splits) if s == "test"]
    if not test_idx:
        raise ValueError("risk series has no test segment")
    dates = [first.dates[i] for i in test_idx]
    actuals = panel.column(first.ticker)[test_idx]
    preds = {}
    for name, table in tables.items():
        if table.dates != first.dates:
            raise ValueError(f"risk series {name!r} is not aligned with the others")
        preds[name] = table.covar[test_idx]

    step = int(cfg.get("backtest", {}).get("step_months", 3))
    table = bt.cumulative_table(preds, actuals, dates, tau, step_months=step)
    out = _out_dir(args)
    bt.write_loss_csv(table, out / "loss.csv")
    (out / "loss.txt").write_text(bt.format_loss_table(table) + "\n")
    _write_manifest(out, "backtest", cfg, None, inputs, started)
    print(bt.format_loss_table(table))
    return 0


# --------------------------------------------------------------- report


def cmd_report(args) -> int:
    started = time.time()
    cfg = _load_config(args.config) if args.config else {}
    returns_path = args.returns or cfg.get("data", {}).get("returns")
    specs = _risk_specs(args, cfg)
    inputs = ([returns_path] if returns_path else []) + [p for _, p in specs]
    _verify_inputs(inputs)

    tables = {name: pipe.load_risk_csv(path) for name, path in specs}
    names = list(tables)
    first = tables[names[0]]
    out = _out_dir(args)

    with open(out / "series.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["date", "split", "var"]
            + [f"covar_{n}" for n in names]
            + [f"delta_covar_{n}" for n in names]
        )
        for i, d in enumerate(first.dates):
            w.writerow(
                [d, first.splits[i], _fmt(first.var[i])]
                + [_fmt(tables[n].covar[i]) for n in names]
                + [_fmt(tables[n].delta[i]) for n in names]
            )

    base = names[0]
    with open(out / "differences.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["date", "split"]
                   + [f"covar_{n}_minus_{base}" for n in names[1:]]
                   + [f"delta_{n}_minus_{base}" for n in names[1:]])
        for i, d in enumerate(first.dates):
            w.writerow(
                [d, first.splits[i]]
                + [_fmt(tables[n].covar[i] - tables[base].covar[i]) for n in names[1:]]
                + [_fmt(tables[n].delta[i] - tables[base].delta[i]) for n in names[1:]]
            )

    lines = [f"risk summary for {first.ticker} at tau={first.tau}"]
    if returns_path:
        panel = load_returns(returns_path)
        actual = panel.column(first.ticker)
        test = [i for i, s in enumerate(first.splits) if s == "test"]
        lines.append(f"test dates: {len(test)}")
        width = max(len(n) for n in names)
        for n in names:
            t = tables[n]
            loss = bt.avq_loss(t.covar[test], actual[test], t.tau)
            rate = bt.exceedance_rate(t.covar[test], actual[test])
            lines.append(
                f"  {n.ljust(width)}  test AVQ x100 = {loss * 100:.4f}   "
                f"exceedance = {rate:.4f}   mean spillover = {float(np.mean(t.delta[test])):+.5f}"
            )
    # diagnostic only: conditional quantile curves at different levels
    # should not cross; count the dates where they do
    by_tau = {t.tau: t.covar for t in tables.values()}
    if len(by_tau) > 1:
        crossings = pipe.count_quantile_crossings(by_tau)
        lines.append(f"quantile crossings across levels {sorted(by_tau)}: {crossings}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    _write_manifest(out, "report", cfg, None, inputs, started)
    print("\n".join(lines))
    return 0


# ----------------------------------------------------------------- main


def _add_common(p, *, out_required=True):
    p.add_argument("--config", help="TOML or JSON config file")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covarlab",
        description="Two-step conditional tail-risk estimation with text inputs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate the synthetic dataset and oracles")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit-var", help="fit the per-institution VaR regressions")
    _add_common(p)
    p.add_argument("--returns")
    p.set_defaults(func=cmd_fit_var)

    p = sub.add_parser("fit-covar", help="train the conditional quantile model")
    _add_common(p)
    p.add_argument("--returns")
    p.add_argument("--embeddings")
    p.add_argument("--sentiment")
    p.add_argument("--target-ticker")
    p.add_argument("--variant", choices=["plain", "residual_layernorm"])
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--include-day-t", action="store_true")
    p.add_argument("--parallel-grid", action="store_true")
    p.set_defaults(func=cmd_fit_covar)

    p = sub.add_parser("predict", help="plug VaR estimates into the fitted model")
    _add_common(p)
    p.add_argument("--returns")
    p.add_argument("--embeddings")
    p.add_argument("--sentiment")
    p.add_argument("--checkpoint")
    p.add_argument("--var", help="VaR series CSV from fit-var")
    p.add_argument("--target-ticker")
    p.add_argument("--include-day-t", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("backtest", help="cumulative quantile-loss evaluation")
    _add_common(p)
    p.add_argument("--returns")
    p.add_argument("--risk", action="append", help="name=path of a risk series CSV")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("report", help="summary and plot-ready series")
    _add_common(p)
    p.add_argument("--returns")
    p.add_argument("--risk", action="append", help="name=path of a risk series CSV")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # runtime failure -> exit 1 with a message
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
