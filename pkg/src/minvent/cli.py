"""``minvent`` command line: synth, train, prune, eval, compare.

Exit codes: 0 ok, 2 bad config or usage, 3 missing input, 4 data-format
error, 5 numeric failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import plots
from . import stats as st
from ._io import atomic_write_text, format_kv, parse_kv
from .checkpoint import history_csv, load_checkpoint, save_checkpoint
from .config import FIELDS, RunConfig, flag_name, load_config, make_config
from .errors import (ConstructionError, ContractError, DegenerateInputError, FormatError, InputError,
                     NumericError)
from .graph import build_neural_net_a, from_spec_text, init_params, param_count
from .pruning import PruneSummary, connectivity_score, make_neural_net_b
from .synth import export_dataset, build_dataset, import_dataset
from .trainer import (finetune, make_optimizer, make_proxy_dataset, predict, pretrain_proxy, train,
                      transfer_head)

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4, 5
OUT_ENV = "MINVENT_OUT_DIR"

HELP = {
    "subjects": "number of synthetic subjects",
    "female": "female subjects (-1 keeps the 53/103 proportion)",
    "windows": "windows per subject",
    "fs_hz": "sampling rate (Hz)",
    "window_seconds": "window length (s)",
    "data_seed": "dataset seed",
    "split": "train,val,test subject fractions",
    "flow_artifact_rms": "flow artifact RMS per level unit: wander,bursts,white (L/s)",
    "heart_artifact_rms": "heart artifact RMS per level unit: wander,bursts,white (beats/min)",
    "arch": "plain-text architecture file (default: VGG layout)",
    "width_mult": "channel width multiplier for the VGG layout",
    "dense_units": "hidden dense widths, comma-separated",
    "net_seed": "weight initialization seed",
    "optimizer": "adam or sgd-momentum",
    "learning_rate": "step size",
    "batch_size": "minibatch size",
    "max_epochs": "training epoch cap",
    "patience": "early-stopping patience (epochs)",
    "train_seed": "shuffle / proxy / calibration seed",
    "finetune_epochs": "fine-tuning epochs after pruning",
    "pretrain": "run proxy pretraining before regression (yes/no)",
    "proxy_samples": "proxy classification samples",
    "proxy_classes": "proxy classes",
    "proxy_epochs": "proxy training epoch cap",
    "sparsity": "fraction of prunable weights removed",
    "scope": "global or per-layer magnitude ranking",
    "pattern": "block-skip or dense-skip",
    "skip_density": "fraction of nonzeros in each skip kernel",
    "exempt": "layer ids left dense: auto, none, or a comma-separated list",
    "calibration_windows": "train windows used to rescale survivors (0 disables)",
    "alpha": "significance level for NS annotation",
}


class MissingInput(Exception):
    def __init__(self, path):
        super().__init__(f"missing input: {path}")
        self.path = path


class Refused(Exception):
    pass


def out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def _require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingInput(path)
    return path


def _writable(path, force: bool) -> Path:
    path = Path(path)
    if path.exists() and not force:
        raise Refused(f"{path} exists; pass --force to overwrite")
    return path


def _say(msg: str):
    print(msg, flush=True)


# -- shared steps --------------------------------------------------------------------------

def _load_dataset(path, cfg: RunConfig, explicit: set):
    ds = import_dataset(_require(path))
    m = ds.manifest
    for key, have in (("fs_hz", m.fs_hz), ("window_seconds", m.window_seconds)):
        want = getattr(cfg, key)
        if key in explicit and abs(want - have) > 1e-9:
            raise InputError(f"config {key}={want} but dataset {path} has {key}={have}")
    return ds


def _window_len(ds) -> int:
    return ds.windows[0].resp_flow.size if ds.windows else ds.manifest.window_len


def _check_graph_fits(graph, ds, path):
    n = _window_len(ds)
    if graph.input_length != n:
        raise InputError(f"model {path} expects windows of {graph.input_length} samples; dataset has {n}")


def _build_graph(cfg: RunConfig, length: int):
    if cfg.arch:
        g = from_spec_text(Path(_require(cfg.arch)).read_text())
        if g.skip_edges:
            raise InputError("a training architecture may not declare skip edges; prune adds them")
        if g.input_length != length:
            raise InputError(f"arch input length {g.input_length} != dataset window length {length}")
        g.params = init_params(g, cfg.net_seed)
        return g
    return build_neural_net_a(cfg.net_config(length))


def _stem(path) -> Path:
    path = Path(path)
    return path.with_suffix("") if path.suffix else path


def _write_history(ckpt_path, history):
    return atomic_write_text(_stem(ckpt_path).with_name(_stem(ckpt_path).name + ".history.csv"),
                             history_csv(history))


def _evaluate(name, graph, ds, split="test"):
    x, y, levels, sids = ds.arrays(split)
    if len(x) == 0:
        raise InputError(f"dataset has no windows in the {split!r} split")
    pred = predict(graph, x)[:, 0].astype(np.float64)
    keys = tuple((int(w.subject_id), int(w.window_id)) for w in ds.subset(split))
    report = st.evaluate(name, pred, y, levels, sids, keys, params=param_count(graph, effective=True),
                         connectivity=connectivity_score(graph).score, split=split)
    return report, pred, y, levels


def _baseline_rmse(ds):
    _, y_tr, _, _ = ds.arrays("train")
    _, y_te, _, _ = ds.arrays("test")
    return float(np.sqrt(np.mean((y_te - y_tr.mean()) ** 2)))


def _report_text(report: st.EvalReport, baseline: float) -> str:
    pairs = [("model", report.model_name), ("split", report.split), ("n", report.n),
             ("rmse", f"{report.rmse:.6f}"), ("mae", f"{report.mae:.6f}"),
             ("pearson_r", f"{report.pearson_r:.6f}"), ("baseline_rmse", f"{baseline:.6f}"),
             ("ba_mean", f"{report.bland_altman[0]:.6f}"), ("ba_lower", f"{report.bland_altman[1]:.6f}"),
             ("ba_upper", f"{report.bland_altman[2]:.6f}"), ("params", report.params),
             ("connectivity", f"{report.connectivity:.6f}")]
    pairs += [(f"subject_rmse_{k}", v) for k, v in report.subject_range.items()]
    pairs += [(f"rmse_level_{k}", f"{v:.6f}") for k, v in sorted(report.per_level_rmse.items())]
    return format_kv(pairs)


def _points_csv(ref, preds: dict, levels) -> str:
    names = list(preds)
    lines = [",".join(["reference", "artifact_level"] + [f"pred_{n}" for n in names])]
    for i in range(len(ref)):
        lines.append(",".join([f"{ref[i]:.6f}", str(int(levels[i]))] + [f"{preds[n][i]:.6f}" for n in names]))
    return "\n".join(lines) + "\n"


def _summary_csv(summary: PruneSummary) -> str:
    items = summary.items()
    return ",".join(k for k, _ in items) + "\n" + ",".join(str(v) for _, v in items) + "\n"


# -- commands --------------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args, explicit) -> int:
    out = _writable(args.out or out_dir() / "dataset.vntd", args.force)
    ds = build_dataset(cfg.manifest(), cfg.synth_params())
    export_dataset(ds, out)
    m = ds.manifest
    _say(f"wrote {out}: {m.n_subjects} subjects ({m.n_female} F / {m.n_male} M), "
         f"{len(ds.windows)} windows of {m.window_len} samples at {m.fs_hz:g} Hz")
    _say("splits: " + ", ".join(f"{k}={len(v)}" for k, v in ds.splits.items()))
    return EXIT_OK


def cmd_train(cfg: RunConfig, args, explicit) -> int:
    out = _writable(args.out or out_dir() / "neural_net_a.ckpt", args.force)
    ds = _load_dataset(args.data or out_dir() / "dataset.vntd", cfg, explicit)
    length = _window_len(ds)
    graph = _build_graph(cfg, length)
    tc = cfg.train_config()
    if cfg.pretrain:
        px = make_proxy_dataset(cfg.proxy_samples, cfg.proxy_classes, graph.input_channels, length,
                                ds.manifest.fs_hz, seed=cfg.train_seed)
        pcfg = type(tc)(**{**tc.__dict__, "max_epochs": cfg.proxy_epochs,
                           "early_stop_patience": min(tc.early_stop_patience, cfg.proxy_epochs)})
        cls, _, acc = pretrain_proxy(graph, px, pcfg)
        _say(f"proxy pretraining: held-out accuracy {acc:.3f} over {cfg.proxy_classes} classes")
        graph = transfer_head(cls, graph)
    opt = make_optimizer(tc)
    trained, hist = train(graph, ds, tc, optimizer=opt,
                          on_epoch=lambda r: _say(f"epoch {r['epoch']}: train {r['train_rmse']:.4f} "
                                                  f"val {r['val_rmse']:.4f}"))
    save_checkpoint(trained, opt.state_dict(), out, epoch=len(hist), history=hist)
    _write_history(out, hist)
    report, *_ = _evaluate(trained.name, trained, ds)
    _say(f"wrote {out}; test RMSE {report.rmse:.4f} L/min (baseline {_baseline_rmse(ds):.4f})")
    return EXIT_OK


def _calibration(ds, cfg: RunConfig):
    if cfg.calibration_windows == 0:
        return None
    x, _, _, _ = ds.arrays("train")
    n = min(cfg.calibration_windows, len(x))
    idx = np.sort(np.random.default_rng(cfg.train_seed).choice(len(x), n, replace=False))
    return x[idx]


def cmd_prune(cfg: RunConfig, args, explicit) -> int:
    out = _writable(args.out or out_dir() / "neural_net_b.ckpt", args.force)
    model = _require(args.model or out_dir() / "neural_net_a.ckpt")
    ds = _load_dataset(args.data or out_dir() / "dataset.vntd", cfg, explicit)
    a = load_checkpoint(model, eval_only=True).graph
    _check_graph_fits(a, ds, model)
    b, summary = make_neural_net_b(a, cfg.sparsity, cfg.pattern, cfg.skip_density, cfg.net_seed,
                                   scope=cfg.scope, exempt=cfg.exempt_tuple(), calibration=_calibration(ds, cfg))
    tc = cfg.train_config()
    tuned, hist = finetune(b, ds, tc, on_epoch=lambda r: _say(
        f"finetune epoch {r['epoch']}: train {r['train_rmse']:.4f} val {r['val_rmse']:.4f}"))
    tuned.name = "NeuralNetB"
    save_checkpoint(tuned, None, out, epoch=len(hist), history=hist)
    _write_history(out, hist)
    stem = _stem(out)
    atomic_write_text(stem.with_name(stem.name + ".prune.txt"), summary.to_text())
    atomic_write_text(stem.with_name(stem.name + ".prune.csv"), _summary_csv(summary))
    _say(f"wrote {out}; params {summary.params_after}/{summary.params_before} "
         f"({summary.param_ratio:.3f}), connectivity {summary.connectivity_masked:.3g} -> "
         f"{summary.connectivity_after:.3g}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args, explicit) -> int:
    model = _require(args.model or out_dir() / "neural_net_a.ckpt")
    ds = _load_dataset(args.data or out_dir() / "dataset.vntd", cfg, explicit)
    graph = load_checkpoint(model, eval_only=True).graph
    _check_graph_fits(graph, ds, model)
    dest = Path(args.out_dir or out_dir() / f"eval_{_stem(model).name}")
    _writable(dest / "metrics.csv", args.force)
    report, pred, ref, levels = _evaluate(graph.name, graph, ds)
    baseline = _baseline_rmse(ds)
    atomic_write_text(dest / "metrics.csv", st.metrics_csv(st.report_rows(report)))
    atomic_write_text(dest / "report.txt", _report_text(report, baseline))
    atomic_write_text(dest / "scatter.csv", _points_csv(ref, {graph.name: pred}, levels))
    plots.scatter_svg(dest / "scatter.svg", ref, {graph.name: pred})
    plots.bland_altman_svg(dest / "bland_altman.svg", ref, pred, report.bland_altman,
                           title=f"Bland-Altman, {graph.name}")
    _say(f"{graph.name}: test RMSE {report.rmse:.4f} L/min, r {report.pearson_r:.4f} "
         f"(baseline {baseline:.4f}); wrote {dest}")
    return EXIT_OK


def _level_significance(ra, rb, levels, alpha):
    out = {}
    for lv in sorted(set(int(v) for v in levels)):
        sel = levels == lv
        try:
            out[lv] = st.paired_significance(ra.abs_errors[sel], rb.abs_errors[sel], alpha)
        except (InputError, DegenerateInputError):
            out[lv] = None
    return out


def cmd_compare(cfg: RunConfig, args, explicit) -> int:
    path_a = _require(args.a or out_dir() / "neural_net_a.ckpt")
    path_b = _require(args.b or out_dir() / "neural_net_b.ckpt")
    ds = _load_dataset(args.data or out_dir() / "dataset.vntd", cfg, explicit)
    dest = Path(args.out_dir or out_dir() / "compare")
    _writable(dest / "metrics.csv", args.force)
    ga = load_checkpoint(path_a, eval_only=True).graph
    gb = load_checkpoint(path_b, eval_only=True).graph
    _check_graph_fits(ga, ds, path_a)
    _check_graph_fits(gb, ds, path_b)
    name_a, name_b = ga.name, gb.name if gb.name != ga.name else gb.name + "_2"
    ra, pa, ref, levels = _evaluate(name_a, ga, ds)
    rb, pb, _, _ = _evaluate(name_b, gb, ds)
    sig = st.paired_significance(ra.abs_errors, rb.abs_errors, cfg.alpha)
    cmp = st.compare_models(ra, rb, sig)
    baseline = _baseline_rmse(ds)

    atomic_write_text(dest / "metrics.csv", st.metrics_csv(cmp.rows))
    per_level = _level_significance(ra, rb, levels, cfg.alpha)
    sig_lines = ["artifact_level,n,statistic,p_value,method,annotation",
                 f"all,{sig.n},{sig.statistic:.1f},{sig.p_value:.6g},{sig.method},{sig.annotation}"]
    for lv, s in per_level.items():
        sig_lines.append(f"{lv},,,,,NS" if s is None else
                         f"{lv},{s.n},{s.statistic:.1f},{s.p_value:.6g},{s.method},{s.annotation}")
    atomic_write_text(dest / "significance.csv", "\n".join(sig_lines) + "\n")
    bars = {name_a: ra.per_level_rmse, name_b: rb.per_level_rmse}
    atomic_write_text(dest / "levels.csv", "artifact_level," + ",".join(bars) + "\n" + "".join(
        f"{lv}," + ",".join(f"{bars[m][lv]:.6f}" for m in bars) + "\n" for lv in sorted(ra.per_level_rmse)))
    plots.level_bars_svg(dest / "levels.svg", bars,
                         {lv: "NS" if s is None or s.annotation == "NS" else f"p={s.p_value:.2g}"
                          for lv, s in per_level.items()})
    atomic_write_text(dest / "scatter.csv", _points_csv(ref, {name_a: pa, name_b: pb}, levels))
    plots.scatter_svg(dest / "scatter.svg", ref, {name_a: pa, name_b: pb})
    for name, rep, pred in ((name_a, ra, pa), (name_b, rb, pb)):
        plots.bland_altman_svg(dest / f"bland_altman_{name}.svg", ref, pred, rep.bland_altman,
                               title=f"Bland-Altman, {name}")
        atomic_write_text(dest / f"report_{name}.txt", _report_text(rep, baseline))
    summary = _prune_summary_for(path_b, ga, gb)
    atomic_write_text(dest / "prune_summary.txt", summary.to_text())
    atomic_write_text(dest / "prune_summary.csv", _summary_csv(summary))
    atomic_write_text(dest / "comparison.txt", format_kv([
        ("model_a", name_a), ("model_b", name_b), ("rmse_a", f"{ra.rmse:.6f}"), ("rmse_b", f"{rb.rmse:.6f}"),
        ("baseline_rmse", f"{baseline:.6f}"), ("delta_rmse", f"{cmp.delta_rmse:.6f}"),
        ("delta_rmse_rel", f"{cmp.delta_rmse_rel:.6f}"), ("r_a", f"{ra.pearson_r:.6f}"),
        ("r_b", f"{rb.pearson_r:.6f}"), ("delta_r", f"{cmp.delta_r:.6f}"), ("params_a", ra.params),
        ("params_b", rb.params), ("delta_params", cmp.delta_params),
        ("delta_params_rel", f"{cmp.delta_params_rel:.6f}"),
        ("delta_connectivity", f"{cmp.delta_connectivity:.6f}"), ("wilcoxon_p", f"{sig.p_value:.6g}"),
        ("wilcoxon_method", sig.method), ("annotation", sig.annotation)]))
    _say(f"{name_a} RMSE {ra.rmse:.4f}, {name_b} RMSE {rb.rmse:.4f} (delta {cmp.delta_rmse_rel:+.1%}), "
         f"params ratio {rb.params / ra.params:.3f}, Wilcoxon p {sig.p_value:.3g} [{sig.annotation}]; "
         f"wrote {dest}")
    return EXIT_OK


def _prune_summary_for(path_b, ga, gb) -> PruneSummary:
    """Summary written by ``prune`` next to B, else one rebuilt from the two graphs."""
    stem = _stem(path_b)
    side = stem.with_name(stem.name + ".prune.txt")
    prunable = sum(ga.params[f"{l.layer_id}.weight"].size for l in ga.prunable_layers())
    zeros = sum(int(m.size - np.count_nonzero(m)) for m in gb.masks.values())
    if side.exists():
        kv = parse_kv(side.read_text(), str(side))
        kv.pop("param_ratio", None)
        kinds = PruneSummary.__dataclass_fields__
        vals = {}
        for k, v in kv.items():
            t = kinds[k].type
            vals[k] = int(v) if t == "int" else float(v) if t == "float" else (v == "True") if t == "bool" else v
        return PruneSummary(**vals)
    return PruneSummary(
        sparsity=zeros / prunable if prunable else 0.0, scope="unknown", pattern="unknown",
        density=float(np.mean([e.density for e in gb.skip_edges])) if gb.skip_edges else 0.0,
        params_before=param_count(ga, effective=True), params_after=param_count(gb, effective=True),
        prunable_before=prunable, prunable_after=prunable - zeros,
        skip_params=sum(e.nonzeros for e in gb.skip_edges),
        connectivity_before=connectivity_score(ga).score, connectivity_masked=float("nan"),
        connectivity_after=connectivity_score(gb).score)


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "prune": cmd_prune, "eval": cmd_eval,
            "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file; flags override it")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    group = common.add_argument_group("config keys (each also valid in --config files)")
    for key, f in FIELDS.items():
        group.add_argument(flag_name(key), dest=f"cfg_{key}", metavar=f.type.upper(),
                           help=f"{HELP[key]} (default: {f.default!r})")
    parser = argparse.ArgumentParser(
        prog="minvent", description="Minute-ventilation regressors: synthesize, train, prune, evaluate.",
        epilog=f"Outputs default to ${OUT_ENV} (else ./runs). Exit codes: 0 ok, 2 bad config, "
               "3 missing input, 4 data-format error, 5 numeric failure.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", parents=[common], help="generate and export the synthetic cohort")
    p.add_argument("--out", help="dataset file to write")
    p = sub.add_parser("train", parents=[common], help="proxy-pretrain, transfer and train NeuralNetA")
    p.add_argument("--data", help="dataset file")
    p.add_argument("--out", help="checkpoint to write")
    p = sub.add_parser("prune", parents=[common], help="prune, rewire and fine-tune into NeuralNetB")
    p.add_argument("--model", help="trained NeuralNetA checkpoint")
    p.add_argument("--data", help="dataset file")
    p.add_argument("--out", help="checkpoint to write")
    p = sub.add_parser("eval", parents=[common], help="evaluate one checkpoint on the test split")
    p.add_argument("--model", help="checkpoint to evaluate")
    p.add_argument("--data", help="dataset file")
    p.add_argument("--out-dir", help="report directory")
    p = sub.add_parser("compare", parents=[common], help="A-vs-B metrics, significance and plots")
    p.add_argument("--a", help="first checkpoint (NeuralNetA)")
    p.add_argument("--b", help="second checkpoint (NeuralNetB)")
    p.add_argument("--data", help="dataset file")
    p.add_argument("--out-dir", help="report directory")
    return parser


def resolve_config(args) -> tuple:
    """``(RunConfig, explicitly-set keys)`` from ``--config`` plus flag overrides."""
    base = RunConfig()
    explicit = set()
    if args.config:
        base = load_config(_require(args.config))
        explicit |= set(parse_kv(Path(args.config).read_text(), args.config))
    flags = {k: getattr(args, f"cfg_{k}") for k in FIELDS if getattr(args, f"cfg_{k}") is not None}
    explicit |= set(flags)
    return make_config(flags, base).validate(), explicit


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, explicit = resolve_config(args)
        return COMMANDS[args.command](cfg, args, explicit)
    except MissingInput as exc:
        print(f"error: missing input file {exc.path}", file=sys.stderr)
        return EXIT_MISSING
    except FileNotFoundError as exc:
        print(f"error: missing input file {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING
    except Refused as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"error: bad file format: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (NumericError, DegenerateInputError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ConstructionError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
