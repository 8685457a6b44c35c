"""NeuralNetA vs its pruned, skip-rewired NeuralNetB on the desk-scale cohort.

Runs the whole chain in-process (synthesis, proxy pretraining, transfer,
training, one-shot pruning, skip rewiring, fine-tuning, evaluation) for one
or more seeds and prints the comparison table. Plots go to --out-dir.

    python3 demos/desk_experiment.py --seeds 0 1 2 --out-dir runs/desk

One seed takes roughly five minutes on a single core.
"""
import argparse
import time
from pathlib import Path

import numpy as np

from minvent import plots
from minvent import stats as st
from minvent.experiment import DESK, run_desk_experiment, seeded
from minvent.trainer import predict


def log_epoch(h):
    print(f"  epoch {h['epoch']:3d}  train {h['train_rmse']:.3f}  val {h['val_rmse']:.3f}  "
          f"({h['wall_seconds']:.1f} s)", flush=True)


def one_seed(seed: int, out: Path, verbose: bool):
    print(f"seed {seed}")
    run = run_desk_experiment(seeded(DESK, seed), log=log_epoch if verbose else None)
    a, b = run["reports"]["NeuralNetA"], run["reports"]["NeuralNetB"]
    cmp, s = run["comparison"], run["summary"]
    print(f"  proxy accuracy {run['proxy_accuracy']:.3f}, baseline RMSE {run['baseline_rmse']:.3f} L/min")
    print(f"  {'model':<11} {'RMSE':>7} {'r':>7} {'params':>9}  per-level RMSE 0..3")
    for rep in (a, b):
        lv = " ".join(f"{rep.per_level_rmse[k]:.3f}" for k in sorted(rep.per_level_rmse))
        print(f"  {rep.model_name:<11} {rep.rmse:7.3f} {rep.pearson_r:7.4f} {rep.params:9,d}  {lv}")
    sig = cmp.significance
    print(f"  dRMSE {cmp.delta_rmse:+.3f} ({cmp.delta_rmse_rel:+.1%}), dr {cmp.delta_r:+.4f}, "
          f"param ratio {s.param_ratio:.3f}, Wilcoxon p={sig.p_value:.3g} [{sig.annotation}]")
    print(f"  connectivity: dense {s.connectivity_before:.3g} -> masked {s.connectivity_masked:.3g} "
          f"-> rewired {s.connectivity_after:.3g}; {run['seconds'] / 60:.1f} min")

    out.mkdir(parents=True, exist_ok=True)
    x, y, levels, _ = run["dataset"].arrays("test")
    preds = {n: predict(g, x)[:, 0] for n, g in (("NeuralNetA", run["net_a"]), ("NeuralNetB", run["net_b"]))}
    plots.scatter_svg(out / f"scatter_seed{seed}.svg", y, preds)
    for name, rep in run["reports"].items():
        plots.bland_altman_svg(out / f"bland_altman_{name}_seed{seed}.svg", y, preds[name], rep.bland_altman,
                               title=f"Bland-Altman, {name}")
    notes = {}
    for k in sorted(a.per_level_rmse):
        m = levels == k
        try:
            r = st.paired_significance(np.abs(preds["NeuralNetA"][m] - y[m]), np.abs(preds["NeuralNetB"][m] - y[m]))
            notes[k] = "NS" if r.annotation == "NS" else f"p={r.p_value:.2g}"
        except Exception:  # too few informative pairs at this level
            notes[k] = "n/a"
    plots.level_bars_svg(out / f"levels_seed{seed}.svg", {a.model_name: a.per_level_rmse,
                                                          b.model_name: b.per_level_rmse}, notes)
    return run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--out-dir", type=Path, default=Path("runs/desk"))
    ap.add_argument("--quiet", action="store_true", help="hide per-epoch lines")
    args = ap.parse_args()

    t0 = time.perf_counter()
    runs = [one_seed(s, args.out_dir, not args.quiet) for s in args.seeds]
    if len(runs) > 1:
        print(f"median over seeds {args.seeds}")
        for name in ("NeuralNetA", "NeuralNetB"):
            per = np.array([[r["reports"][name].per_level_rmse[k] for k in range(4)] for r in runs])
            rm = np.median([r["reports"][name].rmse for r in runs])
            print(f"  {name:<11} RMSE {rm:.3f}  per level " + " ".join(f"{v:.3f}" for v in np.median(per, 0)))
    print(f"done in {(time.perf_counter() - t0) / 60:.1f} min; plots in {args.out_dir}")


if __name__ == "__main__":
    main()
