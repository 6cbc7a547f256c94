"""Sweep observation time, method and prior over an ingested corpus.

Reads windows (and fits.jsonl when present) from PEAKLAB_OUT and appends one
row per (t_obs, method, prior) cell to a timestamped CSV under
PEAKLAB_RESULTS_DIR/tobs_sweep/.
"""
import csv
import os
import sys
import time
from pathlib import Path

sys.path.append(os.path.dirname(os.path.dirname(__file__)))

from peaklab import artifacts
from peaklab.config import env_int, env_list
from peaklab.errors import DependencyError, PeakLabError
from peaklab.prediction import EvaluationPlan, evaluate_forecasts, summarize_metrics


def init_results_file(subdir, prefix):
    base_dir = Path(os.environ.get("PEAKLAB_RESULTS_DIR", "results")).expanduser()
    results_dir = base_dir / subdir
    results_dir.mkdir(parents=True, exist_ok=True)
    timestamp = time.strftime("%Y%m%d_%H%M%S")
    return results_dir / f"{prefix}_{timestamp}.csv"


def cells(t_obs_list, method_list, prior_list):
    """(t_obs, method, prior) triples; the prior only varies for the proposed method."""
    for t_obs in t_obs_list:
        for method in method_list:
            for prior in prior_list if method == "proposed" else ("-",):
                yield t_obs, method, prior


def main():
    out_dir = Path(os.environ.get("PEAKLAB_OUT", "out")).expanduser()
    t_obs_list = env_list("TOBS_LIST", "24,48,72", int)
    method_list = env_list("METHOD_LIST", "proposed,spikem,powerlaw,lr")
    prior_list = env_list("PRIOR_LIST", "none,anticipation,anticipation-category")
    horizon = env_int("HORIZON", 168)
    folds = env_int("FOLDS", 5)
    seed = env_int("SEED", 0)
    workers = env_int("WORKERS", 1)
    continue_on_error = os.environ.get("PEAKLAB_CONTINUE_ON_ERROR", "1").lower() not in {
        "0",
        "false",
        "no",
    }

    windows = artifacts.load_windows(out_dir)
    try:
        fits = artifacts.load_fits(out_dir / artifacts.FITS_FILE)
    except DependencyError:
        fits = {}
        print("no fits.jsonl; full fits are computed on demand", file=sys.stderr)

    columns = ["t_obs", "method", "prior", "n", "excluded", "mean_ape_ts", "median_ape_ts", "mean_ape_cum", "median_ape_cum"]
    results_path = init_results_file("tobs_sweep", "tobs_sweep")
    results_file = results_path.open("w", newline="", encoding="utf-8")
    writer = csv.writer(results_file)
    writer.writerow(columns)
    results_file.flush()

    print(",".join(columns))
    print(f"results_file={results_path}")

    plan_cells = list(cells(t_obs_list, method_list, prior_list))
    total_runs = len(plan_cells)
    completed = 0
    sweep_start = time.time()
    best = {"mean_ape_ts": float("inf"), "t_obs": None, "method": None, "prior": None}

    def record_row(row):
        nonlocal completed
        writer.writerow([row[name] for name in columns])
        results_file.flush()
        completed += 1
        if total_runs:
            print(
                "progress "
                f"{completed}/{total_runs} "
                f"({completed / total_runs * 100:.1f}%) "
                f"elapsed={time.time() - sweep_start:.1f}s "
                f"last=t_obs={row['t_obs']} method={row['method']} prior={row['prior']}",
                file=sys.stderr,
            )

    try:
        for t_obs, method, prior in plan_cells:
            plan = EvaluationPlan(
                methods=(method,),
                prior="none" if prior == "-" else prior,
                t_obs=(t_obs,),
                horizon=horizon,
                folds=folds,
                seed=seed,
                workers=workers,
                fits=fits,
            )
            try:
                summary = summarize_metrics(evaluate_forecasts(windows, plan))
            except PeakLabError as exc:
                print(f"error t_obs={t_obs} method={method} prior={prior}: {exc}", file=sys.stderr)
                if not continue_on_error:
                    raise
                record_row(dict(t_obs=t_obs, method=method, prior=prior, n=0, excluded=len(windows),
                                mean_ape_ts="nan", median_ape_ts="nan", mean_ape_cum="nan", median_ape_cum="nan"))
                continue
            for row in summary:
                row = dict(row, prior=prior)
                print(
                    f"{t_obs},{method},{prior},{row['n']},{row['excluded']},"
                    f"{row['mean_ape_ts']:.4f},{row['median_ape_ts']:.4f},"
                    f"{row['mean_ape_cum']:.4f},{row['median_ape_cum']:.4f}"
                )
                record_row(row)
                if row["mean_ape_ts"] < best["mean_ape_ts"]:
                    best = {"mean_ape_ts": row["mean_ape_ts"], "t_obs": t_obs, "method": method, "prior": prior}
    finally:
        results_file.close()

    print(
        "best "
        f"t_obs={best['t_obs']} "
        f"method={best['method']} "
        f"prior={best['prior']} "
        f"mean_ape_ts={best['mean_ape_ts']:.4f}"
    )


if __name__ == "__main__":
    main()
