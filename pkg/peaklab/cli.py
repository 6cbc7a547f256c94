"""Command-line entry point: ``peaklab <command> [options]``.

Commands read and write artifacts under ``--out``; later commands fail with a
DependencyError naming the command that produces a missing input.
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from peaklab import __version__, artifacts
from peaklab.baselines import powerlaw_fit, powerlaw_r2, spikem_fit, spikem_r2
from peaklab.clustering import (
    FEATURE_NAMES,
    ami_distribution,
    cluster_composition,
    feature_matrix,
    select_k,
)
from peaklab.config import (
    CLUSTER_FEATURES,
    FEATURE_SETS,
    METHODS,
    PRIORS,
    default_config,
    parse_list,
)
from peaklab.errors import ConfigError, PeakLabError, UndefinedRatioError
from peaklab.fitting import fit_peak
from peaklab.ingestion import (
    filter_popular,
    ingest_events,
    read_dump_dir,
    read_manifest,
    read_series_dir,
    write_manifest,
)
from peaklab.model_core import PeakParams, anticipation_response_ratio, decompose_circadian, model_curve
from peaklab.outcome import build_match_samples, crossvalidate, sample_arrays
from peaklab.parallel import run_parallel
from peaklab.prediction import EvaluationPlan, evaluate_forecasts, summarize_metrics
from peaklab.seeding import derive_seed
from peaklab.summary import category_parameter_table, corpus_report, quartile_summary, region_shares
from peaklab.synthetic import default_corpus_spec, generate_match_corpus, generate_synthetic_corpus

logger = logging.getLogger("peaklab")

PARAM_COLUMNS = ("a_minus", "b_minus", "tau_minus", "a_plus", "b_plus", "tau_plus", "alpha_c", "t_c", "t_p")
PLOT_OFFSETS = range(-168, 169)


class _Parser(argparse.ArgumentParser):
    """Usage errors raise ConfigError so they map to exit code 1."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=None, help="Output directory (default: out)")
    common.add_argument("--seed", type=int, default=None, help="Master seed (env PEAKLAB_SEED)")
    common.add_argument("--workers", type=int, default=None, help="Worker threads (env PEAKLAB_WORKERS)")
    common.add_argument("--fail-fast", action="store_true", help="Stop at the first per-event error")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true")
    verbosity.add_argument("--quiet", action="store_true")

    parser = _Parser(prog="peaklab", description="Attention peak modelling around planned events")
    parser.add_argument("--version", action="version", version=f"peaklab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    synth = sub.add_parser("synth", parents=[common], help="Generate a synthetic corpus")
    synth.add_argument("--n-events", type=int, default=None)
    synth.add_argument("--kind", choices=("categories", "matches"), default="categories")
    synth.add_argument("--threshold", type=float, default=None)

    ingest = sub.add_parser("ingest", parents=[common], help="Build event windows from pageview data")
    ingest.add_argument("--manifest", required=True)
    source = ingest.add_mutually_exclusive_group(required=True)
    source.add_argument("--dump-dir")
    source.add_argument("--series-dir")
    ingest.add_argument("--threshold", type=float, default=None)
    ingest.add_argument("--max-missing", type=float, default=None)
    ingest.add_argument("--project", default=None)

    fit = sub.add_parser("fit", parents=[common], help="Fit the peak model (and baselines)")
    fit.add_argument("--method", choices=METHODS + ("all",), default=None)

    predict = sub.add_parser("predict", parents=[common], help="Forecast post-peak views")
    predict.add_argument("--t-obs", default=None, help="Observation hours, e.g. 24 or 24,48,72")
    predict.add_argument("--horizon", type=int, default=None)
    predict.add_argument("--method", choices=METHODS + ("all",), default=None)
    predict.add_argument("--prior", choices=PRIORS, default=None)
    predict.add_argument("--regressor", choices=("log", "raw"), default=None)
    predict.add_argument("--folds", type=int, default=None)

    cluster = sub.add_parser("cluster", parents=[common], help="Gaussian-mixture clustering")
    cluster.add_argument("--features", choices=CLUSTER_FEATURES, default=None)
    cluster.add_argument("--k-min", type=int, default=None)
    cluster.add_argument("--k-max", type=int, default=None)
    cluster.add_argument("--restarts", type=int, default=None)
    cluster.add_argument("--circadian-features", choices=("raw", "sincos"), default=None)
    cluster.add_argument("--no-standardize", action="store_true")

    classify = sub.add_parser("classify", parents=[common], help="Infer match results")
    classify.add_argument("--feature-set", choices=FEATURE_SETS, default=None)
    classify.add_argument("--folds", type=int, default=None)
    classify.add_argument("--svm-c", type=float, default=None)

    sub.add_parser("decompose", parents=[common], help="Regional circadian mixes")
    sub.add_parser("report", parents=[common], help="Parameter tables per category, stage and result")
    return parser


def config_from_args(args):
    values = vars(args)
    overrides = {
        "command": args.command,
        "out": values.get("out"),
        "seed": values.get("seed"),
        "workers": values.get("workers"),
        "fail_fast": values.get("fail_fast") or None,
        "manifest": values.get("manifest"),
        "series_dir": values.get("series_dir"),
        "dump_dir": values.get("dump_dir"),
        "threshold": values.get("threshold"),
        "max_missing": values.get("max_missing"),
        "project": values.get("project"),
        "horizon": values.get("horizon"),
        "method": values.get("method"),
        "prior": values.get("prior"),
        "regressor": values.get("regressor"),
        "folds": values.get("folds"),
        "k_min": values.get("k_min"),
        "k_max": values.get("k_max"),
        "restarts": values.get("restarts"),
        "circadian_features": values.get("circadian_features"),
        "feature_set": values.get("feature_set"),
        "cluster_features": values.get("features"),
        "svm_c": values.get("svm_c"),
        "n_events": values.get("n_events"),
    }
    if values.get("t_obs"):
        try:
            overrides["t_obs"] = tuple(parse_list(values["t_obs"], "24", int))
        except ValueError as exc:
            raise ConfigError(f"--t-obs must list integers, got {values['t_obs']!r}") from exc
    if values.get("no_standardize"):
        overrides["standardize"] = False
    if values.get("kind"):
        overrides["extra"] = (("kind", values["kind"]),)
    return default_config(**overrides)


def _extra(config, name, default=None):
    return dict(config.extra).get(name, default)


def _write_exclusions(out_dir, exclusions, config):
    artifacts.write_csv(
        out_dir / "exclusions.csv",
        ("event", "reason", "detail"),
        [dict(event=key, reason=reason, detail=detail) for key, reason, detail in exclusions],
        config,
    )


def cmd_synth(config):
    out_dir = config.out_dir
    if _extra(config, "kind") == "matches":
        corpus = generate_match_corpus(config.n_events, config.seed)
    else:
        corpus = generate_synthetic_corpus(default_corpus_spec(), config.n_events, config.seed)
    windows = corpus.windows()
    retained = filter_popular(windows, config.threshold)
    kept = {w.event.key for w in retained}
    exclusions = [(w.event.key, "below_threshold", f"peak_value={w.peak.peak_value}") for w in windows if w.event.key not in kept]
    artifacts.save_windows(out_dir, retained, config)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(out_dir / "manifest.csv", corpus.events, header=artifacts.header_line(config))
    truth = corpus.truth()
    artifacts.write_jsonl(out_dir / "truth.jsonl", [dict(key=k, params=truth[k].to_dict()) for k in sorted(truth)], config)
    _write_exclusions(out_dir, exclusions, config)
    logger.info("synth events=%d retained=%d out=%s", len(windows), len(retained), out_dir)
    return dict(events=len(windows), retained=len(retained))


def cmd_ingest(config):
    out_dir = config.out_dir
    for flag, path in (("--manifest", config.manifest), ("--dump-dir", config.dump_dir), ("--series-dir", config.series_dir)):
        if path and not Path(path).exists():
            raise ConfigError(f"{flag} {path} does not exist")
    events = read_manifest(config.manifest)
    titles = {title for event in events for title in event.titles}
    if config.dump_dir:
        source = read_dump_dir(config.dump_dir, config.project, titles, config.workers)
    else:
        source = read_series_dir(config.series_dir, titles)
    retained, exclusions = ingest_events(events, source, config.threshold, config.max_missing)
    artifacts.save_windows(out_dir, retained, config)
    _write_exclusions(out_dir, exclusions, config)
    summary = dict(events=len(events), retained=len(retained), excluded=len(exclusions),
                   malformed_lines=source.malformed)
    artifacts.write_json(out_dir / "ingest.json", summary, config)
    logger.info("ingest events=%d retained=%d excluded=%d", len(events), len(retained), len(exclusions))
    return summary


def _guarded(config, label, fn):
    """Wrap a per-event function so failures become error strings unless --fail-fast."""

    def run(window):
        try:
            return fn(window)
        except PeakLabError as exc:
            if config.fail_fast:
                raise
            logger.warning("%s_failed event=%s error=%s", label, window.event.key, exc)
            return exc

    return run


def _fit_row(window, fit):
    row = dict(event=window.event.key, category=window.event.category)
    if not hasattr(fit, "params"):
        row.update(converged=False, error=str(fit))
        return row
    row.update(converged=fit.converged, r2=fit.r2, residual_variance=fit.residual_variance, error="")
    row.update(fit.params.to_dict())
    try:
        row["rho"] = anticipation_response_ratio(fit.params)
    except UndefinedRatioError:
        row["rho"] = float("nan")
    return row


def _plot_fit_rows(window, fit):
    if not hasattr(fit, "params"):
        return []
    observed = window.series.counts
    fitted = model_curve(fit.params, len(observed))
    return [
        dict(event=window.event.key, hour=hour, observed=int(observed[hour]), fitted=float(fitted[hour]))
        for hour in range(len(observed))
    ]


def cmd_fit(config):
    out_dir = config.out_dir
    windows = artifacts.load_windows(out_dir)
    summary = dict(events=len(windows))
    methods = [m for m in config.methods if m != "lr"]
    if not methods:
        raise ConfigError("the lr method has no per-event fit; use --method proposed, spikem or powerlaw")

    if "proposed" in methods:
        results = run_parallel(_guarded(config, "fit", lambda w: fit_peak(w.series, w.peak)), windows, config.workers, "fit")
        fits = {w.event.key: fit for w, fit in zip(windows, results)}
        artifacts.save_fits(out_dir / artifacts.FITS_FILE, windows, fits, config)
        artifacts.write_csv(
            out_dir / "fits.csv",
            ("event", "category", "converged", "r2", "residual_variance", "rho") + PARAM_COLUMNS + ("error",),
            [_fit_row(w, fits[w.event.key]) for w in windows],
            config,
        )
        artifacts.write_csv(
            out_dir / "plot_fit.csv",
            ("event", "hour", "observed", "fitted"),
            [row for w in windows for row in _plot_fit_rows(w, fits[w.event.key])],
            config,
        )
        good = [f for f in fits.values() if hasattr(f, "params") and f.converged]
        summary["proposed"] = dict(converged=len(good), r2=quartile_summary([f.r2 for f in good]))

    if "spikem" in methods:
        results = run_parallel(_guarded(config, "spikem", lambda w: spikem_fit(w.series, w.peak)), windows, config.workers, "spikem")
        fits = {w.event.key: f for w, f in zip(windows, results) if hasattr(f, "params")}
        artifacts.save_spikem_fits(out_dir / artifacts.SPIKEM_FITS_FILE, windows, fits, config)
        r2 = [spikem_r2(w.series, fits[w.event.key].params, w.peak.t_p) for w in windows if w.event.key in fits]
        summary["spikem"] = dict(fitted=len(fits), r2=quartile_summary(r2))

    if "powerlaw" in methods:
        results = run_parallel(_guarded(config, "powerlaw", lambda w: powerlaw_fit(w.series, w.peak)), windows, config.workers, "powerlaw")
        fits = {w.event.key: f for w, f in zip(windows, results) if not isinstance(f, Exception)}
        artifacts.save_powerlaw_fits(out_dir / artifacts.POWERLAW_FITS_FILE, windows, fits, config)
        r2 = [powerlaw_r2(w.series, fits[w.event.key]) for w in windows if w.event.key in fits]
        summary["powerlaw"] = dict(fitted=len(fits), r2=quartile_summary(r2))

    artifacts.write_json(out_dir / "fit_summary.json", summary, config)
    for method in methods:
        logger.info("fit method=%s median_r2=%.4f", method, summary[method]["r2"]["median"])
    return summary


def cmd_predict(config):
    out_dir = config.out_dir
    windows = artifacts.load_windows(out_dir)
    fits = None
    if "proposed" in config.methods and config.prior != "none":
        fits = artifacts.load_fits(out_dir / artifacts.FITS_FILE)
    plan = EvaluationPlan(
        methods=config.methods, prior=config.prior, t_obs=config.t_obs, horizon=config.horizon,
        regressor=config.regressor, folds=config.folds, seed=config.seed, workers=config.workers,
        fail_fast=config.fail_fast, fits=fits,
    )
    rows = evaluate_forecasts(windows, plan)
    artifacts.write_csv(
        out_dir / "metrics.csv",
        ("event", "category", "t_obs", "method", "prior", "ape_ts", "ape_cum", "error"),
        [dict(event=r.event, category=r.category, t_obs=r.t_obs, method=r.method, prior=r.prior,
              ape_ts=r.ape_ts, ape_cum=r.ape_cum, error=r.error) for r in rows],
        config,
    )
    summary = summarize_metrics(rows)
    artifacts.write_csv(
        out_dir / "metrics_summary.csv",
        ("method", "prior", "t_obs", "n", "excluded", "mean_ape_ts", "median_ape_ts", "mean_ape_cum", "median_ape_cum"),
        summary,
        config,
    )
    by_key = {w.event.key: w for w in windows}
    plot_rows = []
    for row in rows:
        if not row.predicted:
            continue
        window = by_key[row.event]
        first = window.peak.t_p + row.t_obs + 1
        for offset, value in enumerate(row.predicted):
            plot_rows.append(dict(event=row.event, t_obs=row.t_obs, method=row.method, hour=first + offset,
                                  observed=int(window.series.counts[first + offset]), predicted=value))
    artifacts.write_csv(out_dir / "plot_predict.csv",
                        ("event", "t_obs", "method", "hour", "observed", "predicted"), plot_rows, config)
    artifacts.write_json(out_dir / "predict.json", dict(aggregation="mean", summary=summary,
                                                        undefined=sum(1 for r in rows if not r.defined)), config)
    for item in summary:
        logger.info("predict method=%s prior=%s t_obs=%d mean_ape_ts=%.4f mean_ape_cum=%.4f excluded=%d",
                    item["method"], item["prior"], item["t_obs"], item["mean_ape_ts"], item["mean_ape_cum"], item["excluded"])
    return summary


def _fits_for(out_dir, kind):
    if kind in ("proposed", "response", "response-opp"):
        return artifacts.load_fits(out_dir / artifacts.FITS_FILE)
    if kind in ("spikem", "spikem-opp"):
        return artifacts.load_spikem_fits(out_dir / artifacts.SPIKEM_FITS_FILE)
    if kind == "powerlaw":
        return artifacts.load_powerlaw_fits(out_dir / artifacts.POWERLAW_FITS_FILE)
    return {}


def _center_curves(model):
    rows = []
    for index, center in enumerate(model.parameter_centers(FEATURE_NAMES)):
        params = PeakParams(
            a_minus=center["a_minus"], b_minus=center["b_minus"], tau_minus=center["tau_minus"],
            a_plus=center["a_plus"], b_plus=center["b_plus"], tau_plus=center["tau_plus"],
            alpha_c=float(np.clip(center["alpha_c"], 0.0, 0.999)), t_c=center["t_c"] % 24.0, t_p=-PLOT_OFFSETS[0],
        )
        curve = model_curve(params, len(PLOT_OFFSETS))
        rows.extend(dict(cluster=index, offset=offset, value=float(value)) for offset, value in zip(PLOT_OFFSETS, curve))
    return rows


def cmd_cluster(config):
    out_dir = config.out_dir
    windows = artifacts.load_windows(out_dir)
    kind = config.cluster_features
    keys, features = feature_matrix(kind, windows, _fits_for(out_dir, kind), config.circadian_features)
    if not keys:
        raise ConfigError(f"no events have usable {kind} features")
    category = {w.event.key: w.event.category for w in windows}
    labels = [category[key] for key in keys]
    k_range = (config.k_min, config.k_max)
    model = select_k(features, k_range, config.restarts, derive_seed(config.seed, "cluster"), config.standardize, config.workers)
    assigned = model.predict(features)
    runs, ami = ami_distribution(features, labels, k_range, config.restarts, derive_seed(config.seed, "ami"),
                                 config.standardize, config.workers)

    artifacts.write_csv(out_dir / "clusters.csv", ("event", "category", "cluster"),
                        [dict(event=k, category=c, cluster=int(a)) for k, c, a in zip(keys, labels, assigned)], config)
    artifacts.write_csv(out_dir / "ami.csv", ("restart", "k", "bic", "ami"),
                        [dict(restart=r.restart, k=r.k, bic=r.bic, ami=r.ami) for r in runs], config)
    centers = dict(
        features=kind, k=model.k, bic=model.bic, weights=model.weights, standardized=config.standardize,
        centers=model.parameter_centers(FEATURE_NAMES) if kind == "proposed" and config.circadian_features == "raw"
        else model.feature_centers(),
        composition=cluster_composition(assigned, labels),
    )
    artifacts.write_json(out_dir / "centers.json", centers, config)
    if kind == "proposed" and config.circadian_features == "raw":
        artifacts.write_csv(out_dir / "plot_clusters.csv", ("cluster", "offset", "value"), _center_curves(model), config)
    summary = dict(features=kind, events=len(keys), k=model.k, ami=ami, standardized=config.standardize,
                   circadian_features=config.circadian_features)
    artifacts.write_json(out_dir / "cluster.json", summary, config)
    logger.info("cluster features=%s k=%d ami_median=%.3f", kind, model.k, ami["median"])
    return summary


def cmd_classify(config):
    out_dir = config.out_dir
    windows = artifacts.load_windows(out_dir)
    samples = build_match_samples(config.feature_set, windows, _fits_for(out_dir, config.feature_set))
    features, labels = sample_arrays(samples)
    result = crossvalidate(features, labels, config.folds, derive_seed(config.seed, "classify"), config.svm_c, config.workers)
    artifacts.write_csv(
        out_dir / "cv.csv",
        ("feature_set", "fold", "accuracy"),
        [dict(feature_set=config.feature_set, fold=i, accuracy=a) for i, a in enumerate(result.fold_accuracy)]
        + [dict(feature_set="baseline", fold=i, accuracy=a) for i, a in enumerate(result.baseline_accuracy)],
        config,
    )
    values, counts = np.unique(labels, return_counts=True)
    summary = dict(
        feature_set=config.feature_set, samples=len(samples), mean_accuracy=result.mean_accuracy,
        mean_baseline=result.mean_baseline, label_counts=dict(zip(values.tolist(), counts.tolist())),
        standardized=True, log_transformed=config.feature_set != "fraction",
    )
    artifacts.write_json(out_dir / "classify.json", summary, config)
    logger.info("classify feature_set=%s accuracy=%.3f baseline=%.3f", config.feature_set, result.mean_accuracy, result.mean_baseline)
    return summary


def _windows_and_fits(out_dir):
    windows = artifacts.load_windows(out_dir)
    fits = artifacts.load_fits(out_dir / artifacts.FITS_FILE)
    return windows, [fits.get(w.event.key) for w in windows]


def cmd_decompose(config):
    out_dir = config.out_dir
    windows, fits = _windows_and_fits(out_dir)
    rows = []
    for window, fit in zip(windows, fits):
        if fit is None or not fit.converged:
            continue
        mix = decompose_circadian(fit.params.alpha_c, fit.params.t_c)
        rows.append(dict(event=window.event.key, category=window.event.category, p_us=mix.p_us,
                         p_uk=mix.p_uk, p_au=mix.p_au, dominant=mix.dominant()))
    artifacts.write_csv(out_dir / "regions.csv", ("event", "category", "p_us", "p_uk", "p_au", "dominant"), rows, config)
    shares = region_shares(fits, [w.event for w in windows])
    artifacts.write_json(out_dir / "decompose.json", dict(events=len(rows), shares=shares), config)
    return shares


def cmd_report(config):
    out_dir = config.out_dir
    windows, fits = _windows_and_fits(out_dir)
    events = [w.event for w in windows]
    report = corpus_report(fits, events, windows)
    artifacts.write_json(out_dir / "report.json", report, config)
    table = category_parameter_table(fits, events)
    if table:
        artifacts.write_csv(out_dir / "category_params.csv", tuple(table[0].keys()), table, config)
    logger.info("report events=%d converged=%d median_r2=%.4f", report["events"], report["converged"], report["r2"]["median"])
    return report


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "cluster": cmd_cluster,
    "classify": cmd_classify,
    "decompose": cmd_decompose,
    "report": cmd_report,
}


def configure_logging(verbose=False, quiet=False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s %(message)s", stream=sys.stderr, force=True)


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.verbose, args.quiet)
        config = config_from_args(args)
        Path(config.out_dir).mkdir(parents=True, exist_ok=True)
        COMMANDS[config.command](config)
    except PeakLabError as exc:
        logging.getLogger("peaklab").error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    return 0
