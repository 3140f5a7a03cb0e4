"""Command-line pipeline: ``simulate``, ``fit``, ``predict``, ``evaluate``.

Settings come from a TOML file with one table per stage (``[simulate]``,
``[data]``, ``[fit]``, ``[predict]``); relative paths are resolved against
the file's directory.  Any key can be overridden by an environment
variable ``IBNRCOX_<TABLE>_<KEY>`` (e.g. ``IBNRCOX_FIT_G=3``), and the
command-line flags override both.

Exit codes: 0 success, 2 invalid input, 3 non-convergence, 4 I/O failure.
"""

from __future__ import annotations

import csv
import io
import logging
import os
import sys
import warnings
from pathlib import Path

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data import DataValidationError, ObservedDataset, ingest
from .em.common import ConvergenceWarning, FitOptions
from .estimators import MODELS
from .predict import chain_ladder, evaluate, runoff_triangle, simulate_ibnr, tail_beyond_D
from .serialize import dumps, fit_from_dict, fit_to_dict, read_json
from .synthetic import ScenarioConfig, generate, write_scenario

logger = logging.getLogger("ibnrcox")

EXIT_OK, EXIT_VALIDATION, EXIT_CONVERGENCE, EXIT_IO = 0, 2, 3, 4
MODEL_ORDER = ("cl", "cm", "mm", "dm")
ENV_PREFIX = "IBNRCOX_"


class NonConvergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def _parse_env_value(raw: str):
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def load_config(path, environ=None) -> dict:
    """Read the TOML file (if any), apply ``IBNRCOX_*`` overrides, resolve paths."""
    environ = os.environ if environ is None else environ
    cfg: dict = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        with path.open("rb") as fh:
            try:
                cfg = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise DataValidationError(f"{path}: {exc}") from exc
        base = path.resolve().parent
    for key, raw in sorted(environ.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        parts = key[len(ENV_PREFIX) :].lower().split("_", 1)
        if len(parts) != 2 or not parts[1]:
            continue
        cfg.setdefault(parts[0], {})[parts[1]] = _parse_env_value(raw)
    cfg["_base"] = str(base)
    return cfg


def _path(cfg: dict, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else Path(cfg["_base"]) / p


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise DataValidationError(f"[{name}] must be a table")
    return sec


def _fit_options(sec: dict, **overrides) -> FitOptions:
    names = FitOptions.__dataclass_fields__
    values = {k: v for k, v in sec.items() if k in names}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return FitOptions(**values)


def _valuation_dates(cfg: dict, dataset_end) -> list[str]:
    data = _section(cfg, "data")
    if "valuation_dates" in data:
        return [str(d) for d in data["valuation_dates"]]
    if "valuation_date" in data:
        return [str(data["valuation_date"])]
    truth = data.get("truth")
    if truth and _path(cfg, truth).exists():
        return list(read_json(_path(cfg, truth))["valuation_dates"])
    return [str(dataset_end)]


def _load_datasets(cfg: dict) -> dict[str, ObservedDataset]:
    """One dataset per valuation date, all censored from a single ingest at the latest date."""
    data = _section(cfg, "data")
    for key in ("policies", "claims", "D"):
        if key not in data:
            raise DataValidationError(f"[data] needs '{key}'")
    dates = _valuation_dates(cfg, data.get("valuation_date", ""))
    if not dates or dates == [""]:
        raise DataValidationError("[data] needs valuation_date or valuation_dates")
    latest = max(np.datetime64(d, "D") for d in dates)
    full = ingest(
        _path(cfg, data["policies"]),
        _path(cfg, data["claims"]),
        granularity=data.get("granularity", "monthly"),
        valuation_date=latest,
        D=int(data["D"]),
        start_date=data.get("start_date"),
        bins=data.get("bins"),
        delay_time_features=data.get("delay_time_features", "none"),
    )
    out = {}
    for d in sorted(dates):
        out[str(np.datetime64(d, "D"))] = full if np.datetime64(d, "D") == latest else full.at_valuation(d)
    return out


def _truth(cfg: dict) -> dict | None:
    truth = _section(cfg, "data").get("truth")
    if truth and _path(cfg, truth).exists():
        return {k: int(v) for k, v in read_json(_path(cfg, truth))["ibnr"].items()}
    return None


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(v):
    return "" if v is None else repr(float(v)) if isinstance(v, float) else str(v)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """IBNR claim-count models driven by a hidden Markov frequency process."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="TOML settings file.")
@click.option("--seed", type=int, default=None, help="Overrides [simulate] seed.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Output directory.")
def simulate(config_path, seed, out_dir):
    """Generate a synthetic portfolio: policies.csv, claims.csv, truth.json."""
    cfg = load_config(config_path)
    sec = dict(_section(cfg, "simulate"))
    out = _path(cfg, out_dir or sec.pop("out_dir", "."))
    sec.pop("out_dir", None)
    if seed is not None:
        sec["seed"] = seed
    try:
        scenario = ScenarioConfig.from_dict(sec)
    except (TypeError, ValueError) as exc:
        raise DataValidationError(f"[simulate]: {exc}") from exc
    policies, claims, truth = generate(scenario)
    summary = write_scenario(out, policies, claims, truth)
    click.echo(dumps(summary), nl=False)


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="TOML settings file.")
@click.option("--model", type=click.Choice(MODEL_ORDER), default=None)
@click.option("--g", type=int, default=None, help="Number of hidden states.")
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, default=None, help="Threads for per-lag regressions.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--allow-nonconverged", is_flag=True, help="Exit 0 even if a fit did not converge.")
def fit(config_path, model, g, seed, workers, out_dir, allow_nonconverged):
    """Fit a model at every valuation date; writes one model JSON and trace CSV per date."""
    cfg = load_config(config_path)
    sec = _section(cfg, "fit")
    model = model or sec.get("model", "mm")
    out = _path(cfg, out_dir or sec.get("out_dir", "."))
    datasets = _load_datasets(cfg)
    nonconverged = []
    for date, ds in datasets.items():
        if model == "cl":
            res = chain_ladder(runoff_triangle(ds.runoff))
            payload = {"kind": "cl", "valuation_date": date, "factors": res.factors, "ibnr": res.ibnr,
                       "latest": res.latest, "ultimate": res.ultimate}
            _write(out / f"cl_{date}.json", dumps(payload))
            continue
        opts = _fit_options(sec, g=g, seed=seed, workers=workers or sec.get("workers") or os.cpu_count() or 1)
        est_params = {k: v for k, v in sec.items() if k in MODELS[model]().get_params()}
        est_params.update({k: v for k, v in opts.__dict__.items() if k in MODELS[model]().get_params()})
        est = MODELS[model](**est_params)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            est.fit(ds)
        fr = est.fit_result_
        payload = fit_to_dict(fr, ds.freq_feature_names, ds.delay_feature_names)
        payload["valuation_date"] = date
        if est.selection_ is not None:
            payload["selection"] = {"criterion": est.selection_.criterion, "scores": est.selection_.scores()}
        _write(out / f"{model}_{date}.json", dumps(payload))
        trace = [(i, repr(float(v))) for i, v in enumerate(fr.loglik_trace)]
        _write(out / f"{model}_{date}_trace.csv", _csv_text(["iteration", "loglik"], trace))
        logger.info("%s %s: loglik %.4f after %d iterations", model, date, fr.loglik, fr.n_iter)
        if not fr.converged:
            nonconverged.append(date)
    if nonconverged:
        click.echo(f"not converged at: {', '.join(nonconverged)}", err=True)
        if not allow_nonconverged:
            raise NonConvergenceError("fit did not converge (use --allow-nonconverged to accept)")


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="TOML settings file.")
@click.option("--model", type=click.Choice(MODEL_ORDER), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--models", "models_dir", type=click.Path(file_okay=False), default=None, help="Directory of fitted models.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--emit-draws", is_flag=True, help="Also write the simulated draws as CSV.")
@click.option("--include-tail", is_flag=True, help="Add the empirical beyond-D tail to each estimate.")
def predict(config_path, model, seed, models_dir, out_dir, emit_draws, include_tail):
    """Simulate IBNR counts per valuation date; writes results JSON and plot-data CSV."""
    cfg = load_config(config_path)
    fsec = _section(cfg, "fit")
    psec = _section(cfg, "predict")
    model = model or psec.get("model", fsec.get("model", "mm"))
    models_path = _path(cfg, models_dir or psec.get("models_dir", fsec.get("out_dir", ".")))
    out = _path(cfg, out_dir or psec.get("out_dir", "."))
    n_sims = int(psec.get("n_sims", 1000))
    seed = int(psec.get("seed", 0)) if seed is None else seed
    include_tail = include_tail or bool(psec.get("include_tail", False))
    emit_draws = emit_draws or bool(psec.get("emit_draws", False))
    datasets = _load_datasets(cfg)
    truth = _truth(cfg)
    dates = {}
    draws_rows = []
    for k, (date, ds) in enumerate(datasets.items()):
        tail = tail_beyond_D(ds.runoff) if include_tail else 0.0
        if model == "cl":
            res = chain_ladder(runoff_triangle(ds.runoff))
            row = {"point": res.ibnr + tail, "lower": None, "upper": None}
        else:
            stored = read_json(models_path / f"{model}_{date}.json")
            if stored.get("kind") != model:
                raise DataValidationError(f"model file for {date} holds kind {stored.get('kind')!r}, not {model!r}")
            if stored.get("freq_feature_names") is not None and stored["freq_feature_names"] != ds.freq_feature_names:
                raise DataValidationError(f"model file for {date} was fitted on different covariates")
            fr = fit_from_dict(stored)
            est = simulate_ibnr(
                fr, ds, n_sims, np.random.SeedSequence([seed, k]),
                states=psec.get("states", "viterbi"), dm_delay=psec.get("dm_delay", "prior"),
            )
            est.tail = tail
            row = est.summary()
            if emit_draws:
                draws_rows.extend((date, j, int(v)) for j, v in enumerate(est.draws))
        if truth is not None and date in truth:
            row["actual"] = truth[date]
            if truth[date] > 0:
                row["ape"] = abs(row["point"] - truth[date]) / truth[date]
        dates[date] = row
    payload = {"model": model, "n_sims": n_sims, "seed": seed, "include_tail": include_tail, "dates": dates}
    if truth is not None and all(d in truth for d in dates):
        payload["metrics"] = _metrics(dates, truth)
    _write(out / f"results_{model}.json", dumps(payload))
    plot = [(d, _num(r["point"]), _num(r["lower"]), _num(r["upper"]), _num(r.get("actual"))) for d, r in dates.items()]
    _write(out / f"plot_{model}.csv", _csv_text(["date", "point", "lower", "upper", "actual"], plot))
    if emit_draws:
        _write(out / f"draws_{model}.csv", _csv_text(["date", "draw", "ibnr"], draws_rows))
    click.echo(dumps(payload.get("metrics", {"dates": len(dates)})), nl=False)


def _metrics(dates: dict, truth: dict) -> dict:
    m = evaluate({d: r for d, r in dates.items()}, {d: truth[d] for d in dates})
    m.pop("per_date")
    return m


@cli.command(name="evaluate")
@click.argument("results", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--truth", "truth_path", type=click.Path(dir_okay=False), default=None, help="truth.json of the scenario.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None, help="CSV file for the table.")
def evaluate_cmd(results, truth_path, out_path):
    """Compare results JSONs: mean/median/SD of absolute percentage errors and coverage."""
    loaded = {}
    for path in results:
        r = read_json(path)
        loaded[r["model"]] = r
    truth = None
    if truth_path is not None:
        truth = {k: int(v) for k, v in read_json(truth_path)["ibnr"].items()}
    date_sets = {tuple(sorted(r["dates"])) for r in loaded.values()}
    if len(date_sets) != 1:
        raise DataValidationError("results cover different valuation dates")
    order = sorted(loaded, key=lambda k: (MODEL_ORDER.index(k) if k in MODEL_ORDER else len(MODEL_ORDER), k))
    table = {}
    for name in order:
        dates = loaded[name]["dates"]
        actual = {}
        for d, row in dates.items():
            if truth is not None:
                if d not in truth:
                    raise DataValidationError(f"truth has no IBNR count for {d}")
                actual[d] = truth[d]
            elif "actual" in row:
                actual[d] = row["actual"]
            else:
                raise DataValidationError(f"no actual IBNR count for {d}; pass --truth")
        table[name] = evaluate(dates, actual)
    rows = [
        ("Mean", *(_num(table[n]["mean_ape"]) for n in order)),
        ("Median", *(_num(table[n]["median_ape"]) for n in order)),
        ("SD", *(_num(table[n]["sd_ape"]) for n in order)),
        ("Coverage", *(_num(table[n].get("coverage_count")) for n in order)),
        ("Dates", *(str(table[n]["n_dates"]) for n in order)),
    ]
    text = _csv_text(["statistic", *[n.upper() for n in order]], rows)
    if out_path:
        _write(Path(out_path), text)
    click.echo(text, nl=False)


def main(argv=None) -> int:
    """Console entry point; maps failures onto the documented exit codes."""
    try:
        cli.main(args=argv, prog_name="ibnrcox", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return EXIT_VALIDATION
    except NonConvergenceError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_CONVERGENCE
    except (DataValidationError, ValueError, KeyError, TypeError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_VALIDATION
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
