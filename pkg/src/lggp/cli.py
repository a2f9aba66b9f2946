"""Command-line interface.

Usage::

    lggp <mode> [--config FILE] [--set KEY=VALUE ...] [--output DIR]

Modes: simulate, fit-hmc, fit-hmc-short, fit-pl, fit-pl-tempered, predict.
Configuration files are flat ``key = value`` text (``#`` starts a comment)
or a ``summary.json`` written by a previous run, whose config echo is reused.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
import argparse
import csv
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import model as M
from . import schemes as S
from .exceptions import InvalidInputError, LggpError
from .gp_core import KernelParams, as_grid
from .sampler import HmcConfig

logger = logging.getLogger(__name__)

MODES = ("simulate", "fit-hmc", "fit-hmc-short", "fit-pl", "fit-pl-tempered", "predict")
FIT_MODES = MODES[1:5]
OUTPUT_ENV = "LGGP_OUTPUT_DIR"

PRIOR_KEYS = (
    "gamma_mu_alpha", "rho_mu_alpha", "gamma_mu_beta", "rho_mu_beta",
    "rho_sigma_e_alpha", "rho_sigma_e_beta", "rho_sigma_s_alpha", "rho_sigma_s_beta",
    "gamma_l_alpha", "rho_l_alpha", "bound_alpha", "gamma_l_beta", "rho_l_beta", "bound_beta",
)


def _ints(text):
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if str(text).strip().lower() in ("", "none") else float(text)


def _opt_int(text):
    return None if str(text).strip().lower() in ("", "none") else int(text)


def _str(text):
    return str(text).strip()


# key -> (parser, default)
CONFIG_KEYS = {
    "preset": (_str, "synthetic"),
    "dataset": (_str, ""),
    "spectrum": (_str, ""),
    "cutoff": (_opt_float, None),
    "y_max": (float, 10.0),
    "posterior": (_str, ""),
    "test_grid": (_str, ""),
    "mean_vector": (_str, ""),
    "rate": (float, 1000.0),
    "K": (int, 128),
    "mu_alpha_true": (float, 2.0),
    "l_alpha_true": (float, 0.05),
    "sigma_s_alpha_true": (float, 1.0),
    "sigma_e_alpha_true": (float, 1e-3),
    "mu_beta_true": (float, 1.0),
    "l_beta_true": (float, 0.5),
    "sigma_s_beta_true": (float, 1.0),
    "sigma_e_beta_true": (float, 1e-3),
    "J": (int, 10_000),
    "T": (int, 5),
    "pl_tol": (_opt_float, 1e-3),
    "n_samples": (_opt_int, None),
    "n_warmup": (_opt_int, None),
    "target_accept": (float, 0.99),
    "max_tree_depth": (int, 10),
    "mass_matrix": (_str, "diagonal"),
    "kappas": (_floats, (0.0, 0.5, 1.0)),
    "temper_warmups": (_ints, (100, 100, 1000)),
    "temper_samples": (int, 1000),
    "n_predict": (_opt_int, None),
    "seed": (int, 0),
    "output_dir": (_str, "lggp_output"),
    "workers": (int, 1),
    "trace": (_bool, False),
}
for _key in PRIOR_KEYS:
    CONFIG_KEYS[_key] = (_opt_float, None)


# input paths read by each mode; only these must exist
PATH_KEYS = {
    "simulate": ("mean_vector",),
    "predict": ("posterior", "test_grid"),
}


class ConfigError(InvalidInputError):
    """Invalid configuration or input file (exit code 2)."""


# ------------------------------------------------------------ configuration


def parse_config_text(text, source="<config>"):
    """Parse flat ``key = value`` lines into a dict of raw strings."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        raw[key] = value
    return raw


def read_config_file(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if path.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        data = data.get("config", data)
        return {k: _format_value(v) for k, v in data.items() if k != "mode"}
    return parse_config_text(text, str(path))


def _format_value(value):
    if value is None:
        return "none"
    if isinstance(value, (list, tuple)):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def resolve_config(raw, mode=None):
    """Validate raw key/value strings and fill defaults.

    With ``mode`` given, input paths used by that mode must exist.

    Raises
    ------
    ConfigError
        On unknown keys or unparsable values.
    """
    unknown = sorted(set(raw) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    config = {}
    for key, (parse, default) in CONFIG_KEYS.items():
        if key in raw:
            try:
                config[key] = parse(raw[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw[key]!r} ({exc})") from exc
        else:
            config[key] = default
    if config["preset"] not in M.PRESETS:
        raise ConfigError(f"unknown preset {config['preset']!r}; choose from {sorted(M.PRESETS)}")
    if config["J"] < 2 or config["T"] < 1 or config["K"] < 1 or config["workers"] < 1:
        raise ConfigError("J must be >= 2, T >= 1, K >= 1, workers >= 1")
    if mode in FIT_MODES:
        path_keys = ("spectrum",) if config["spectrum"] else ("dataset",)
    else:
        path_keys = PATH_KEYS.get(mode, ())
    for key in path_keys:
        if config[key] and not Path(config[key]).is_file():
            raise ConfigError(f"{key}: no such file: {config[key]}")
    return config


def prior_spec(config):
    """Preset prior with any explicitly configured values replaced."""
    base = M.PRESETS[config["preset"]]
    rows = {"alpha": base.alpha.as_row(), "beta": base.beta.as_row()}
    field_index = {"gamma_mu": 0, "rho_mu": 1, "rho_sigma_e": 2, "rho_sigma_s": 3,
                   "gamma_l": 4, "rho_l": 5, "bound": 6}
    for key in PRIOR_KEYS:
        if config[key] is None:
            continue
        name, process = key.rsplit("_", 1)
        rows[process][field_index[name]] = config[key]
    return M.HyperPriorSpec(M.ProcessPrior(*rows["alpha"]), M.ProcessPrior(*rows["beta"]))


# ------------------------------------------------------------ data files


def _read_numeric_csv(path, required_prefix=None):
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ConfigError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ConfigError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: non-numeric value in {row}") from None
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def load_dataset(path):
    """Read a dataset CSV with header ``x_1, ..., x_D, y``."""
    header, data = _read_numeric_csv(path)
    D = len(header) - 1
    expected = [f"x_{d + 1}" for d in range(D)] + ["y"]
    if D < 1 or header != expected:
        raise ConfigError(f"{path}: header must be {','.join(expected)}")
    if data.shape[0] == 0:
        raise ConfigError(f"{path}: no observations")
    y = data[:, -1]
    bad = np.flatnonzero(~(np.isfinite(y) & (y > 0)))
    if bad.size:
        raise ConfigError(f"{path}:{bad[0] + 2}: y must be positive, got {y[bad[0]]!r}")
    if not np.all(np.isfinite(data[:, :-1])):
        raise ConfigError(f"{path}: non-finite coordinates")
    return M.Dataset(data[:, :-1], y)


def load_grid(path):
    """Read a grid CSV with header ``x_1, ..., x_D``."""
    header, data = _read_numeric_csv(path)
    expected = [f"x_{d + 1}" for d in range(len(header))]
    if header != expected:
        raise ConfigError(f"{path}: header must be {','.join(expected)}")
    return as_grid(data)


def load_vector(path):
    """Read a single-column CSV (header line, one value per row)."""
    _, data = _read_numeric_csv(path)
    if data.shape[1] != 1:
        raise ConfigError(f"{path}: expected a single column")
    return data[:, 0]


def preprocess_spectrum(x, y, cutoff=None, y_max_target=10.0):
    """Truncate a spectrum at ``cutoff``, rescale y and map x onto [0, 1].

    Points with ``x <= cutoff`` are kept. Intensities are scaled so that
    their maximum equals ``y_max_target``.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise InvalidInputError("x and y must have the same length")
    if cutoff is not None:
        if not x.min() <= cutoff:
            raise InvalidInputError(f"cutoff {cutoff} lies below the x range")
        keep = x <= cutoff
        x, y = x[keep], y[keep]
    if x.size == 0:
        raise InvalidInputError("no points remain after truncation")
    if y.max() <= 0:
        raise InvalidInputError("spectrum has no positive intensity")
    y = y * (y_max_target / y.max())
    span = x.max() - x.min()
    x = (x - x.min()) / span if span > 0 else np.zeros_like(x)
    return M.Dataset(x, y)


def load_spectrum(path, cutoff, y_max):
    header, data = _read_numeric_csv(path)
    if data.shape[1] != 2:
        raise ConfigError(f"{path}: spectrum needs two columns (shift, intensity)")
    return preprocess_spectrum(data[:, 0], data[:, 1], cutoff, y_max)


def _fmt(v):
    return format(float(v), ".17g")


def write_dataset(dataset, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x_{d + 1}" for d in range(dataset.D)] + ["y"])
        for row, y in zip(dataset.grid, dataset.y):
            writer.writerow([_fmt(v) for v in row] + [_fmt(y)])


# ------------------------------------------------------------ export


def write_summary_csv(path, summary):
    """Per-location quantile table; ``location`` indexes the grid rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["location", "mean", "q05", "q50", "q95"])
        for k in range(summary.mean.size):
            writer.writerow([k] + [_fmt(v[k]) for v in
                                   (summary.mean, summary.q05, summary.q50, summary.q95)])


def result_summary(result, config):
    """JSON-ready summary of an inference result."""
    draws = result.hyper_draws
    q05, q50, q95 = np.quantile(draws, [0.05, 0.5, 0.95], axis=0)
    hyper = {
        name: {
            "mean": float(draws[:, i].mean()),
            "sd": float(draws[:, i].std(ddof=1)) if draws.shape[0] > 1 else 0.0,
            "q05": float(q05[i]),
            "q50": float(q50[i]),
            "q95": float(q95[i]),
        }
        for i, name in enumerate(result.hyper_names)
    }
    return {
        "mode": result.mode,
        "seed": result.seed,
        "divergences": int(result.divergences),
        "wall_time": {k: float(v) for k, v in result.wall_time.items()},
        "hyperparameters": hyper,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in config.items()},
    }


def write_summary(summary, path):
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def export_results(result, directory, config=None):
    """Write summary.json, latent/predictive quantile CSVs and hyper chains.

    Files are written to a scratch directory first and moved into place
    only when every file has been written.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=".lggp-", dir=directory))
    try:
        write_summary(result_summary(result, config or result.config), scratch / "summary.json")
        write_summary_csv(scratch / "latent_alpha.csv", result.latent["alpha"])
        write_summary_csv(scratch / "latent_beta.csv", result.latent["beta"])
        if result.predictive is not None:
            write_summary_csv(scratch / "predictive_y.csv", result.predictive)
        with open(scratch / "hyper_chains.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(result.hyper_names)
            writer.writerows([_fmt(v) for v in row] for row in result.hyper_draws)
        _write_posterior(result, scratch / "posterior.npz")
        written = []
        for item in sorted(scratch.iterdir()):
            os.replace(item, directory / item.name)
            written.append(directory / item.name)
        return written
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


def _write_posterior(result, path):
    payload = {
        "mode": np.array(result.mode),
        "grid": result.grid,
        "hyper_draws": result.hyper_draws,
        "hyper_names": np.array(result.hyper_names),
    }
    if result.alpha_draws is not None:
        payload["alpha_draws"] = result.alpha_draws
        payload["beta_draws"] = result.beta_draws
    if result.moments is not None:
        payload["m"] = result.moments.m
        payload["P"] = result.moments.P
    if result.hyper_mean is not None:
        for name, params in zip(("alpha", "beta"), result.hyper_mean):
            payload[f"hyper_mean_{name}"] = np.concatenate(
                [[params.mean, params.noise_std, params.signal_std], params.length_scales]
            )
    np.savez(path, **payload)


def load_posterior(path):
    """Rebuild a prediction-ready :class:`~lggp.schemes.InferenceResult`."""
    from .linearization import MomentState

    try:
        data = np.load(path)
    except OSError as exc:
        raise ConfigError(f"cannot read posterior {path}: {exc}") from exc
    with data:
        mode = str(data["mode"])
        result = S.InferenceResult(
            mode=mode,
            grid=data["grid"],
            latent={},
            hyper_names=[str(n) for n in data["hyper_names"]],
            hyper_draws=data["hyper_draws"],
        )
        if "alpha_draws" in data:
            result.alpha_draws = data["alpha_draws"]
            result.beta_draws = data["beta_draws"]
        if "m" in data:
            result.moments = MomentState(data["m"], data["P"])
        if "hyper_mean_alpha" in data:
            result.hyper_mean = tuple(
                KernelParams(r[0], r[1], r[2], r[3:])
                for r in (data["hyper_mean_alpha"], data["hyper_mean_beta"])
            )
    return result


# ------------------------------------------------------------ run


def _dataset_from_config(config):
    if config["spectrum"]:
        return load_spectrum(config["spectrum"], config["cutoff"], config["y_max"])
    if not config["dataset"]:
        raise ConfigError("a 'dataset' or 'spectrum' path is required")
    return load_dataset(config["dataset"])


def _hmc_config(config, preset):
    base = {"long": HmcConfig.long, "short": HmcConfig.short}[preset]()
    n_samples = config["n_samples"] if config["n_samples"] is not None else base.n_samples
    n_warmup = config["n_warmup"] if config["n_warmup"] is not None else base.n_warmup
    try:
        return HmcConfig(
            n_samples=n_samples,
            n_warmup=n_warmup,
            target_accept=config["target_accept"],
            max_tree_depth=config["max_tree_depth"],
            mass_matrix_mode=config["mass_matrix"],
            seed=config["seed"],
        )
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from exc


def _simulate(config, out):
    rng = np.random.default_rng(config["seed"])
    grid = np.linspace(0.0, 1.0, config["K"])
    if config["mean_vector"]:
        mean_vector = load_vector(config["mean_vector"])
        grid = np.linspace(0.0, 1.0, mean_vector.size)
        dataset, alpha, beta = S.simulate_from_mean(grid, mean_vector, config["rate"], rng)
    else:
        truth = tuple(
            KernelParams(
                config[f"mu_{p}_true"], config[f"sigma_e_{p}_true"],
                config[f"sigma_s_{p}_true"], [config[f"l_{p}_true"]],
            )
            for p in ("alpha", "beta")
        )
        dataset, alpha, beta = S.simulate_lggp(grid, truth, rng)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(dataset, out / "dataset.csv")
    with open(out / "truth.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x_{d + 1}" for d in range(dataset.D)] + ["alpha", "beta", "mean"])
        for k in range(dataset.K):
            writer.writerow(
                [_fmt(v) for v in dataset.grid[k]]
                + [_fmt(alpha[k]), _fmt(beta[k]), _fmt(np.exp(alpha[k] - beta[k]))]
            )
    return {"simulate": 0.0}


def _predict(config, out):
    if not config["posterior"]:
        raise ConfigError("predict needs a 'posterior' path (posterior.npz of a fit)")
    result = load_posterior(config["posterior"])
    test = load_grid(config["test_grid"]) if config["test_grid"] else result.grid
    rng = np.random.default_rng(config["seed"])
    t0 = time.perf_counter()
    a_star, b_star = S.predict_latent(result, test, config["n_predict"], rng)
    _, summary = S.predict_data(a_star, b_star, rng)
    wall = time.perf_counter() - t0
    out.mkdir(parents=True, exist_ok=True)
    write_summary_csv(out / "predictive_y.csv", summary)
    write_summary_csv(out / "predictive_alpha.csv", S.Summary.from_draws(a_star))
    write_summary_csv(out / "predictive_beta.csv", S.Summary.from_draws(b_star))
    return {"prediction": wall}


def run(mode, config):
    """Execute one mode with a resolved config; returns the wall-time dict."""
    out = Path(os.environ.get(OUTPUT_ENV) or config["output_dir"])
    if mode == "simulate":
        return _simulate(config, out)
    if mode == "predict":
        return _predict(config, out)
    dataset = _dataset_from_config(config)
    spec = prior_spec(config)
    seed = config["seed"]
    if mode in ("fit-hmc", "fit-hmc-short"):
        hmc = _hmc_config(config, "long" if mode == "fit-hmc" else "short")
        result = S.fit_direct_hmc(dataset, spec, hmc, seed, mode=mode[4:],
                                  n_predict=config["n_predict"])
    elif mode == "fit-pl":
        result = S.fit_pl_approx(dataset, spec, config["J"], config["T"],
                                 _hmc_config(config, "short"), seed,
                                 n_predict=config["n_predict"], tol=config["pl_tol"])
    else:
        try:
            schedule = S.TemperSchedule(config["kappas"], config["temper_warmups"],
                                        config["temper_samples"])
        except InvalidInputError as exc:
            raise ConfigError(str(exc)) from exc
        result = S.fit_pl_tempered(dataset, spec, config["J"], config["T"], schedule,
                                   _hmc_config(config, "short"), seed,
                                   n_predict=config["n_predict"], tol=config["pl_tol"])
    export_results(result, out, config)
    if config["trace"] and result.moments is not None and result.moments.trace:
        from .linearization import write_trace

        write_trace(result.moments.trace, out / "pl_trace.csv")
    return result.wall_time


def build_parser():
    parser = argparse.ArgumentParser(prog="lggp", description="Log-Gaussian gamma process inference")
    sub = parser.add_subparsers(dest="mode", required=True, metavar="MODE")
    for mode in MODES:
        p = sub.add_parser(mode)
        p.add_argument("--config", "-c", help="key = value file or summary.json")
        p.add_argument("--set", "-s", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--output", "-o", help="output directory")
        p.add_argument("--verbose", "-v", action="store_true")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = read_config_file(args.config) if args.config else {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            raw[key.strip()] = value.strip()
        if args.output:
            raw["output_dir"] = args.output
        config = resolve_config(raw, args.mode)
        wall = run(args.mode, config)
    except ConfigError as exc:
        print(f"lggp: error: {exc}", file=sys.stderr)
        return 2
    except (LggpError, OSError, ValueError) as exc:
        print(f"lggp: failed: {exc}", file=sys.stderr)
        return 1
    for phase, seconds in wall.items():
        logger.info("%s: %.3f s", phase, seconds)
    return 0


if __name__ == "__main__":
    sys.exit(main())
