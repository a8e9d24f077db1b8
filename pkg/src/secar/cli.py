"""Command-line surface: simulate | fit | residuals | bias-study | corr.

Configuration is a plain ``key = value`` text file; any key can be overridden
on the command line with ``-o key=value``. Exit codes: 0 success, 2
usage/config error, 3 numerical failure. A manifest.json recording the
resolved configuration and seed accompanies every output directory; all
machine-readable outputs are byte-reproducible given the same config and
seed (the fit report's timing line is the one documented exception).
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, io
from .diagnostics import (BiasStudyConfig, bias_study, effective_parameters,
                          pit_residuals, spatial_correlation)
from .graph import CarStructure, build_torus_lattice, load_graph
from .inference import (FitError, GridSpec, PriorSpec, credible_intervals,
                        explore_grid, maximize_posterior)
from .mcmc import posterior_summary, run_chains
from .mode import ModeError
from .model import CovariateDesign, ModelParams, simulate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

FIT_METHODS = ("la1", "xla", "xla-no6", "mcmc")


class ConfigError(ValueError):
    pass


def parse_config_file(path):
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


class Settings:
    """Config-file values overridden by -o pairs, with typed access."""

    def __init__(self, args):
        self.values = {}
        if getattr(args, "config", None):
            self.values.update(parse_config_file(args.config))
        for pair in getattr(args, "override", None) or []:
            if "=" not in pair:
                raise ConfigError(f"override {pair!r} is not key=value")
            key, value = pair.split("=", 1)
            self.values[key.strip()] = value.strip()
        self.used = set()

    def get(self, key, default=None, cast=str):
        self.used.add(key)
        if key not in self.values:
            return default
        raw = self.values[key]
        try:
            if cast is bool:
                return raw.lower() in ("1", "true", "yes", "on")
            return cast(raw)
        except ValueError:
            raise ConfigError(f"config key {key}={raw!r} is not a valid {cast.__name__}") from None

    def require(self, key, cast=str):
        value = self.get(key, None, cast)
        if value is None:
            raise ConfigError(f"missing required config key {key!r}")
        return value

    def warn_unused(self):
        unused = set(self.values) - self.used
        if unused:
            raise ConfigError(f"unrecognized config keys: {sorted(unused)}")


def _out_dir(settings):
    out = Path(settings.get("out", "secar-out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_car(settings):
    graph_path = settings.get("graph")
    if graph_path:
        graph = load_graph(graph_path, strict=settings.get("strict_graph", False, bool))
    else:
        rows = settings.get("rows", None, int)
        cols = settings.get("cols", None, int)
        if rows is None or cols is None:
            raise ConfigError("need either graph=<path> or rows=/cols= for a torus lattice")
        graph = build_torus_lattice(rows, cols)
    return CarStructure.from_graph(graph)


def _load_panel_design(settings, car):
    counts_path = settings.require("counts")
    panel = io.read_counts_csv(counts_path)
    if panel.n_d != car.n_d:
        raise ConfigError(f"counts file has {panel.n_d} locations, graph has {car.n_d}")
    cov_path = settings.get("covariates")
    if cov_path:
        design = io.read_covariates_csv(cov_path, panel.T, panel.n_d)
        standardize = settings.get("standardize", "")
        if standardize:
            names = [s.strip() for s in standardize.split(",") if s.strip()]
            design = io.standardize_covariates(design, names)
    else:
        design = CovariateDesign.intercept_only(panel.T, panel.n_d)
    return panel, design


def _priors(settings, car):
    zmin = settings.get("zeta_min", None, float)
    zmax = settings.get("zeta_max", None, float)
    interval = None
    if zmin is not None or zmax is not None:
        lo, hi = car.zeta_bounds
        interval = (zmin if zmin is not None else lo, zmax if zmax is not None else hi)
    return PriorSpec(tau_scale=settings.get("tau_scale", 5.0, float),
                     zeta_interval=interval,
                     beta_var=settings.get("beta_var", 1000.0, float))


def _manifest_payload(command, settings, seed=None):
    payload = {
        "command": command,
        "config": dict(sorted(settings.values.items())),
        "secar_version": __version__,
        "numpy_version": np.__version__,
    }
    if seed is not None:
        payload["seed"] = seed
    return payload


def cmd_simulate(settings):
    rows = settings.get("rows", 10, int)
    cols = settings.get("cols", 10, int)
    T = settings.get("T", 100, int)
    seed = settings.require("seed", int)
    params = ModelParams(eta=settings.get("eta", 0.0, float),
                         zeta=settings.get("zeta", 0.0, float),
                         tau2=settings.get("tau2", 0.5, float),
                         beta=np.array([settings.get("beta0", 0.0, float)]))
    burn_in = settings.get("burn_in", 50, int)
    out = _out_dir(settings)
    settings.warn_unused()

    graph = build_torus_lattice(rows, cols)
    car = CarStructure.from_graph(graph)
    design = CovariateDesign.intercept_only(T, car.n_d)
    panel, latent = simulate(car, params, design, T, seed=seed, burn_in=burn_in)

    io.write_counts_csv(out / "counts.csv", panel)
    io.write_latent_csv(out / "latent.csv", latent)
    payload = _manifest_payload("simulate", settings, seed)
    payload["lattice"] = {"rows": rows, "cols": cols, "T": T, "burn_in": burn_in}
    payload["params"] = {"eta": params.eta, "zeta": params.zeta, "tau2": params.tau2,
                         "beta": [float(b) for b in params.beta]}
    io.write_manifest(out / "manifest.json", payload)
    print(f"simulated {car.n_d} locations x {T} weeks -> {out}")
    return EXIT_OK


def _laplace_fit_report(fit, intervals, seconds):
    lines = [
        f"method: {fit.method}",
        f"converged: {fit.converged}" + (f" ({fit.message})" if fit.message else ""),
        f"newton_steps: {fit.newton_steps}",
        f"log_posterior_evaluations: {fit.n_evals}",
        f"log_posterior_at_mode: {fit.log_posterior:.6f}",
        "",
        "posterior mode and 95% credible intervals:",
    ]
    theta = fit.params_hat
    values = {"tau2": theta.tau2, "zeta": theta.zeta, "eta": theta.eta}
    for k, b in enumerate(theta.beta):
        values[f"beta{k}"] = float(b)
    for name in fit.names:
        lo, hi = intervals[name]
        lines.append(f"  {name:>6}: {values[name]: .4f}  ({lo: .4f}, {hi: .4f})")
    lines += ["", f"wall_seconds: {seconds:.2f}"]
    return "\n".join(lines) + "\n"


def cmd_fit(settings):
    car = _load_car(settings)
    panel, design = _load_panel_design(settings, car)
    priors = _priors(settings, car)
    method = settings.get("method", "xla")
    if method not in FIT_METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {FIT_METHODS}")
    out = _out_dir(settings)
    seed = settings.get("seed", None, int)
    t0 = time.perf_counter()

    if method == "mcmc":
        if seed is None:
            raise ConfigError("method=mcmc requires seed=")
        n_iter = settings.get("mcmc_iter", 4000, int)
        n_chains = settings.get("mcmc_chains", 3, int)
        settings.warn_unused()
        samples, diag = run_chains(panel, design, car, priors,
                                   n_chains=n_chains, n_iter=n_iter, seed=seed)
        summary = posterior_summary(samples)
        seconds = time.perf_counter() - t0
        io.write_samples_csv(out / "samples.csv", samples)
        lines = [f"method: mcmc  chains={n_chains}  iterations={n_iter} "
                 f"(half warm-up, {samples.n_chains * samples.n_kept} draws)"]
        lines.append(f"acceptance: y={diag.accept_y:.2f} theta={diag.accept_theta:.2f} "
                     f"rescale={diag.accept_scale:.2f}  divergences={diag.divergences}")
        lines.append("")
        lines.append("posterior summaries (mean, sd, 2.5%, 97.5%, ESS, R-hat):")
        for name in samples.names:
            s = summary[name]
            lines.append(f"  {name:>6}: {s['mean']: .4f}  {s['sd']:.4f}  "
                         f"({s['q025']: .4f}, {s['q975']: .4f})  "
                         f"ess={diag.ess[name]:.0f}  rhat={diag.rhat[name]:.3f}")
        lines += ["", f"wall_seconds: {seconds:.2f}"]
        (out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        io.write_manifest(out / "manifest.json", _manifest_payload("fit", settings, seed))
        worst = diag.max_rhat()
        print(f"mcmc fit done; max R-hat {worst:.3f} -> {out}")
        return EXIT_OK if worst < 1.1 else EXIT_NUMERIC

    include_priors = not settings.get("no_priors", False, bool)
    # grid evaluations are part of the fit artifacts; spacing is coarser than
    # the library default to keep the CLI run cheap (override as needed)
    want_grid = settings.get("grid", True, bool)
    spacing = settings.get("grid_spacing", 1.25, float)
    cutoff = settings.get("grid_cutoff", 6.0, float)
    max_points = settings.get("grid_max_points", 1000, int)
    max_newton = settings.get("max_newton", 50, int)
    grad_tol = settings.get("grad_tol", 1e-5, float)
    settings.warn_unused()
    try:
        fit = maximize_posterior(panel, design, car, priors, method=method,
                                 include_priors=include_priors,
                                 grad_tol=grad_tol, max_steps=max_newton)
    except (FitError, ModeError) as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    try:
        intervals = credible_intervals(fit, 0.95)
    except FitError:
        intervals = {name: (float("nan"), float("nan")) for name in fit.names}
    if want_grid and fit.converged:
        fit = explore_grid(fit, panel, design, car, priors,
                           GridSpec(spacing=spacing, cutoff=cutoff, max_points=max_points))
        io.write_grid_csv(out / "grid.csv", fit)
    seconds = time.perf_counter() - t0
    (out / "report.txt").write_text(_laplace_fit_report(fit, intervals, seconds),
                                    encoding="utf-8")
    payload = _manifest_payload("fit", settings, seed)
    payload["fit"] = io.fit_to_json(fit, intervals)
    io.write_manifest(out / "fit.json", payload["fit"])
    io.write_manifest(out / "manifest.json", payload)
    if not fit.converged:
        print(f"fit did not converge: {fit.message}", file=sys.stderr)
        trace = [f"{i}: f={f:.8f} phi={np.array2string(phi, precision=6)}"
                 for i, (phi, f) in enumerate(fit.trace)]
        (out / "trace.txt").write_text("\n".join(trace) + "\n", encoding="utf-8")
        return EXIT_NUMERIC
    print(f"{method} fit converged in {fit.newton_steps} Newton steps -> {out}")
    return EXIT_OK


def cmd_residuals(settings):
    car = _load_car(settings)
    panel, design = _load_panel_design(settings, car)
    priors = _priors(settings, car)
    seed = settings.require("seed", int)
    method = settings.get("method", "xla")
    n_draws = settings.get("n_theta_draws", 200, int)
    out = _out_dir(settings)
    settings.warn_unused()
    if method == "mcmc":
        samples, _ = run_chains(panel, design, car, priors, seed=seed)
        posterior = samples
    else:
        try:
            posterior = maximize_posterior(panel, design, car, priors, method=method)
        except (FitError, ModeError) as exc:
            print(f"fit failed: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
    residuals = pit_residuals(panel, design, car, posterior,
                              n_theta_draws=n_draws, seed=seed)
    stat, pvalue = residuals.ks_uniform()
    eff = effective_parameters(panel, design, car, posterior,
                               n_theta_draws=max(50, n_draws // 2), seed=seed)
    io.write_field_csv(out / "residuals.csv", "u", residuals.u)
    io.write_by_location_csv(out / "residuals_by_location.csv", "mean_u",
                             residuals.by_location())
    lines = [
        f"pit residuals over {panel.n_cells} cells ({method} posterior, "
        f"{n_draws} theta draws)",
        f"ks_statistic: {stat:.5f}",
        f"ks_pvalue: {pvalue:.5f}",
        f"uniformity: {'not rejected' if pvalue > 0.01 else 'REJECTED'} at alpha=0.01",
        f"effective_parameters: {eff.p_d:.2f}",
        f"observations_per_effective_parameter: {eff.obs_per_param:.2f}",
    ]
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    io.write_manifest(out / "manifest.json", _manifest_payload("residuals", settings, seed))
    print("\n".join(lines))
    return EXIT_OK


def cmd_bias_study(settings):
    cells_raw = settings.get("cells", "0.1:0.4,0.4:0.6")
    try:
        cells = [tuple(float(v) for v in item.split(":")) for item in cells_raw.split(",")]
        if not all(len(c) == 2 for c in cells):
            raise ValueError
    except ValueError:
        raise ConfigError(f"cells must look like '0.1:0.4,0.4:0.6', got {cells_raw!r}") from None
    methods_raw = settings.get("methods", "la1,xla")
    methods = tuple(m.strip() for m in methods_raw.split(",") if m.strip())
    for m in methods:
        if m not in FIT_METHODS:
            raise ConfigError(f"unknown method {m!r} in methods=")
    config = BiasStudyConfig(
        cells=cells,
        n_reps=settings.get("n_reps", 20, int),
        rows=settings.get("rows", 10, int),
        cols=settings.get("cols", 10, int),
        T=settings.get("T", 100, int),
        zeta=settings.get("zeta", 0.245, float),
        beta0=settings.get("beta0", 0.0, float),
        burn_in=settings.get("burn_in", 50, int),
        mcmc_iter=settings.get("mcmc_iter", 3000, int),
        mcmc_chains=settings.get("mcmc_chains", 2, int),
    )
    seed = settings.require("seed", int)
    out = _out_dir(settings)
    settings.warn_unused()
    report = bias_study(config, methods=methods, seed=seed)
    io.write_bias_csv(out / "bias_study.csv", report)
    text = report.summary_text()
    (out / "bias_summary.txt").write_text(text, encoding="utf-8")
    io.write_manifest(out / "manifest.json", _manifest_payload("bias-study", settings, seed))
    print(text, end="")
    return EXIT_OK


def cmd_corr(settings):
    car = _load_car(settings)
    params = ModelParams(eta=settings.get("eta", 0.0, float),
                         zeta=settings.get("zeta", 0.0, float),
                         tau2=settings.get("tau2", 0.5, float),
                         beta=np.array([settings.get("beta0", 0.0, float)]))
    node = settings.get("node", 0, int)
    out = _out_dir(settings)
    settings.warn_unused()
    rows = [(node, j, spatial_correlation(params, car, node, j))
            for j in range(car.n_d)]
    io.write_corr_csv(out / "corr.csv", rows)
    io.write_manifest(out / "manifest.json", _manifest_payload("corr", settings))
    off_diag = [c for i, j, c in rows if i != j]
    print(f"corr table for node {node}: max off-diagonal "
          f"{max(off_diag):.4f} -> {out}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "residuals": cmd_residuals,
    "bias-study": cmd_bias_study,
    "corr": cmd_corr,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="secar",
        description="Self-exciting Poisson CAR inference engine")
    parser.add_argument("--version", action="version", version=f"secar {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", help="plain-text key = value configuration file")
        p.add_argument("-o", "--override", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        settings = Settings(args)
        return COMMANDS[args.command](settings)
    except (ConfigError, io.DataFormatError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FitError, ModeError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
