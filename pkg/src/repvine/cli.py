"""
Command-line front end.

Subcommands: ``fit``, ``predict``, ``compare``, ``contour`` and ``study``.
Every command writes a human-readable table to stdout and machine-readable
files to ``--out``. Options may also come from a flat ``key = value`` file
given with ``--config``; command-line flags take precedence.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import norm

from . import bicop, dvine, io
from .bicop import Family
from .dvine import DVineSpec, edge_label
from .fit import DEFAULT_CANDIDATES, GAUSSIAN_ONLY, FitConfig, FitReport, sequential_fit
from .lmm import StructureKind, lmm_fit
from .margins import (LongitudinalDataset, MarginalModel, fit_margins, inverse_pit,
                      margins_loglik, margins_npars, pit, pit_dataset)
from .selectors import ParamLadder, adjusted_bic, aic, build_ladder, reach_counts
from .simlab import PruneDistribution, StudyConfig, run_study

logger = logging.getLogger("repvine")


# --------------------------------------------------------------------------
# option parsing helpers


def parse_families(text: str) -> tuple:
    """``"gaussian,clayton:180"`` -> ((GAUSSIAN, 0), (CLAYTON, 180)).

    ``general`` and ``gaussian-only`` name the built-in pools.
    """
    text = text.strip().lower()
    if text in ("general", "all", "default"):
        return DEFAULT_CANDIDATES
    if text in ("gaussian-only", "gaussian_only"):
        return GAUSSIAN_ONLY
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        name, _, rot = item.partition(":")
        out.append((Family.parse(name), int(rot or 0)))
    if not out:
        raise ValueError("empty family list")
    return tuple(out)


def parse_prune(text: str) -> PruneDistribution:
    probs = {}
    for item in text.split(","):
        j, _, p = item.partition(":")
        probs[int(j)] = float(p)
    return PruneDistribution(probs)


def _opt_float(text):
    if text is None or str(text).lower() in ("none", "off", ""):
        return None
    return float(text)


def _opt_int(text):
    if text is None or str(text).lower() in ("none", "off", ""):
        return None
    return int(text)


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    return str(text).strip().lower() in ("1", "true", "yes", "on")


def _names(text) -> list[str]:
    if not text:
        return []
    return [s.strip() for s in str(text).split(",") if s.strip()]


def _merge(args: argparse.Namespace, defaults: dict) -> dict:
    """Flags override the config file, which overrides ``defaults``."""
    conf = io.read_config(args.config) if getattr(args, "config", None) else {}
    unknown = set(conf) - set(defaults)
    if unknown:
        raise io.InputError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    out = dict(defaults)
    out.update(conf)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    return out


# --------------------------------------------------------------------------
# workflows


@dataclass
class FittedModel:
    margins: list
    report: FitReport
    copula_data: dvine.CopulaDataset
    loglik: float
    npars: int
    aic: float
    bic: float
    ladder: ParamLadder

    @property
    def spec(self) -> DVineSpec:
        return self.report.spec


def fit_fit_config(opts: dict) -> FitConfig:
    return FitConfig(candidate_families=parse_families(str(opts["families"])),
                     independence_level=_opt_float(opts["independence_level"]),
                     selection_criterion=str(opts["criterion"]),
                     truncation_level=_opt_int(opts["truncation_level"]),
                     joint_refine=_bool(opts["joint_refine"]),
                     min_edge_size=int(opts["min_edge_size"]))


def fit_dvine_model(data: LongitudinalDataset, config: FitConfig,
                    covariates: Sequence[str] = (), pooled: bool = False) -> FittedModel:
    """Margins, PIT, sequential copula fit and information criteria."""
    margins = fit_margins(data, covariates, pooled=pooled)
    udata = pit_dataset(margins, data)
    report = sequential_fit(udata, config)
    ll = margins_loglik(margins, data) + report.total_loglik
    p = margins_npars(margins) + report.spec.npars
    ladder = build_ladder(margins, report.spec, udata)
    return FittedModel(margins, report, udata, ll, p, aic(ll, p), adjusted_bic(ll, ladder), ladder)


FIT_DEFAULTS = {"data": None, "covariates": "", "pooled": "0", "families": "general",
                "independence_level": "0.05", "criterion": "bic", "truncation_level": None,
                "joint_refine": "0", "min_edge_size": "10", "delimiter": ",", "out": None}


def cmd_fit(opts: dict) -> FittedModel:
    data = io.ingest(opts["data"], opts["delimiter"])
    model = fit_dvine_model(data, fit_fit_config(opts), _names(opts["covariates"]),
                            _bool(opts["pooled"]))
    edges_rows = model.report.rows()
    for r in edges_rows:
        r["edge"] = edge_label((r["k"], r["l"]))
    summary = [{"loglik": model.loglik, "copula_loglik": model.report.total_loglik,
                "npars": model.npars, "aic": model.aic, "bic_adjusted": model.bic}]
    margin_rows = [{"index": m.index, "sigma": m.sigma, "pooled": int(m.pooled),
                    **{f"coef_{k}": v for k, v in m.coefficients.items()}}
                   for m in model.margins if m is not None]
    sys.stdout.write(io.pretty_table(summary))
    sys.stdout.write(io.pretty_table([{k: r[k] for k in ("edge", "family", "rotation", "theta",
                                                         "n_used", "tau", "lambda_lower",
                                                         "lambda_upper")}
                                      for r in edges_rows]))
    if opts["out"]:
        out = Path(opts["out"])
        out.mkdir(parents=True, exist_ok=True)
        io.save_model(out / "model.txt", model.spec, model.margins)
        io.write_table(edges_rows, out / "edges.tsv")
        io.write_table(summary, out / "criteria.tsv")
        io.write_table(margin_rows, out / "margins.tsv") if margin_rows else None
    return model


PREDICT_DEFAULTS = {"model": None, "history": None, "alphas": "0.05,0.5,0.95",
                    "delimiter": ",", "out": None}


def predict_rows(spec: DVineSpec, margins: Sequence[MarginalModel | None],
                 history: LongitudinalDataset, alphas: Sequence[float]) -> list[dict]:
    """Conditional quantiles of the next measurement of each individual."""
    rows = []
    names = history.covariate_names
    for i, ident in enumerate(history.ids):
        present = ~np.isnan(history.y[i])
        j = int(np.cumprod(present).sum())
        if present[j:].any():
            raise io.InputError(f"id {ident}: history must be the leading measurements 1..j")
        if j >= spec.dim:
            raise io.InputError(f"id {ident}: history of length {j} leaves nothing to "
                                f"predict in a {spec.dim}-dimensional model")
        target = margins[j]
        if target is None:
            raise io.InputError(f"no margin for measurement {j + 1}")
        cov_next = {c: history.covariates[c][i, j] for c in names}
        missing = [c for c in target.coefficients if c != "intercept"
                   and (c not in cov_next or math.isnan(cov_next[c]))]
        if missing:
            raise io.InputError(f"id {ident}: covariate(s) {', '.join(missing)} needed "
                                f"for measurement {j + 1}")
        u_hist = np.array([pit(margins[k], history.y[i, k],
                               {c: history.covariates[c][i, k] for c in names})
                           for k in range(j)])
        for a in alphas:
            v = a if j == 0 else dvine.conditional_quantile(spec, u_hist, a)
            rows.append({"id": ident, "meas_index": j + 1, "alpha": a,
                         "y_pred": float(inverse_pit(target, v, cov_next))})
    return rows


def cmd_predict(opts: dict) -> list[dict]:
    spec, margins = io.load_model(opts["model"])
    history = io.ingest(opts["history"], opts["delimiter"], allow_missing_y=True)
    if history.dim > spec.dim:
        raise io.InputError(f"history reaches measurement {history.dim}, "
                            f"beyond the model dimension {spec.dim}")
    alphas = [float(a) for a in _names(opts["alphas"])]
    if any(not 0.0 < a < 1.0 for a in alphas):
        raise io.InputError("alphas must lie in (0, 1)")
    # pad the history to the model dimension
    pad = spec.dim - history.dim
    if pad:
        history = LongitudinalDataset(
            history.ids, np.pad(history.y, ((0, 0), (0, pad)), constant_values=np.nan),
            {k: np.pad(v, ((0, 0), (0, pad)), constant_values=np.nan)
             for k, v in history.covariates.items()})
    rows = predict_rows(spec, margins, history, alphas)
    sys.stdout.write(io.pretty_table(rows))
    if opts["out"]:
        io.write_table(rows, opts["out"])
    return rows


COMPARE_DEFAULTS = {"data": None, "models": "lmm-iid,lmm-ar1,dvine-gaussian,dvine",
                    "covariates": "", "pooled": "1", "independence_level": "0.05",
                    "criterion": "bic", "min_edge_size": "10", "delimiter": ",", "out": None}


def _lmm_ladder(spec, d: int, data: LongitudinalDataset) -> ParamLadder:
    # fixed effects and the residual scale are needed from measurement 1,
    # correlation parameters from measurement 2; general structures follow the
    # vine attribution (variance j at j, partial (k, l) at l)
    counts = tuple(int(x) for x in reach_counts(data))
    dp = [0] * d
    dp[0] += len(spec.beta)
    kind = spec.error.kind
    q = spec.D.shape[0]
    if kind is StructureKind.GENERAL:
        for j in range(d):
            dp[j] += 1 + j
        if d > 1:
            dp[1] += q * (q + 1) // 2
    else:
        dp[0] += 1
        extra = spec.error.npars(d) - 1 + q * (q + 1) // 2
        if d > 1:
            dp[1] += extra
        else:
            dp[0] += extra
    return ParamLadder(tuple(dp), counts)


def compare_rows(data: LongitudinalDataset, models: Sequence[str], covariates: Sequence[str],
                 pooled: bool, base: FitConfig) -> list[dict]:
    rows = []
    if covariates and pooled:
        warnings.warn("covariates enter several measurements through pooled margins; "
                      "the adjusted BIC assumes each covariate belongs to one margin",
                      RuntimeWarning, stacklevel=2)
    for name in models:
        try:
            if name.startswith("lmm-"):
                spec, ll = lmm_fit(data, name[4:], covariates)
                p = spec.npars(data.dim)
                ladder = _lmm_ladder(spec, data.dim, data)
            elif name in ("dvine", "dvine-gaussian"):
                fams = GAUSSIAN_ONLY if name == "dvine-gaussian" else base.candidate_families
                cfg = FitConfig(fams, base.independence_level, base.selection_criterion,
                                min_edge_size=base.min_edge_size)
                fm = fit_dvine_model(data, cfg, covariates, pooled)
                ll, p, ladder = fm.loglik, fm.npars, fm.ladder
            else:
                raise ValueError(f"unknown model {name!r}")
            rows.append({"model": name, "npars": p, "loglik": ll, "aic": aic(ll, p),
                         "bic_adjusted": adjusted_bic(ll, ladder), "status": "ok"})
        except Exception as exc:  # reported per model, the others continue
            logger.error("model %s failed: %s", name, exc)
            rows.append({"model": name, "npars": "", "loglik": math.nan, "aic": math.nan,
                         "bic_adjusted": math.nan, "status": f"failed: {exc}"})
    ok = [r for r in rows if r["status"] == "ok"]
    for r in rows:
        r["best"] = ""
    if ok:
        flags = [("loglik", max(ok, key=lambda r: r["loglik"])),
                 ("aic", min(ok, key=lambda r: r["aic"])),
                 ("bic", min(ok, key=lambda r: r["bic_adjusted"]))]
        for tag, r in flags:
            r["best"] = ",".join(filter(None, [r["best"], tag]))
    return rows


def cmd_compare(opts: dict) -> list[dict]:
    data = io.ingest(opts["data"], opts["delimiter"])
    base = FitConfig(independence_level=_opt_float(opts["independence_level"]),
                     selection_criterion=str(opts["criterion"]),
                     min_edge_size=int(opts["min_edge_size"]))
    rows = compare_rows(data, _names(opts["models"]), _names(opts["covariates"]),
                        _bool(opts["pooled"]), base)
    sys.stdout.write(io.pretty_table(rows))
    if opts["out"]:
        io.write_table(rows, opts["out"])
    if not any(r["status"] == "ok" for r in rows):
        raise RuntimeError("every model failed")
    return rows


CONTOUR_DEFAULTS = {"model": None, "edge": None, "grid": "50", "out": None}


def contour_grid(pc: bicop.PairCopula, g: int, limit: float = 3.0):
    """Copula density on a ``g x g`` grid with standard normal margins."""
    z = np.linspace(-limit, limit, g)
    z1, z2 = np.meshgrid(z, z, indexing="ij")
    u1, u2 = ndtr(z1), ndtr(z2)
    dens = np.asarray(bicop.pdf(pc, u1.ravel(), u2.ravel())).reshape(g, g)
    return z, dens * norm.pdf(z1) * norm.pdf(z2)


def cmd_contour(opts: dict) -> np.ndarray:
    spec, _ = io.load_model(opts["model"])
    try:
        k, l = (int(s) for s in str(opts["edge"]).split(","))
    except ValueError:
        raise io.InputError("edge must be given as k,l") from None
    if (k, l) not in spec.pairs:
        raise io.InputError(f"model has no edge ({k},{l})")
    g = int(opts["grid"])
    if g < 2:
        raise io.InputError("grid must be at least 2")
    z, dens = contour_grid(spec[(k, l)], g)
    rows = [{"z1": float(z[a]), "z2": float(z[b]), "density": float(dens[a, b])}
            for a in range(g) for b in range(g)]
    text = io.write_table(rows, opts["out"])
    if not opts["out"]:
        sys.stdout.write(text)
    return dens


STUDY_DEFAULTS = {"d": "5", "n": "2000", "replicates": "100", "families": None, "prune": None,
                  "seed": "0", "independence_level": None, "criterion": "bic",
                  "workers": "1", "out": None}


def study_config(opts: dict) -> StudyConfig:
    kw = dict(d=int(opts["d"]), n=int(opts["n"]), replicates=int(opts["replicates"]),
              seed=int(opts["seed"]), independence_level=_opt_float(opts["independence_level"]),
              selection_criterion=str(opts["criterion"]), workers=int(opts["workers"]))
    if opts["families"]:
        kw["family_pool"] = parse_families(str(opts["families"]))
    if opts["prune"]:
        kw["prune"] = parse_prune(str(opts["prune"]))
    return StudyConfig(**kw)


def cmd_study(opts: dict):
    result = run_study(study_config(opts))
    text = result.to_delimited("\t")
    sys.stdout.write(text)
    if opts["out"]:
        Path(opts["out"]).write_text(text, encoding="utf-8")
    return result


# --------------------------------------------------------------------------
# argument parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="repvine", description=__doc__.strip().splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, delimiter=True):
        sp.add_argument("--config", help="flat key = value option file")
        sp.add_argument("--out", help="output directory or file")
        if delimiter:
            sp.add_argument("--delimiter", help="field delimiter of input files (default ,)")

    f = sub.add_parser("fit", help="fit margins and a D-vine copula")
    common(f)
    f.add_argument("--data", help="long-format measurement file")
    f.add_argument("--covariates", help="comma-separated candidate covariates")
    f.add_argument("--pooled", help="share margin coefficients across measurements (0/1)")
    f.add_argument("--families", help="'general', 'gaussian-only' or e.g. 'gaussian,clayton:180'")
    f.add_argument("--independence-level", dest="independence_level",
                   help="level of the independence pre-test, or 'none'")
    f.add_argument("--criterion", choices=["bic", "aic", "loglik"])
    f.add_argument("--truncation-level", dest="truncation_level")
    f.add_argument("--joint-refine", dest="joint_refine", help="0/1")
    f.add_argument("--min-edge-size", dest="min_edge_size")

    pr = sub.add_parser("predict", help="conditional quantiles of the next measurement")
    common(pr)
    pr.add_argument("--model", help="model file written by 'fit'")
    pr.add_argument("--history", help="long-format history; the target row may leave y empty")
    pr.add_argument("--alphas", help="comma-separated levels (default 0.05,0.5,0.95)")

    c = sub.add_parser("compare", help="compare LMM and D-vine models")
    common(c)
    c.add_argument("--data")
    c.add_argument("--models", help="e.g. lmm-iid,lmm-cs,lmm-ar1,lmm-exp,lmm-general,"
                                    "dvine-gaussian,dvine")
    c.add_argument("--covariates")
    c.add_argument("--pooled", help="pooled margins for the D-vine models (default 1)")
    c.add_argument("--independence-level", dest="independence_level")
    c.add_argument("--criterion", choices=["bic", "aic", "loglik"])
    c.add_argument("--min-edge-size", dest="min_edge_size")

    ct = sub.add_parser("contour", help="normal-scores density grid of one pair-copula")
    common(ct, delimiter=False)
    ct.add_argument("--model")
    ct.add_argument("--edge", help="k,l")
    ct.add_argument("--grid", help="grid points per axis (default 50)")

    s = sub.add_parser("study", help="pruning simulation study")
    common(s, delimiter=False)
    s.add_argument("--d")
    s.add_argument("--n")
    s.add_argument("--replicates")
    s.add_argument("--families")
    s.add_argument("--prune", help="e.g. 2:0.2,3:0.2,4:0.15,5:0.45")
    s.add_argument("--seed")
    s.add_argument("--independence-level", dest="independence_level")
    s.add_argument("--criterion", choices=["bic", "aic", "loglik"])
    s.add_argument("--workers")
    return p


COMMANDS = {
    "fit": (cmd_fit, FIT_DEFAULTS, ("data",)),
    "predict": (cmd_predict, PREDICT_DEFAULTS, ("model", "history")),
    "compare": (cmd_compare, COMPARE_DEFAULTS, ("data",)),
    "contour": (cmd_contour, CONTOUR_DEFAULTS, ("model", "edge")),
    "study": (cmd_study, STUDY_DEFAULTS, ()),
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    logging.captureWarnings(True)
    func, defaults, required = COMMANDS[args.command]
    try:
        opts = _merge(args, defaults)
        missing = [k for k in required if not opts.get(k)]
        if missing:
            raise io.InputError(f"missing option(s): {', '.join('--' + m for m in missing)}")
        func(opts)
    except (ValueError, KeyError, OSError, ArithmeticError, RuntimeError) as exc:
        logger.error("%s", exc)
        return 1
    finally:
        logging.captureWarnings(False)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
