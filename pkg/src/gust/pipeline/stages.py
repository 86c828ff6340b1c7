"""Experiment stages and report emission.

Stage order: synth -> pretrain -> finetune -> sample, synth -> baseline,
then homogenize -> evaluate, and finally :func:`emit_report`.
"""

import csv
import logging
import os
import time

import numpy as np

from .._validation import derived_seed
from ..baselines import GRFConfig, fit_morph_scales, grf_basis, grf_realize, perturb_with_field
from ..diffusion import Checkpoint, finetune, make_schedule, pretrain, sample
from ..exceptions import MissingDependency
from ..geometry import dilate, erode
from ..homogenize import COMPONENTS, property_table, read_property_csv, write_property_csv
from ..metrics import MetricConfig, coverage, density, embed, kde_curve, wasserstein1, welch_p_value
from ..metrics.stats import write_kde_csv
from ..perturb import NOMINAL, FFDConfig, HoleConfig, Operator, PairedDataset, PerturbPipeline, build_dataset, variant_rng
from .config import config_hash, denoiser_config, freeze_spec, train_config
from .io import read_dataset, write_dataset
from .nominals import gen_nominals, import_cells
from .svg import line_plot_svg

logger = logging.getLogger(__name__)

STAGES = ("synth", "pretrain", "finetune", "sample", "baseline", "homogenize", "evaluate")
DEPENDENCIES = {
    "synth": (),
    "pretrain": ("synth",),
    "finetune": ("pretrain",),
    "sample": ("finetune",),
    "baseline": ("synth",),
    "homogenize": ("synth", "sample", "baseline"),
    "evaluate": ("homogenize", "sample", "baseline"),
}
# salts separating the random streams of different stages
_SALT = {"pretrain_data": 11, "finetune_data": 12, "truth": 13, "gust": 21, "dt": 22, "grf": 23,
         "mle": 24, "metrics": 31}


def worker_count():
    """Worker cap from ``GUST_THREADS`` (default: all cores)."""
    cap = os.environ.get("GUST_THREADS")
    n = os.cpu_count() or 1
    return max(1, min(n, int(cap))) if cap else n


def finetune_pipeline(cfg, seed):
    fd = cfg["finetune_data"]
    return PerturbPipeline.finetune(sigma=fd["sigma"], hole=HoleConfig(**fd["hole"]), m=fd["m"],
                                    p_ffd=fd["p_ffd"], seed=seed)


def methods(cfg):
    return ["gust"] + list(cfg["baselines"]["methods"])


# ---------------------------------------------------------------------------
# stages


def _synth(cfg, man):
    seed = cfg["seed"]
    noms_cfg = cfg["nominals"]
    n_pre, n_ft, n_ev = noms_cfg["pretrain"], noms_cfg["finetune"], noms_cfg["eval"]
    total = n_pre + n_ft + n_ev
    res = cfg["resolution"]
    if noms_cfg.get("source"):
        cells = import_cells(noms_cfg["source"], res, noms_cfg.get("threshold", 128))
        if len(cells) < total:
            raise MissingDependency(f"{noms_cfg['source']} holds {len(cells)} images, "
                                    f"{total} needed")
        cells = cells[:total]
    else:
        cells = gen_nominals(total, res, noms_cfg["families"], seed=seed)
    cells = np.stack(cells)
    ids = np.arange(total)
    split = {"pretrain": ids[:n_pre], "finetune": ids[n_pre:n_pre + n_ft],
             "eval": ids[n_pre + n_ft:]}
    jobs = worker_count()
    pd = cfg["pretrain_data"]
    pre_pipe = PerturbPipeline(operators=(Operator("ffd", FFDConfig(m=pd["m"], sigma=pd["sigma"])),),
                               length_distribution=(0.0, 1.0), operator_distribution=(1.0,))
    ft_pipe = finetune_pipeline(cfg, seed)
    datasets = {
        "nominals": PairedDataset(ids, np.full(total, NOMINAL), cells),
        "pretrain_data": build_dataset(cells[split["pretrain"]], pre_pipe, pd["variants"],
                                       seed=derived_seed(seed, _SALT["pretrain_data"]),
                                       ids=split["pretrain"], n_jobs=jobs),
        "finetune_data": build_dataset(cells[split["finetune"]], ft_pipe,
                                       cfg["finetune_data"]["variants"],
                                       seed=derived_seed(seed, _SALT["finetune_data"]),
                                       ids=split["finetune"], n_jobs=jobs),
        "truth": build_dataset(cells[split["eval"]], ft_pipe, cfg["truth_samples"],
                               seed=derived_seed(seed, _SALT["truth"]), ids=split["eval"],
                               n_jobs=jobs),
    }
    outputs = {}
    for name, ds in datasets.items():
        outputs[name] = f"{name}.gust"
        write_dataset(ds, man.path(outputs[name]))
    return outputs, {"split": {k: v.tolist() for k, v in split.items()}}


def _schedule(cfg):
    s = cfg["schedule"]
    return make_schedule(s["T"], s["beta_start"], s["beta_end"])


def _write_trace(trace, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loss"])
        for i, v in enumerate(trace):
            w.writerow([i, f"{v:.9g}"])


def _pretrain(cfg, man):
    ds = read_dataset(man.output_path("synth", "pretrain_data"))
    ckpt = pretrain(ds, _schedule(cfg), denoiser_config(cfg), train_config(cfg, "pretrain"))
    ckpt.save(man.path("pretrain.gckp"))
    _write_trace(ckpt.trace, man.path("pretrain_loss.csv"))
    return {"checkpoint": "pretrain.gckp", "loss": "pretrain_loss.csv"}, None


def _finetune(cfg, man):
    ds = read_dataset(man.output_path("synth", "finetune_data"))
    base = Checkpoint.load(man.output_path("pretrain", "checkpoint"))
    ckpt = finetune(base, ds, freeze_spec(cfg), train_config(cfg, "finetune"))
    ckpt.save(man.path("gust.gckp"))
    _write_trace(ckpt.trace, man.path("finetune_loss.csv"))
    return {"checkpoint": "gust.gckp", "loss": "finetune_loss.csv"}, None


def _eval_nominals(cfg, man):
    truth = read_dataset(man.output_path("synth", "truth"))
    return truth.ids, [truth.nominal(i) for i in truth.ids]


def _sample_model(cfg, ckpt, ids, noms, salt):
    n = cfg["sampling"]["samples"]
    bs = cfg["sampling"]["batch_size"]
    gens = [sample(ckpt, x, n, rng=derived_seed(cfg["seed"], salt, int(i)), batch_size=bs)
            for i, x in zip(ids, noms)]
    return PairedDataset.from_groups(noms, gens, ids=ids, variants_per_nominal=n)


def _sample(cfg, man):
    ids, noms = _eval_nominals(cfg, man)
    ckpt = Checkpoint.load(man.output_path("finetune", "checkpoint"))
    write_dataset(_sample_model(cfg, ckpt, ids, noms, _SALT["gust"]), man.path("samples_gust.gust"))
    return {"samples": "samples_gust.gust"}, None


def _baseline(cfg, man):
    ids, noms = _eval_nominals(cfg, man)
    ft = read_dataset(man.output_path("synth", "finetune_data"))
    seed = cfg["seed"]
    outputs, extra = {}, {}
    for method in cfg["baselines"]["methods"]:
        bcfg = cfg["baselines"][method]
        if method == "dt":
            tcfg = train_config(cfg, "finetune", iterations=bcfg.get("iterations"))
            ckpt = pretrain(ft, _schedule(cfg), denoiser_config(cfg), tcfg)
            ckpt.save(man.path("dt.gckp"))
            outputs["dt_checkpoint"] = "dt.gckp"
            ds = _sample_model(cfg, ckpt, ids, noms, _SALT["dt"])
        elif method == "grf":
            basis = grf_basis(GRFConfig(**bcfg))
            n = cfg["sampling"]["samples"]
            base = derived_seed(seed, _SALT["grf"])
            gens = [[perturb_with_field(x, grf_realize(basis, variant_rng(base, int(i), k)))
                     for k in range(n)] for i, x in zip(ids, noms)]
            ds = PairedDataset.from_groups(noms, gens, ids=ids, variants_per_nominal=n)
        else:
            x_nom, x_fab = ft.pairs()
            fit = fit_morph_scales(x_nom, x_fab, bounds=(bcfg["low"], bcfg["high"]),
                                   pop_size=bcfg["pop_size"], max_gen=bcfg["max_gen"],
                                   seed=derived_seed(seed, _SALT["mle"]) % (2**31))
            extra["mle"] = {"alpha": fit.alpha_hat, "beta": fit.beta_hat,
                            "bandwidth": fit.bandwidth}
            gens = [[dilate(x, fit.alpha_hat), erode(x, fit.beta_hat)] for x in noms]
            ds = PairedDataset.from_groups(noms, gens, ids=ids, variants_per_nominal=2)
        outputs[method] = f"samples_{method}.gust"
        write_dataset(ds, man.path(outputs[method]))
    return outputs, extra or None


def _sample_sets(cfg, man):
    """Name -> dataset path for the ground truth and every method's samples."""
    sets = {"truth": man.output_path("synth", "truth"),
            "gust": man.output_path("sample", "samples")}
    for m in cfg["baselines"]["methods"]:
        sets[m] = man.output_path("baseline", m)
    return sets


def _homogenize(cfg, man):
    from joblib import Parallel, delayed

    outputs = {}
    for name, path in _sample_sets(cfg, man).items():
        ds = read_dataset(path)
        mask = ds.roles != NOMINAL
        cells, nids = ds.cells[mask], ds.nominal_ids[mask]
        chunks = np.array_split(np.arange(len(cells)), max(1, min(len(cells), worker_count() * 4)))
        parts = Parallel(n_jobs=worker_count())(
            delayed(property_table)(cells[c], ids=nids[c].tolist()) for c in chunks if len(c))
        rows = [r for part in parts for r in part]
        outputs[name] = f"props_{name}.csv"
        write_property_csv(rows, man.path(outputs[name]))
    return outputs, None


def metric_config(cfg):
    m = cfg["metrics"]
    return MetricConfig(k=m["k"], perplexity=m["perplexity"], embedding=m["embedding"],
                        seed=derived_seed(cfg["seed"], _SALT["metrics"]) % (2**31))


def _props_by_design(path):
    rows = read_property_csv(path)
    out = {}
    for r in rows:
        out.setdefault(r["id"], []).append([r[c] for c in COMPONENTS])
    return {k: np.array(v) for k, v in out.items()}


def design_metrics(real_cells, gen_cells, real_props, gen_props, mcfg):
    """Density, coverage and per-component W1 for one design and one method."""
    er, eg = embed(real_cells, gen_cells, mcfg)
    out = {"density": density(er, eg, mcfg.k), "coverage": coverage(er, eg, mcfg.k)}
    for j, comp in enumerate(COMPONENTS):
        a, b = real_props[:, j], gen_props[:, j]
        out[f"W1_{comp}"] = wasserstein1(a[np.isfinite(a)], b[np.isfinite(b)])
    return out


def _evaluate(cfg, man):
    mcfg = metric_config(cfg)
    sets = _sample_sets(cfg, man)
    data = {name: read_dataset(p) for name, p in sets.items()}
    props = {name: _props_by_design(man.output_path("homogenize", name)) for name in sets}
    chash = config_hash(cfg)
    rows = []
    for d in data["truth"].ids:
        d = int(d)
        for method in methods(cfg):
            vals = design_metrics(data["truth"].fabricated(d), data[method].fabricated(d),
                                  props["truth"][d], props[method][d], mcfg)
            rows.extend({"design": d, "method": method, "metric": k, "value": v,
                         "config_hash": chash} for k, v in vals.items())
    write_metrics_raw(rows, man.path("metrics_raw.csv"))
    return {"metrics": "metrics_raw.csv"}, None


METRIC_FIELDS = ("design", "method", "metric", "value", "config_hash")


def write_metrics_raw(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for r in rows:
            w.writerow([r["design"], r["method"], r["metric"], f"{r['value']:.9g}",
                        r["config_hash"]])


def read_metrics_raw(path):
    with open(path, newline="") as fh:
        return [{"design": int(r["design"]), "method": r["method"], "metric": r["metric"],
                 "value": float(r["value"]), "config_hash": r["config_hash"]}
                for r in csv.DictReader(fh)]


_RUNNERS = {"synth": _synth, "pretrain": _pretrain, "finetune": _finetune, "sample": _sample,
            "baseline": _baseline, "homogenize": _homogenize, "evaluate": _evaluate}


def run_stage(stage, cfg, manifest):
    """Run ``stage`` unless it already completed under this config; returns the manifest."""
    if stage not in _RUNNERS:
        raise ValueError(f"unknown stage {stage!r}; choose from {STAGES}")
    if manifest.completed(stage):
        logger.info("stage %s already complete; skipping", stage)
        return manifest
    missing = [d for d in DEPENDENCIES[stage] if not manifest.completed(d)]
    if missing:
        raise MissingDependency(f"stage {stage} needs {', '.join(missing)} first")
    _set_threads()
    start = time.perf_counter()
    outputs, extra = _RUNNERS[stage](cfg, manifest)
    manifest.record(stage, outputs, time.perf_counter() - start, cfg["seed"], extra)
    manifest.save()
    return manifest


def _set_threads():
    import torch

    torch.set_num_threads(worker_count())


def run_all(cfg, manifest):
    for stage in STAGES:
        run_stage(stage, cfg, manifest)
    emit_report(manifest)
    return manifest


# ---------------------------------------------------------------------------
# report


def summarize_metrics(rows):
    """``(method, metric) -> (mean, std, n)`` over designs; std uses ddof=1."""
    groups = {}
    for r in rows:
        groups.setdefault((r["method"], r["metric"]), []).append(r["value"])
    out = {}
    for key, vals in groups.items():
        v = np.array(vals)
        out[key] = (float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0, len(v))
    return out


def emit_report(manifest):
    """KDE overlay SVGs and CSVs per design, a metric summary and a p-value table."""
    if not manifest.completed("evaluate"):
        raise MissingDependency("report needs the evaluate stage first")
    cfg = manifest.cfg
    rep = "report"
    os.makedirs(manifest.path(rep), exist_ok=True)
    names = ["truth"] + methods(cfg)
    props = {n: _props_by_design(manifest.output_path("homogenize", n)) for n in names}
    files = {"kde_svg": [], "kde_csv": []}
    for d in sorted(props["truth"]):
        for j, comp in enumerate(COMPONENTS):
            series = []
            for n in names:
                vals = props[n].get(d)
                if vals is None:
                    continue
                col = vals[:, j][np.isfinite(vals[:, j])]
                if col.size < 2:
                    continue
                grid, dens = kde_curve(col)
                rel = f"{rep}/kde_d{d}_{n}_{comp}.csv"
                write_kde_csv(grid, dens, manifest.path(rel))
                files["kde_csv"].append(rel)
                series.append(("ground truth" if n == "truth" else n, grid, dens))
            rel = f"{rep}/kde_d{d}_{comp}.svg"
            with open(manifest.path(rel), "w") as fh:
                fh.write(line_plot_svg(series, title=f"design {d}: {comp}", xlabel=comp))
            files["kde_svg"].append(rel)
    rows = read_metrics_raw(manifest.output_path("evaluate", "metrics"))
    summary = summarize_metrics(rows)
    rel = f"{rep}/summary.csv"
    with open(manifest.path(rel), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "metric", "mean", "std", "n"])
        for (method, metric), (mean, std, n) in sorted(summary.items()):
            w.writerow([method, metric, f"{mean:.9g}", f"{std:.9g}", n])
    files["summary"] = rel
    rel = f"{rep}/pvalues.csv"
    with open(manifest.path(rel), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "method", "reference", "p_value"])
        metrics_seen = sorted({r["metric"] for r in rows})
        for metric in metrics_seen:
            ref = [r["value"] for r in rows if r["method"] == "gust" and r["metric"] == metric]
            for method in methods(cfg)[1:]:
                other = [r["value"] for r in rows if r["method"] == method and r["metric"] == metric]
                try:
                    p = welch_p_value(ref, other)
                except Exception:  # noqa: BLE001 - too few designs or zero spread
                    p = float("nan")
                w.writerow([metric, method, "gust", f"{p:.9g}"])
    files["pvalues"] = rel
    manifest.data["report"] = files
    manifest.save()
    return files
