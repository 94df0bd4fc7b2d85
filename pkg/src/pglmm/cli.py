"""Command-line driver for the end-to-end workflow.

Subcommands: ``grm`` (kinship computation), ``fit`` (null variance
components + lasso path), ``select`` (choose a lambda), ``predict``
(out-of-sample scores), ``simulate`` (synthetic studies) and ``score``
(selection/prediction metrics against a simulation truth file).

Exit codes: 0 success, 2 usage error, 3 numerical non-convergence,
4 data-integrity violation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .family import BINOMIAL, FamilySpec, inverse_link
from .genio import (
    CovariateTable,
    GenotypeMatrix,
    align_samples,
    compute_grm,
    impute_and_filter,
    read_delimited,
    read_kinship,
    read_plink_bed,
    standardize,
    write_kinship,
    write_plink_bed,
)
from .path import PathOptions, fit_path
from .reml import fit_null, load_null_fit, save_null_fit
from .selection import (
    SelectionCriterion,
    gic,
    metric_auc,
    metric_recall,
    metric_rmse,
    metric_tpr,
    predict_glmm,
)
from .simulate import (
    SimConfig,
    grouped_split,
    phenotype_probabilities,
    simulate_covariates,
    simulate_genotypes,
    simulate_phenotype,
    simulate_truth,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NONCONVERGENCE = 3
EXIT_DATA_INTEGRITY = 4


class UsageError(Exception):
    pass


class DataIntegrityError(Exception):
    pass


class NonConvergenceError(Exception):
    pass


# ---------------------------------------------------------------------------
# Manifest


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command: str, options: dict, inputs: list, timings: dict) -> None:
    doc = {
        "command": command,
        "options": {k: str(v) for k, v in sorted(options.items())},
        "input_digests": {str(p): _sha256(p) for p in inputs if p and Path(p).exists()},
        "version": __version__,
        "timings_s": {k: round(v, 4) for k, v in timings.items()},
    }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "run_manifest.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _limit_threads(n_threads):
    if n_threads is None:
        n_threads = os.environ.get("PGLMM_THREADS")
    if n_threads is None:
        return
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(int(n_threads))
    except ImportError:
        pass


# ---------------------------------------------------------------------------
# Shared input loading


def _load_genotypes(args) -> GenotypeMatrix:
    if getattr(args, "csv", None) and getattr(args, "bed", None):
        raise UsageError("pass either --csv or --bed, not both")
    if getattr(args, "csv", None):
        return read_delimited(args.csv, "genotypes")
    if getattr(args, "bed", None):
        bim = args.bim or str(Path(args.bed).with_suffix(".bim"))
        fam = args.fam or str(Path(args.bed).with_suffix(".fam"))
        return read_plink_bed(args.bed, bim, fam)
    raise UsageError("a genotype input (--csv or --bed) is required")


def _genotype_inputs(args):
    paths = []
    if getattr(args, "csv", None):
        paths.append(args.csv)
    if getattr(args, "bed", None):
        paths.extend([args.bed, args.bim, args.fam])
    return paths


def _load_training_bundle(model_dir):
    model_dir = Path(model_dir)
    with open(model_dir / "options.json") as fh:
        opts = json.load(fh)
    null_fit = load_null_fit(model_dir / "null.json", model_dir / "null.bin")
    coef = _read_beta_tsv(model_dir / "beta.tsv")
    with open(model_dir / "path.tsv") as fh:
        header = fh.readline().split("\t")
        rows = [line.split("\t") for line in fh if line.strip()]
    path_table = {
        "lambda": np.array([float(r[header.index("lambda")]) for r in rows]),
        "pql_loglik": np.array([float(r[header.index("pql_loglik")]) for r in rows]),
        "df": np.array([int(r[header.index("df")]) for r in rows]),
    }
    return opts, null_fit, coef, path_table


def _read_beta_tsv(path):
    coef = {}
    with open(path) as fh:
        fh.readline()
        for line in fh:
            name, idx, val = line.rstrip("\n").split("\t")
            coef.setdefault(int(idx), {})[name] = float(val)
    return coef


def _design_from_files(opts, restrict_ids=None):
    """Rebuild the training design from the paths recorded at fit time.

    PC columns added in baseline mode are regenerated from the recorded
    kinship file so column names line up with the stored coefficients.
    """
    ns = argparse.Namespace(csv=opts.get("csv"), bed=opts.get("bed"),
                            bim=opts.get("bim"), fam=opts.get("fam"))
    G = _load_genotypes(ns)
    G = impute_and_filter(G, opts["maf"], opts["max_missing"])
    cov = read_delimited(opts["covar"], "covariates") if opts.get("covar") else None
    pheno = read_delimited(opts["pheno"], "phenotype")
    ids = pheno.sample_ids if restrict_ids is None else restrict_ids
    (g_idx,) = align_samples(ids, G.sample_ids)
    dosages = G.dosages[g_idx]
    if cov is not None:
        (c_idx,) = align_samples(ids, cov.sample_ids)
        X = cov.values[c_idx]
        cov_names = list(cov.column_names)
    else:
        X = np.ones((len(ids), 1))
        cov_names = ["intercept"]
    r = opts.get("pcs")
    pc_basis = None
    if r:
        U_r, D_r = _training_pcs(opts, ids, r)
        X = np.column_stack([X, U_r * D_r])
        cov_names += [f"pc{i + 1}" for i in range(r)]
        pc_basis = (U_r, D_r)
    (p_idx,) = align_samples(ids, pheno.sample_ids)
    y = pheno.values[p_idx]
    design = np.column_stack([X, dosages])
    names = cov_names + G.variant_ids
    return ids, design, y, names, len(cov_names), pc_basis


def _training_pcs(opts, train_ids, r):
    """Leading eigenpairs of the training kinship, descending order."""
    V, vids = read_kinship(opts["grm"][0])
    (k_idx,) = align_samples(train_ids, vids)
    vals, vecs = np.linalg.eigh(V[np.ix_(k_idx, k_idx)])
    order = np.argsort(vals)[::-1][:r]
    return vecs[:, order], vals[order]


def _beta_vector(coef, lambda_index, names):
    if lambda_index not in coef:
        raise UsageError(f"lambda index {lambda_index} not present in the fitted path")
    lookup = coef[lambda_index]
    pos = {name: i for i, name in enumerate(names)}
    beta = np.zeros(len(names))
    for name, val in lookup.items():
        if name in pos:
            beta[pos[name]] = val
    return beta


# ---------------------------------------------------------------------------
# Commands


def cmd_grm(args) -> int:
    t0 = time.perf_counter()
    G = _load_genotypes(args)
    G = impute_and_filter(G, args.maf, args.max_missing)
    V = compute_grm(standardize(G))
    out = args.out + ".grm"
    write_kinship(out, V, G.sample_ids)
    write_manifest(Path(out).parent if str(Path(out).parent) else ".", "grm", vars(args),
                   _genotype_inputs(args), {"total": time.perf_counter() - t0})
    print(f"wrote {out} ({G.n_samples} samples, {G.n_variants} variants)")
    return EXIT_OK


def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    timings = {}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    G = _load_genotypes(args)
    G = impute_and_filter(G, args.maf, args.max_missing)
    pheno = read_delimited(args.pheno, "phenotype")
    cov = read_delimited(args.covar, "covariates") if args.covar else None
    ids = pheno.sample_ids

    grms, grm_ids = [], None
    for path in args.grm or []:
        V, vids = read_kinship(path)
        grms.append(V)
        grm_ids = vids
    if grms:
        (k_idx,) = align_samples(ids, grm_ids)
        grms = [V[np.ix_(k_idx, k_idx)] for V in grms]

    (g_idx,) = align_samples(ids, G.sample_ids)
    dosages = G.dosages[g_idx]
    if cov is not None:
        (c_idx,) = align_samples(ids, cov.sample_ids)
        X = cov.values[c_idx]
        cov_names = list(cov.column_names)
    else:
        X = np.ones((len(ids), 1))
        cov_names = ["intercept"]
    y = pheno.values

    family = FamilySpec(args.family)
    timings["load"] = time.perf_counter() - t0

    pcs_mode = args.pcs is not None
    t1 = time.perf_counter()
    if pcs_mode:
        if not grms and args.pcs > 0:
            raise UsageError("--pcs requires a --grm to take principal components from")
        if args.pcs > 0:
            vals, vecs = np.linalg.eigh(grms[0])
            order = np.argsort(vals)[::-1][: args.pcs]
            pcs = vecs[:, order] * vals[order]
            X = np.column_stack([X, pcs])
            cov_names += [f"pc{i + 1}" for i in range(args.pcs)]
        null = fit_null(y, X, [], family, column_names=cov_names)
        Vs = []
    else:
        if not grms:
            raise UsageError("fit requires at least one --grm (or --pcs for the baseline)")
        null = fit_null(y, X, grms, family, column_names=cov_names)
        Vs = grms
    timings["null_fit"] = time.perf_counter() - t1
    if not null.converged and not args.force:
        raise NonConvergenceError("null model did not converge; rerun with --force to proceed")

    penalty = None
    if args.penalty_factor:
        penalty = np.loadtxt(args.penalty_factor)
    popts = PathOptions(
        n_lambda=args.nlambda,
        lambda_min_ratio=args.lambda_min_ratio,
        penalty_factors=penalty,
    )
    names = cov_names + G.variant_ids
    design = np.column_stack([X, dosages])
    t2 = time.perf_counter()
    path = fit_path(null, design, y, Vs, family, popts, column_names=names,
                    allow_unconverged=args.force)
    timings["path_fit"] = time.perf_counter() - t2

    save_null_fit(null, out / "null.json", out / "null.bin")
    n = len(y)
    aic = gic(path, 2.0)
    bic = gic(path, float(np.log(n)))
    with open(out / "path.tsv", "w") as fh:
        fh.write("lambda\tdf\tpql_loglik\taic\tbic\n")
        for i, rec in enumerate(path.records):
            fh.write(f"{rec.lam:.10g}\t{rec.df}\t{rec.pql_loglik:.10g}\t{aic[i]:.10g}\t{bic[i]:.10g}\n")
    with open(out / "beta.tsv", "w") as fh:
        fh.write("name\tlambda_index\tbeta\n")
        for i, rec in enumerate(path.records):
            for j, val in zip(rec.beta_idx, rec.beta_val):
                fh.write(f"{names[j]}\t{i}\t{val:.10g}\n")
    options = {
        "family": args.family,
        "csv": args.csv,
        "bed": args.bed,
        "bim": args.bim,
        "fam": args.fam,
        "covar": args.covar,
        "pheno": args.pheno,
        "grm": list(args.grm or []),
        "maf": args.maf,
        "max_missing": args.max_missing,
        "pcs": args.pcs,
        "nlambda": args.nlambda,
        "lambda_min_ratio": args.lambda_min_ratio,
        "n_covariates": len(cov_names),
        "tau": [float(t) for t in null.tau],
        "phi": float(null.phi),
        "n_train": n,
        "train_ids": list(ids),
    }
    with open(out / "options.json", "w") as fh:
        json.dump(options, fh, indent=2, sort_keys=True)
        fh.write("\n")
    timings["total"] = time.perf_counter() - t0
    inputs = _genotype_inputs(args) + [args.covar, args.pheno] + list(args.grm or [])
    write_manifest(out, "fit", vars(args), inputs, timings)
    print(f"fit complete: {len(path.records)} lambdas, tau={options['tau']}, out={out}")
    return EXIT_OK


def _parse_criterion(text: str) -> SelectionCriterion:
    if text == "aic":
        return SelectionCriterion("aic")
    if text == "bic":
        return SelectionCriterion("bic")
    if text.startswith("gic:"):
        return SelectionCriterion("gic", a_n=float(text.split(":", 1)[1]))
    if text == "val-auc":
        return SelectionCriterion("validation")
    raise UsageError(f"unknown criterion {text!r}")


def cmd_select(args) -> int:
    t0 = time.perf_counter()
    criterion = _parse_criterion(args.criterion)
    opts, null_fit, coef, table = _load_training_bundle(args.model)
    n = opts["n_train"]
    n_tau = len(opts["tau"])
    if criterion.kind == "validation":
        chosen = _select_by_validation(args, opts, null_fit, coef, table)
    else:
        values = -2.0 * table["pql_loglik"] + criterion.penalty_weight(n) * (table["df"] + n_tau)
        chosen = int(np.argmin(values))
    doc = {
        "criterion": args.criterion,
        "chosen_lambda_index": chosen,
        "chosen_lambda": float(table["lambda"][chosen]),
        "df": int(table["df"][chosen]),
    }
    model = Path(args.model)
    with open(model / "selection.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(model, "select", vars(args), [], {"total": time.perf_counter() - t0})
    print(f"selected lambda index {chosen} (lambda={doc['chosen_lambda']:.4g})")
    return EXIT_OK


def _select_by_validation(args, opts, null_fit, coef, table) -> int:
    if not (args.val_pheno and args.cross_grm):
        raise UsageError("val-auc selection needs --val-pheno, validation covariates/genotypes and --cross-grm")
    scores_per_lambda, labels = [], None
    for i in range(len(table["lambda"])):
        scores, labels, _ = _predict_for_lambda(args, opts, null_fit, coef, i, validation=True)
        scores_per_lambda.append(scores)
    aucs = np.array([metric_auc(s, labels) for s in scores_per_lambda])
    return int(np.argmax(aucs))


def _predict_for_lambda(args, opts, null_fit, coef, lambda_index, validation=False):
    prefix = "val_" if validation else "test_"
    ns = argparse.Namespace(
        csv=getattr(args, prefix + "csv", None),
        bed=getattr(args, prefix + "bed", None),
        bim=getattr(args, prefix + "bim", None),
        fam=getattr(args, prefix + "fam", None),
    )
    G_test = _load_genotypes(ns)
    cov_path = getattr(args, prefix + "covar", None)
    pheno_path = getattr(args, prefix + "pheno", None)
    cov = read_delimited(cov_path, "covariates") if cov_path else None
    pheno = read_delimited(pheno_path, "phenotype") if pheno_path else None
    test_ids = pheno.sample_ids if pheno is not None else G_test.sample_ids

    train_ids = opts["train_ids"]
    overlap = set(test_ids) & set(train_ids)
    if overlap:
        raise DataIntegrityError(f"{len(overlap)} prediction samples overlap the training set")

    _, X_train, y_train, names, n_cov, pc_basis = _design_from_files(opts, restrict_ids=train_ids)
    beta = _beta_vector(coef, lambda_index, names)

    (g_idx,) = align_samples(test_ids, G_test.sample_ids)
    variant_pos = {v: i for i, v in enumerate(G_test.variant_ids)}
    snp_names = names[n_cov:]
    missing = [v for v in snp_names if v not in variant_pos]
    if missing:
        raise DataIntegrityError(f"test genotypes lack {len(missing)} training variants")
    dosages = G_test.dosages[np.ix_(g_idx, [variant_pos[v] for v in snp_names])]
    if np.isnan(dosages).any():
        col_mean = np.nanmean(dosages, axis=0)
        idx = np.where(np.isnan(dosages))
        dosages[idx] = col_mean[idx[1]]
    if cov is not None:
        (c_idx,) = align_samples(test_ids, cov.sample_ids)
        X_cov = cov.values[c_idx]
    else:
        X_cov = np.ones((len(test_ids), 1))

    if args.cross_grm:
        Vfull, all_ids = read_kinship(args.cross_grm)
        tr_idx, te_idx = align_samples(train_ids, all_ids) + align_samples(test_ids, all_ids)
        V11 = Vfull[np.ix_(tr_idx, tr_idx)]
        V12 = Vfull[np.ix_(te_idx, tr_idx)]
    else:
        V11 = V12 = None

    family = FamilySpec(opts["family"],
                        dispersion=opts["phi"] if opts["family"] != BINOMIAL else 1.0)
    labels = pheno.values if pheno is not None else None

    if opts.get("pcs") is not None:
        # Baseline mode: PC coefficients live in beta; the test-side values
        # of those columns are the kinship-projected PCs V12 @ U_r.
        r = opts["pcs"]
        if r:
            if V12 is None:
                raise UsageError("predicting a PC-adjusted model requires --cross-grm")
            U_r, _ = pc_basis
            pc_cols = V12 @ U_r
            X_test = np.column_stack([X_cov, pc_cols, dosages])
        else:
            X_test = np.column_stack([X_cov, dosages])
        return inverse_link(family, X_test @ beta), labels, test_ids

    X_test = np.column_stack([X_cov, dosages])
    tau = np.array(opts["tau"], dtype=float)
    if len(tau) > 1:
        raise UsageError("mixed-model prediction supports a single kinship component; "
                         "refit with one --grm or predict on the training set only")
    tau1 = float(tau[0]) if len(tau) else 0.0
    if tau1 > 0.0 and V12 is None:
        raise UsageError("mixed-model prediction requires --cross-grm")
    # Linearization point for the training working residual: fitted fixed
    # effects at this lambda plus the null-model random effect.
    eta_hat = X_train @ beta + null_fit.b
    mu = predict_glmm(beta, X_test, X_train, y_train, eta_hat, V11, V12, tau1, family)
    return mu, labels, test_ids


def cmd_predict(args) -> int:
    t0 = time.perf_counter()
    opts, null_fit, coef, table = _load_training_bundle(args.model)
    scores, _, test_ids = _predict_for_lambda(args, opts, null_fit, coef, args.lambda_index)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write("id\tscore\n")
        for sid, sc in zip(test_ids, scores):
            fh.write(f"{sid}\t{sc:.10g}\n")
    write_manifest(out.parent, "predict", vars(args), [args.cross_grm],
                   {"total": time.perf_counter() - t0})
    print(f"wrote {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    with open(args.config) as fh:
        config = SimConfig.from_json(fh.read())
    if args.seed is not None:
        config.seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(config.seed)
    G = simulate_genotypes(config, rng)
    if config.n_kinship_snps > 0:
        G_kin = simulate_genotypes(config, rng, n_snps=config.n_kinship_snps, id_prefix="ksnp")
    else:
        G_kin = G
    V = compute_grm(standardize(_freqs(G_kin)))
    truth = simulate_truth(G, V, config, rng)
    age, sex = simulate_covariates(config, rng)
    y = simulate_phenotype(truth, age, sex, config, rng)

    if args.format == "bed":
        write_plink_bed(G, out / "genotypes.bed", out / "genotypes.bim", out / "genotypes.fam")
    else:
        with open(out / "genotypes.csv", "w") as fh:
            fh.write("id," + ",".join(G.variant_ids) + "\n")
            for i, sid in enumerate(G.sample_ids):
                row = ",".join(str(int(v)) for v in G.dosages[i])
                fh.write(f"{sid},{row}\n")
    with open(out / "covar.tsv", "w") as fh:
        fh.write("id\tage\tsex\n")
        for sid, a, s in zip(G.sample_ids, age, sex):
            fh.write(f"{sid}\t{a:.6f}\t{int(s)}\n")
    with open(out / "pheno.tsv", "w") as fh:
        fh.write("id\ty\n")
        for sid, v in zip(G.sample_ids, y):
            fh.write(f"{sid}\t{int(v)}\n")
    write_kinship(out / "kinship.grm", V, G.sample_ids)

    freqs = G.dosages.mean(axis=0) / 2.0
    scale = np.sqrt(2.0 * np.clip(freqs, 1e-6, 1 - 1e-6) * (1.0 - np.clip(freqs, 1e-6, 1 - 1e-6)))
    truth_doc = {
        "seed": config.seed,
        "h2_g": config.h2_g,
        "h2_b": config.h2_b,
        "sigma2": truth.sigma2,
        "prevalence_null": config.prevalence_null,
        "causal_indices": [int(i) for i in truth.causal_indices],
        "causal_variants": [G.variant_ids[i] for i in truth.causal_indices],
        "beta_true_std": [float(v) for v in truth.beta_true],
        "beta_true_dosage": [float(v) for v in truth.beta_true / scale],
    }
    with open(out / "truth.json", "w") as fh:
        json.dump(truth_doc, fh, indent=2, sort_keys=True)
        fh.write("\n")

    labels = grouped_split(G.sample_ids, V, args.split_ratios, seed=config.seed)
    with open(out / "splits.tsv", "w") as fh:
        fh.write("id\tsplit\n")
        for sid, lab in zip(G.sample_ids, labels):
            fh.write(f"{sid}\t{int(lab)}\n")

    write_manifest(out, "simulate", vars(args), [args.config], {"total": time.perf_counter() - t0})
    print(f"simulated n={config.n}, p={config.p} into {out}")
    return EXIT_OK


def _freqs(G):
    freqs = np.clip(G.dosages.mean(axis=0) / 2.0, 1e-6, 1.0 - 1e-6)
    return GenotypeMatrix(G.dosages, G.sample_ids, G.variant_ids, freqs)


def cmd_score(args) -> int:
    t0 = time.perf_counter()
    with open(args.truth) as fh:
        truth = json.load(fh)
    doc = {}
    if args.model:
        opts, _, coef, table = _load_training_bundle(args.model)
        idx = args.lambda_index
        if idx is None:
            raise UsageError("--model scoring requires --lambda-index")
        if not (0 <= idx < len(table["lambda"])):
            raise UsageError(f"lambda index {idx} out of range")
        lookup = coef.get(idx, {})
        causal_names = set(truth["causal_variants"])
        n_cov = opts["n_covariates"]
        selected = {nm for nm in lookup if not _is_covariate(nm, opts)}
        doc["tpr"] = metric_tpr(selected, causal_names)
        doc["recall"] = metric_recall(selected, causal_names)
        beta_hat = np.zeros(len(truth["beta_true_dosage"]))
        name_to_idx = {nm: i for i, nm in enumerate(_variant_names(truth))}
        for nm, val in lookup.items():
            if nm in name_to_idx:
                beta_hat[name_to_idx[nm]] = val
        doc["rmse"] = metric_rmse(beta_hat, np.array(truth["beta_true_dosage"]))
        doc["df"] = int(table["df"][idx])
        doc["chosen_lambda"] = float(table["lambda"][idx])
    if args.scores:
        ids, scores = [], []
        with open(args.scores) as fh:
            fh.readline()
            for line in fh:
                sid, val = line.split("\t")
                ids.append(sid)
                scores.append(float(val))
        pheno = read_delimited(args.pheno, "phenotype")
        (idx_,) = align_samples(ids, pheno.sample_ids)
        doc["auc"] = metric_auc(np.array(scores), pheno.values[idx_])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(out.parent, "score", vars(args), [args.truth], {"total": time.perf_counter() - t0})
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def _variant_names(truth):
    n_snp = len(truth["beta_true_dosage"])
    causal = dict(zip(truth["causal_indices"], truth["causal_variants"]))
    prefix = truth["causal_variants"][0].rstrip("0123456789") if truth["causal_variants"] else "snp"
    return [causal.get(i, f"{prefix}{i + 1}") for i in range(n_snp)]


def _is_covariate(name, opts):
    if name in ("intercept", "age", "sex"):
        return True
    if opts.get("pcs") and name.startswith("pc"):
        return True
    return False


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pglmm", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--threads", type=int, default=None,
                        help="cap internal linear-algebra threads (or set PGLMM_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_genotype_flags(p, prefix=""):
        p.add_argument(f"--{prefix}csv", help="genotype matrix as delimited text")
        p.add_argument(f"--{prefix}bed", help="PLINK .bed file")
        p.add_argument(f"--{prefix}bim", help="PLINK .bim file (default: next to .bed)")
        p.add_argument(f"--{prefix}fam", help="PLINK .fam file (default: next to .bed)")

    p = sub.add_parser("grm", help="compute a genetic relatedness matrix")
    add_genotype_flags(p)
    p.add_argument("--maf", type=float, default=0.0)
    p.add_argument("--max-missing", type=float, default=1.0)
    p.add_argument("--out", required=True, help="output prefix (writes <out>.grm)")
    p.set_defaults(func=cmd_grm)

    p = sub.add_parser("fit", help="null variance components + lasso path")
    add_genotype_flags(p)
    p.add_argument("--family", choices=["binomial", "gaussian"], required=True)
    p.add_argument("--grm", action="append", help="kinship file (repeatable)")
    p.add_argument("--covar")
    p.add_argument("--pheno", required=True)
    p.add_argument("--maf", type=float, default=0.0)
    p.add_argument("--max-missing", type=float, default=1.0)
    p.add_argument("--nlambda", type=int, default=100)
    p.add_argument("--lambda-min-ratio", type=float, default=None)
    p.add_argument("--penalty-factor", help="file with one penalty factor per design column")
    p.add_argument("--pcs", type=int, default=None,
                   help="baseline mode: force tau=0 and add this many kinship PCs as covariates")
    p.add_argument("--force", action="store_true", help="proceed past a non-converged null fit")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="choose a lambda along a fitted path")
    p.add_argument("--model", required=True)
    p.add_argument("--criterion", required=True, help="aic | bic | gic:A | val-auc")
    add_genotype_flags(p, "val-")
    p.add_argument("--val-covar")
    p.add_argument("--val-pheno")
    p.add_argument("--cross-grm", help="kinship over training+validation samples")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("predict", help="score new individuals from a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--lambda-index", type=int, required=True)
    add_genotype_flags(p, "test-")
    p.add_argument("--test-covar")
    p.add_argument("--test-pheno")
    p.add_argument("--cross-grm", help="kinship over training+test samples")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="generate a synthetic study")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--format", choices=["csv", "bed"], default="csv")
    p.add_argument("--split-ratios", type=float, nargs="+", default=[0.8, 0.2])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("score", help="metrics against a simulation truth file")
    p.add_argument("--truth", required=True)
    p.add_argument("--model")
    p.add_argument("--lambda-index", type=int, default=None)
    p.add_argument("--scores", help="TSV of (id, score) predictions")
    p.add_argument("--pheno", help="phenotype file for AUC")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _limit_threads(args.threads)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except DataIntegrityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA_INTEGRITY


if __name__ == "__main__":
    sys.exit(main())
