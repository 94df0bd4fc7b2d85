"""Synthetic study generation: structured genotypes, causal effects,
polygenic random effects, binary phenotypes and relatedness-aware splits.

The genotype generator draws independent subpopulations whose allele
frequencies diverge from a common ancestral frequency through a
Balding-Nichols-style Beta perturbation. It is deliberately simple
structure-only machinery, not a spatial admixture model.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, asdict

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.special import expit, logit

from .genio import GenotypeMatrix, standardize

# Kinship above this threshold counts as related for split purposes
# (third-degree cutoff, 2^(-7/2)).
RELATEDNESS_THRESHOLD = 0.0884

LOGISTIC_RESIDUAL_VAR = np.pi ** 2 / 3.0


@dataclass
class SimConfig:
    n: int = 500
    p: int = 1000
    causal_frac: float = 0.01
    h2_g: float = 0.5
    h2_b: float = 0.4
    prevalence_null: float = 0.1
    n_groups: int = 1
    fst_like: float = 0.1
    seed: int = 0
    age_mean: float = 50.0
    age_sd: float = 5.0
    sex_prob: float = 0.5
    n_kinship_snps: int = 0  # extra SNPs reserved for the GRM (0 = reuse candidates)

    def __post_init__(self):
        if not (0.0 <= self.h2_g < 1.0 and 0.0 <= self.h2_b < 1.0):
            raise ValueError("heritability fractions must lie in [0, 1)")
        if self.h2_g + self.h2_b >= 1.0:
            raise ValueError("h2_g + h2_b must be below 1")
        if not (0.0 < self.prevalence_null < 1.0):
            raise ValueError("null prevalence must lie in (0, 1)")
        if not (0.0 < self.fst_like < 0.5):
            raise ValueError("fst_like must lie in (0, 0.5)")
        if self.n_groups < 1:
            raise ValueError("need at least one subpopulation")
        if round(self.p * self.causal_frac) < 1:
            raise ValueError("causal fraction selects no variants")

    @property
    def n_causal(self) -> int:
        return int(round(self.p * self.causal_frac))

    @property
    def latent_sigma2(self) -> float:
        """Total latent variance implied by treating the logistic residual
        variance as the non-genetic share."""
        return LOGISTIC_RESIDUAL_VAR / (1.0 - self.h2_g - self.h2_b)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        return cls(**json.loads(text))


@dataclass
class SimTruth:
    causal_indices: np.ndarray
    beta_true: np.ndarray  # effects on the standardized-genotype scale
    b_true: np.ndarray
    latent_eta: np.ndarray  # genetic part of the linear predictor
    sigma2: float


def group_labels(n: int, n_groups: int) -> np.ndarray:
    """Equal-size group assignment, remainder going to the last group."""
    size = n // n_groups
    labels = np.repeat(np.arange(n_groups), size)
    return np.concatenate([labels, np.full(n - len(labels), n_groups - 1)])


def simulate_genotypes(config: SimConfig, rng=None, n_snps: int | None = None,
                       id_prefix: str = "snp") -> GenotypeMatrix:
    """Draw genotypes from independent diverged subpopulations."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    p = config.p if n_snps is None else n_snps
    n = config.n
    anc = rng.uniform(0.1, 0.9, size=p)
    labels = group_labels(n, config.n_groups)
    F = config.fst_like
    if F < 1e-6:
        freqs = np.tile(anc, (config.n_groups, 1))
    else:
        a = anc * (1.0 - F) / F
        b = (1.0 - anc) * (1.0 - F) / F
        freqs = rng.beta(a, b, size=(config.n_groups, p))
        # beta draws can underflow to exactly 0/1; resample those entries
        for _ in range(100):
            bad = (freqs <= 0.0) | (freqs >= 1.0)
            if not bad.any():
                break
            redraw = rng.beta(np.broadcast_to(a, freqs.shape)[bad], np.broadcast_to(b, freqs.shape)[bad])
            freqs[bad] = redraw
        freqs = np.clip(freqs, 1e-6, 1.0 - 1e-6)
    dosages = rng.binomial(2, freqs[labels, :]).astype(float)
    sample_ids = [f"S{i:06d}" for i in range(n)]
    variant_ids = [f"{id_prefix}{j + 1}" for j in range(p)]
    return GenotypeMatrix(dosages=dosages, sample_ids=sample_ids, variant_ids=variant_ids)


def simulate_truth(G: GenotypeMatrix, V: np.ndarray, config: SimConfig, rng=None) -> SimTruth:
    """Draw causal effects and the polygenic random effect."""
    if rng is None:
        rng = np.random.default_rng(config.seed + 1)
    p = G.n_variants
    k = config.n_causal
    sigma2 = config.latent_sigma2
    causal = np.sort(rng.choice(p, size=k, replace=False))
    beta = np.zeros(p)
    if config.h2_g > 0.0:
        beta[causal] = rng.normal(0.0, np.sqrt(config.h2_g * sigma2 / k), size=k)
    if config.h2_b > 0.0:
        vals, vecs = np.linalg.eigh(np.asarray(V, float))
        factor = vecs * np.sqrt(np.clip(vals, 0.0, None) * config.h2_b * sigma2)
        b = factor @ rng.standard_normal(G.n_samples)
    else:
        b = np.zeros(G.n_samples)
    G_std = standardize(_with_freqs(G))
    latent = G_std[:, causal] @ beta[causal] + b
    return SimTruth(causal_indices=causal, beta_true=beta, b_true=b,
                    latent_eta=latent, sigma2=sigma2)


def _with_freqs(G: GenotypeMatrix) -> GenotypeMatrix:
    if G.allele_freqs is not None:
        return G
    freqs = np.clip(G.dosages.mean(axis=0) / 2.0, 1e-6, 1.0 - 1e-6)
    return GenotypeMatrix(G.dosages, G.sample_ids, G.variant_ids, freqs)


def simulate_covariates(config: SimConfig, rng=None):
    """Age ~ Normal, Sex ~ Bernoulli."""
    if rng is None:
        rng = np.random.default_rng(config.seed + 2)
    age = rng.normal(config.age_mean, config.age_sd, size=config.n)
    sex = rng.binomial(1, config.sex_prob, size=config.n).astype(float)
    return age, sex


def phenotype_probabilities(truth: SimTruth, age, sex, config: SimConfig) -> np.ndarray:
    """Per-sample case probability from the logistic simulation model."""
    lin = (
        logit(config.prevalence_null)
        - np.log(1.3) * np.asarray(sex, float)
        + np.log(1.05) * np.asarray(age, float) / 10.0
        + truth.latent_eta
    )
    return expit(lin)


def simulate_phenotype(truth: SimTruth, age, sex, config: SimConfig, rng=None) -> np.ndarray:
    if rng is None:
        rng = np.random.default_rng(config.seed + 3)
    pi = phenotype_probabilities(truth, age, sex, config)
    return rng.binomial(1, pi).astype(float)


def grouped_split(sample_ids, V: np.ndarray, ratios, seed: int = 0,
                  threshold: float = RELATEDNESS_THRESHOLD) -> np.ndarray:
    """Partition samples so related individuals share a split label.

    Builds connected components of the relatedness graph thresholded at
    ``threshold`` and assigns whole components (largest first) to the
    split with the largest remaining deficit. Returns one integer label
    per sample.
    """
    ratios = np.asarray(ratios, dtype=float)
    if abs(ratios.sum() - 1.0) > 1e-8:
        raise ValueError("split ratios must sum to 1")
    n = len(sample_ids)
    V = np.asarray(V, dtype=float)
    adj = (V > threshold).astype(np.int8)
    np.fill_diagonal(adj, 0)
    _, comp = connected_components(csr_matrix(adj), directed=False)
    comp_members = [np.where(comp == c)[0] for c in range(comp.max() + 1)]

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(comp_members))
    comp_members = [comp_members[i] for i in order]
    comp_members.sort(key=len, reverse=True)

    targets = ratios * n
    assigned = np.zeros(len(ratios))
    labels = np.empty(n, dtype=int)
    largest = int(np.argmax(ratios))
    for members in comp_members:
        if len(members) > targets[largest]:
            warnings.warn("a related component exceeds the largest split; assigned to training")
            k = 0
        else:
            k = int(np.argmax(targets - assigned))
        labels[members] = k
        assigned[k] += len(members)
    return labels
