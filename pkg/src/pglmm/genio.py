"""Genotype, covariate and phenotype ingestion plus kinship computation.

File formats handled here:

* PLINK 1.x binary genotypes (.bed/.bim/.fam), SNP-major only.
* Delimited text (comma or tab, auto-detected) with a header row and a
  sample ID column named ``id`` (case-insensitive); ``NA`` or an empty
  cell marks a missing value.
* A binary kinship format: 8-byte ASCII magic ``PGLMMGRM``, a little-endian
  u64 sample count, then the n x n matrix as row-major little-endian f64,
  with sample IDs in a sidecar text file (one per line).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace

import numpy as np

BED_MAGIC = b"\x6c\x1b"
BED_SNP_MAJOR = b"\x01"
GRM_MAGIC = b"PGLMMGRM"

# 2-bit PLINK genotype codes -> dosage of the A1 allele (nan = missing)
_BED_DECODE = np.array([2.0, np.nan, 1.0, 0.0])


class FormatError(ValueError):
    """A file does not conform to its declared format."""


@dataclass(frozen=True)
class GenotypeMatrix:
    """n x p minor-allele dosage matrix with sample/variant metadata.

    Entries are 0/1/2 or nan for missing. ``allele_freqs`` is populated
    once the matrix has been imputed (no missing entries left).
    """

    dosages: np.ndarray
    sample_ids: list[str]
    variant_ids: list[str]
    allele_freqs: np.ndarray | None = field(default=None)

    @property
    def n_samples(self) -> int:
        return self.dosages.shape[0]

    @property
    def n_variants(self) -> int:
        return self.dosages.shape[1]


@dataclass(frozen=True)
class CovariateTable:
    """n x m covariate matrix whose first column is an all-ones intercept."""

    values: np.ndarray
    column_names: list[str]
    sample_ids: list[str]

    def __post_init__(self):
        if self.values.ndim != 2 or not np.allclose(self.values[:, 0], 1.0):
            raise ValueError("covariate table must carry an all-ones intercept first column")
        if np.isnan(self.values).any():
            raise ValueError("covariate table contains missing values")


@dataclass(frozen=True)
class PhenotypeVector:
    values: np.ndarray
    sample_ids: list[str]


@dataclass(frozen=True)
class KinshipSet:
    """One or more symmetric PSD relatedness matrices over shared samples."""

    matrices: list[np.ndarray]
    sample_ids: list[str]

    def __post_init__(self):
        n = len(self.sample_ids)
        for V in self.matrices:
            if V.shape != (n, n):
                raise ValueError("kinship matrix shape does not match sample count")
            if np.max(np.abs(V - V.T)) > 1e-10:
                raise ValueError("kinship matrix is not symmetric")

    @property
    def n_components(self) -> int:
        return len(self.matrices)


# ---------------------------------------------------------------------------
# PLINK binary genotypes


def read_plink_bed(bed_path, bim_path, fam_path) -> GenotypeMatrix:
    """Decode a SNP-major PLINK .bed fileset into a dosage matrix."""
    sample_ids = []
    with open(fam_path) as fh:
        for line in fh:
            parts = line.split()
            if parts:
                sample_ids.append(parts[1])
    variant_ids = []
    with open(bim_path) as fh:
        for line in fh:
            parts = line.split()
            if parts:
                variant_ids.append(parts[1])
    n, p = len(sample_ids), len(variant_ids)

    raw = np.fromfile(bed_path, dtype=np.uint8)
    if len(raw) < 3 or bytes(raw[:2]) != BED_MAGIC:
        raise FormatError(f"{bed_path}: not a PLINK .bed file (bad magic bytes)")
    if bytes(raw[2:3]) != BED_SNP_MAJOR:
        raise FormatError(f"{bed_path}: only SNP-major .bed files are supported")
    bpv = (n + 3) // 4
    expected = 3 + p * bpv
    if len(raw) != expected:
        raise FormatError(f"{bed_path}: expected {expected} bytes, found {len(raw)}")

    body = raw[3:].reshape(p, bpv)
    # Unpack 2-bit codes; sample k of a byte sits at bits (2k, 2k+1).
    codes = np.empty((p, bpv * 4), dtype=np.uint8)
    for k in range(4):
        codes[:, k::4] = (body >> (2 * k)) & 0b11
    dosages = _BED_DECODE[codes[:, :n]].T.copy()
    return GenotypeMatrix(dosages=dosages, sample_ids=sample_ids, variant_ids=variant_ids)


def write_plink_bed(G: GenotypeMatrix, bed_path, bim_path, fam_path) -> None:
    """Encode a dosage matrix as a SNP-major PLINK fileset (testing aid)."""
    n, p = G.dosages.shape
    with open(fam_path, "w") as fh:
        for sid in G.sample_ids:
            fh.write(f"{sid} {sid} 0 0 0 -9\n")
    with open(bim_path, "w") as fh:
        for j, vid in enumerate(G.variant_ids):
            fh.write(f"1 {vid} 0 {j + 1} A B\n")

    encode = {2.0: 0b00, 1.0: 0b10, 0.0: 0b11}
    bpv = (n + 3) // 4
    body = np.zeros((p, bpv), dtype=np.uint8)
    for j in range(p):
        col = G.dosages[:, j]
        for i in range(n):
            val = col[i]
            code = 0b01 if np.isnan(val) else encode[float(val)]
            body[j, i // 4] |= code << (2 * (i % 4))
    with open(bed_path, "wb") as fh:
        fh.write(BED_MAGIC + BED_SNP_MAJOR)
        fh.write(body.tobytes())


# ---------------------------------------------------------------------------
# Delimited text


def _sniff_delimiter(header: str) -> str:
    return "\t" if "\t" in header else ","


def _read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline()
        if not first:
            raise FormatError(f"{path}: empty file")
        delim = _sniff_delimiter(first)
        header = next(csv.reader([first], delimiter=delim))
        rows = list(csv.reader(fh, delimiter=delim))
    header = [h.strip() for h in header]
    id_idx = None
    for i, name in enumerate(header):
        if name.lower() == "id":
            id_idx = i
            break
    if id_idx is None:
        raise FormatError(f"{path}: no sample ID column named 'id' in header")
    ids, cells = [], []
    for row in rows:
        if not row:
            continue
        if len(row) != len(header):
            raise FormatError(f"{path}: row with {len(row)} cells, expected {len(header)}")
        ids.append(row[id_idx].strip())
        cells.append([row[i] for i in range(len(header)) if i != id_idx])
    if len(set(ids)) != len(ids):
        raise FormatError(f"{path}: duplicate sample IDs")
    names = [header[i] for i in range(len(header)) if i != id_idx]
    values = np.empty((len(ids), len(names)))
    for r, row in enumerate(cells):
        for c, cell in enumerate(row):
            cell = cell.strip()
            if cell == "" or cell.upper() == "NA":
                values[r, c] = np.nan
                continue
            try:
                values[r, c] = float(cell)
            except ValueError:
                raise FormatError(
                    f"{path}: non-numeric value {cell!r} at row {r + 2}, column {names[c]!r}"
                ) from None
    return ids, names, values


def read_delimited(path, kind: str):
    """Parse a delimited file as genotypes, covariates or a phenotype."""
    ids, names, values = _read_table(path)
    if kind == "genotypes":
        ok = np.isnan(values) | np.isin(values, (0.0, 1.0, 2.0))
        if not ok.all():
            r, c = np.argwhere(~ok)[0]
            raise FormatError(
                f"{path}: genotype value {values[r, c]} at row {r + 2}, "
                f"column {names[c]!r} is not in {{0,1,2,NA}}"
            )
        return GenotypeMatrix(dosages=values, sample_ids=ids, variant_ids=names)
    if kind == "covariates":
        if np.isnan(values).any():
            raise FormatError(f"{path}: covariates may not contain missing values")
        full = np.column_stack([np.ones(len(ids)), values])
        return CovariateTable(values=full, column_names=["intercept"] + names, sample_ids=ids)
    if kind == "phenotype":
        if values.shape[1] != 1:
            raise FormatError(f"{path}: phenotype file must have exactly one value column")
        if np.isnan(values).any():
            raise FormatError(f"{path}: phenotype may not contain missing values")
        return PhenotypeVector(values=values[:, 0], sample_ids=ids)
    raise ValueError(f"unknown table kind: {kind!r}")


# ---------------------------------------------------------------------------
# Filtering, standardization and GRM


def impute_and_filter(G: GenotypeMatrix, maf_min: float = 0.0, missing_max: float = 1.0) -> GenotypeMatrix:
    """Drop high-missingness/low-MAF variants and mean-impute the rest.

    A variant is dropped when its missing rate exceeds ``missing_max``,
    when MAF = min(pbar, 1-pbar) falls below ``maf_min``, or when it is
    monomorphic. Remaining missing entries are replaced by the column
    mean dosage.
    """
    if not (0.0 <= maf_min < 0.5):
        raise ValueError("maf_min must be in [0, 0.5)")
    if not (0.0 <= missing_max <= 1.0):
        raise ValueError("missing_max must be in [0, 1]")
    X = G.dosages
    n = X.shape[0]
    miss = np.isnan(X)
    miss_rate = miss.mean(axis=0)
    n_obs = (~miss).sum(axis=0)
    col_sum = np.where(miss, 0.0, X).sum(axis=0)
    col_mean = np.divide(col_sum, n_obs, out=np.zeros(X.shape[1]), where=n_obs > 0)
    pbar = col_mean / 2.0
    maf = np.minimum(pbar, 1.0 - pbar)
    keep = (miss_rate <= missing_max) & (maf >= maf_min) & (maf > 0.0)
    if not keep.any():
        raise ValueError("all variants removed by filtering")
    X = X[:, keep].copy()
    fill = col_mean[keep]
    idx = np.where(np.isnan(X))
    X[idx] = fill[idx[1]]
    freqs = X.mean(axis=0) / 2.0
    return GenotypeMatrix(
        dosages=X,
        sample_ids=G.sample_ids,
        variant_ids=[v for v, k in zip(G.variant_ids, keep) if k],
        allele_freqs=freqs,
    )


def standardize(G: GenotypeMatrix) -> np.ndarray:
    """Center and scale dosages to (g - 2p) / sqrt(2p(1-p)) per variant."""
    if np.isnan(G.dosages).any():
        raise ValueError("standardize requires an imputed genotype matrix")
    p = G.allele_freqs
    if p is None:
        p = G.dosages.mean(axis=0) / 2.0
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ValueError("allele frequencies must lie strictly inside (0, 1)")
    return (G.dosages - 2.0 * p) / np.sqrt(2.0 * p * (1.0 - p))


def floor_psd(V: np.ndarray, tol: float = -1e-8) -> np.ndarray:
    """Symmetrize and floor negative eigenvalues of a nominal PSD matrix."""
    V = 0.5 * (V + V.T)
    vals, vecs = np.linalg.eigh(V)
    if vals[0] < tol:
        raise ValueError(f"matrix is not PSD within tolerance (min eigenvalue {vals[0]:.3e})")
    if vals[0] < 0.0:
        V = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
        V = 0.5 * (V + V.T)
    return V


def compute_grm(G_std: np.ndarray, variant_subset=None) -> np.ndarray:
    """Genetic relatedness matrix from standardized genotypes.

    V = Z Z^T / p' over the selected variants, symmetrized and with any
    small negative eigenvalues floored to zero.
    """
    Z = np.asarray(G_std, dtype=float)
    if variant_subset is not None:
        sub = np.asarray(variant_subset, dtype=int)
        if sub.size == 0:
            raise ValueError("variant subset is empty")
        Z = Z[:, sub]
    if Z.shape[1] == 0:
        raise ValueError("no variants available for GRM computation")
    V = Z @ Z.T / Z.shape[1]
    return floor_psd(V)


# ---------------------------------------------------------------------------
# Kinship binary IO


def _id_sidecar(path) -> str:
    return str(path) + ".id"


def write_kinship(path, V: np.ndarray, sample_ids: list[str]) -> None:
    V = np.asarray(V, dtype=float)
    n = V.shape[0]
    if V.shape != (n, n):
        raise ValueError("kinship matrix must be square")
    if len(sample_ids) != n:
        raise ValueError("sample ID count does not match matrix dimension")
    with open(path, "wb") as fh:
        fh.write(GRM_MAGIC)
        fh.write(struct.pack("<Q", n))
        fh.write(np.ascontiguousarray(V, dtype="<f8").tobytes())
    with open(_id_sidecar(path), "w") as fh:
        for sid in sample_ids:
            fh.write(sid + "\n")


def read_kinship(path) -> tuple[np.ndarray, list[str]]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != GRM_MAGIC:
            raise FormatError(f"{path}: bad kinship file magic")
        (n,) = struct.unpack("<Q", fh.read(8))
        data = fh.read()
    if len(data) != 8 * n * n:
        raise FormatError(f"{path}: expected {8 * n * n} matrix bytes, found {len(data)}")
    V = np.frombuffer(data, dtype="<f8").reshape(n, n).copy()
    with open(_id_sidecar(path)) as fh:
        ids = [line.strip() for line in fh if line.strip()]
    if len(ids) != n:
        raise FormatError(f"{path}: ID sidecar lists {len(ids)} samples, matrix has {n}")
    return V, ids


def align_samples(ids: list[str], *others):
    """Return index arrays aligning each of ``others`` onto ``ids``."""
    out = []
    for other in others:
        lookup = {sid: i for i, sid in enumerate(other)}
        try:
            out.append(np.array([lookup[sid] for sid in ids], dtype=int))
        except KeyError as exc:
            raise ValueError(f"sample {exc.args[0]!r} missing from an input file") from None
    return out
