"""Unit tests for genotype/covariate/kinship input-output."""

import numpy as np
import pytest

from pglmm.genio import (
    FormatError,
    GenotypeMatrix,
    align_samples,
    compute_grm,
    floor_psd,
    impute_and_filter,
    read_delimited,
    read_kinship,
    read_plink_bed,
    standardize,
    write_kinship,
    write_plink_bed,
)


def _gm(dosages, freqs=None):
    dosages = np.asarray(dosages, dtype=float)
    n, p = dosages.shape
    return GenotypeMatrix(
        dosages=dosages,
        sample_ids=[f"s{i}" for i in range(n)],
        variant_ids=[f"v{j}" for j in range(p)],
        allele_freqs=None if freqs is None else np.asarray(freqs, float),
    )


class TestStandardize:
    def test_known_values(self):
        z = standardize(_gm([[2.0], [0.0]], freqs=[0.5]))
        assert z[0, 0] == pytest.approx(np.sqrt(2.0), abs=1e-5)  # (2-1)/sqrt(0.5)

        z = standardize(_gm([[0.0]], freqs=[0.25]))
        assert z[0, 0] == pytest.approx(-0.81650, abs=1e-5)

    def test_dosage_at_twice_frequency_maps_to_zero(self):
        z = standardize(_gm([[0.5]], freqs=[0.25]))
        assert z[0, 0] == 0.0

    def test_columns_centered_with_empirical_frequencies(self):
        rng = np.random.default_rng(1)
        G = impute_and_filter(_gm(rng.integers(0, 3, size=(40, 12)).astype(float)))
        z = standardize(G)
        assert np.max(np.abs(z.mean(axis=0))) < 1e-10

    def test_requires_imputed_matrix(self):
        with pytest.raises(ValueError):
            standardize(_gm([[np.nan], [1.0]]))

    def test_degenerate_frequency_rejected(self):
        with pytest.raises(ValueError):
            standardize(_gm([[0.0], [0.0]]))


class TestImputeAndFilter:
    def test_monomorphic_variant_dropped(self):
        G = _gm(np.column_stack([[0.0, 0.0, 0.0, 0.0], [0.0, 1.0, 1.0, 2.0]]))
        out = impute_and_filter(G, maf_min=0.05)
        assert out.variant_ids == ["v1"]

    def test_missing_entry_mean_imputed(self):
        G = _gm(np.array([[0.0], [1.0], [np.nan], [2.0]]))
        out = impute_and_filter(G, missing_max=0.5)
        assert out.dosages[2, 0] == pytest.approx(1.0)  # mean of 0,1,2
        assert not np.isnan(out.dosages).any()

    def test_maf_threshold(self):
        G = _gm(np.array([[2.0], [2.0], [2.0], [1.0]]))  # pbar=0.875, MAF=0.125
        assert impute_and_filter(G, maf_min=0.1).n_variants == 1
        with pytest.raises(ValueError):
            impute_and_filter(G, maf_min=0.2)

    def test_high_missingness_dropped(self):
        G = _gm(np.column_stack([[np.nan, np.nan, np.nan, 1.0], [0.0, 1.0, 1.0, 2.0]]))
        out = impute_and_filter(G, missing_max=0.5)
        assert out.variant_ids == ["v1"]

    def test_idempotent(self):
        rng = np.random.default_rng(2)
        X = rng.integers(0, 3, size=(30, 10)).astype(float)
        X[rng.random(X.shape) < 0.1] = np.nan
        once = impute_and_filter(_gm(X), maf_min=0.05, missing_max=0.5)
        twice = impute_and_filter(once, maf_min=0.05, missing_max=0.5)
        np.testing.assert_array_equal(once.dosages, twice.dosages)
        assert once.variant_ids == twice.variant_ids

    def test_bad_arguments(self):
        G = _gm([[0.0], [1.0]])
        with pytest.raises(ValueError):
            impute_and_filter(G, maf_min=0.6)
        with pytest.raises(ValueError):
            impute_and_filter(G, missing_max=1.5)


class TestGrm:
    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(3)
        G = impute_and_filter(_gm(rng.integers(0, 3, size=(15, 8)).astype(float)))
        Z = standardize(G)
        V = compute_grm(Z)
        n, p = Z.shape
        ref = np.zeros((n, n))
        for i in range(n):
            for k in range(n):
                for j in range(p):
                    ref[i, k] += Z[i, j] * Z[k, j] / p
        assert np.max(np.abs(V - ref)) < 1e-12

    def test_output_is_psd(self):
        rng = np.random.default_rng(4)
        G = impute_and_filter(_gm(rng.integers(0, 3, size=(25, 6)).astype(float)))
        V = compute_grm(standardize(G))
        assert np.linalg.eigvalsh(V)[0] >= 0.0

    def test_variant_subset(self):
        rng = np.random.default_rng(5)
        G = impute_and_filter(_gm(rng.integers(0, 3, size=(12, 9)).astype(float)))
        Z = standardize(G)
        sub = np.array([0, 3, 5])
        np.testing.assert_allclose(
            compute_grm(Z, variant_subset=sub), compute_grm(Z[:, sub]), atol=1e-14
        )
        with pytest.raises(ValueError):
            compute_grm(Z, variant_subset=np.array([], dtype=int))


class TestFloorPsd:
    def test_small_negative_eigenvalue_floored(self):
        V = np.diag([1.0, -5e-10])
        out = floor_psd(V)
        assert np.linalg.eigvalsh(out)[0] >= 0.0

    def test_clearly_indefinite_rejected(self):
        with pytest.raises(ValueError):
            floor_psd(np.diag([1.0, -0.5]))


class TestPlink:
    def test_code_table(self, tmp_path):
        # 2-bit codes: 00 -> 2 copies, 01 -> missing, 10 -> 1, 11 -> 0
        G = _gm(np.array([[2.0], [np.nan], [1.0], [0.0]]))
        paths = (tmp_path / "x.bed", tmp_path / "x.bim", tmp_path / "x.fam")
        write_plink_bed(G, *paths)
        raw = paths[0].read_bytes()
        assert raw[:3] == b"\x6c\x1b\x01"
        assert raw[3] == 0b11_10_01_00
        back = read_plink_bed(*paths)
        np.testing.assert_array_equal(
            np.nan_to_num(back.dosages, nan=-1.0), np.nan_to_num(G.dosages, nan=-1.0)
        )

    def test_round_trip_random(self, tmp_path):
        rng = np.random.default_rng(6)
        for trial in range(10):
            n = int(rng.integers(1, 12))
            p = int(rng.integers(1, 7))
            X = rng.integers(0, 3, size=(n, p)).astype(float)
            X[rng.random(X.shape) < 0.15] = np.nan
            G = _gm(X)
            paths = (tmp_path / f"{trial}.bed", tmp_path / f"{trial}.bim", tmp_path / f"{trial}.fam")
            write_plink_bed(G, *paths)
            back = read_plink_bed(*paths)
            assert back.sample_ids == G.sample_ids
            assert back.variant_ids == G.variant_ids
            np.testing.assert_array_equal(
                np.nan_to_num(back.dosages, nan=-1.0), np.nan_to_num(X, nan=-1.0)
            )

    def test_bad_magic_rejected(self, tmp_path):
        (tmp_path / "bad.bed").write_bytes(b"\x00\x00\x01\x00")
        (tmp_path / "bad.bim").write_text("1 v1 0 1 A B\n")
        (tmp_path / "bad.fam").write_text("s0 s0 0 0 0 -9\n")
        with pytest.raises(FormatError):
            read_plink_bed(tmp_path / "bad.bed", tmp_path / "bad.bim", tmp_path / "bad.fam")


class TestKinshipBinary:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(7)
        A = rng.standard_normal((9, 9))
        V = A @ A.T
        ids = [f"id{i}" for i in range(9)]
        path = tmp_path / "k.grm"
        write_kinship(path, V, ids)
        back, back_ids = read_kinship(path)
        assert back.tobytes() == V.tobytes()
        assert back_ids == ids

    def test_id_count_mismatch(self, tmp_path):
        path = tmp_path / "k.grm"
        write_kinship(path, np.eye(3), ["a", "b", "c"])
        (tmp_path / "k.grm.id").write_text("a\nb\n")
        with pytest.raises(FormatError):
            read_kinship(path)


class TestDelimited:
    def test_genotype_csv(self, tmp_path):
        f = tmp_path / "g.csv"
        f.write_text("id,v1,v2\ns1,0,2\ns2,NA,1\n")
        G = read_delimited(f, "genotypes")
        assert G.sample_ids == ["s1", "s2"]
        assert np.isnan(G.dosages[1, 0])
        assert G.dosages[0, 1] == 2.0

    def test_genotype_value_range_enforced(self, tmp_path):
        f = tmp_path / "g.csv"
        f.write_text("id,v1\ns1,3\n")
        with pytest.raises(FormatError):
            read_delimited(f, "genotypes")

    def test_covariates_get_intercept(self, tmp_path):
        f = tmp_path / "c.tsv"
        f.write_text("id\tage\tsex\ns1\t50.5\t1\ns2\t42\t0\n")
        cov = read_delimited(f, "covariates")
        assert cov.column_names == ["intercept", "age", "sex"]
        np.testing.assert_array_equal(cov.values[:, 0], 1.0)

    def test_phenotype_single_column(self, tmp_path):
        f = tmp_path / "y.tsv"
        f.write_text("id\ty\textra\ns1\t1\t0\n")
        with pytest.raises(FormatError):
            read_delimited(f, "phenotype")

    def test_duplicate_ids_rejected(self, tmp_path):
        f = tmp_path / "y.tsv"
        f.write_text("id\ty\ns1\t1\ns1\t0\n")
        with pytest.raises(FormatError):
            read_delimited(f, "phenotype")


class TestAlignSamples:
    def test_alignment_indices(self):
        (idx,) = align_samples(["b", "a"], ["a", "b", "c"])
        np.testing.assert_array_equal(idx, [1, 0])

    def test_missing_sample_raises(self):
        with pytest.raises(ValueError, match="missing"):
            align_samples(["a", "z"], ["a", "b"])
