//! Dense symmetric linear-algebra kernels.
//!
//! Everything here works on small dense matrices (reduced models rarely exceed
//! a few hundred DOFs), so the routines favour clarity over asymptotics.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance used when accepting a matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// A pivot must exceed this fraction of the largest diagonal entry.
pub const PIVOT_TOL: f64 = 1e-12;

/// Dense real symmetric matrix.
///
/// Construction checks symmetry and then symmetrizes the entries exactly, so
/// downstream code can rely on `a[(i, j)] == a[(j, i)]` bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidParameter("empty matrix".into()));
        }
        let asym = relative_asymmetry(&m);
        if asym > SYMMETRY_TOL {
            return Err(Error::AsymmetricInput(asym));
        }
        Ok(Self::symmetrized(m))
    }

    /// Symmetrizes without checking. Use for products such as `Tᵀ A T`
    /// whose asymmetry is pure round-off.
    pub fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        Self((m + t) * 0.5)
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// `a·self + b·other`
    pub fn combine(&self, a: f64, other: &SymMatrix, b: f64) -> Result<SymMatrix> {
        if other.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(Self(&self.0 * a + &other.0 * b))
    }

    /// Principal submatrix on `idx` (rows and columns in the given order).
    pub fn principal(&self, idx: &[usize]) -> SymMatrix {
        Self(submatrix(&self.0, idx, idx))
    }

    /// `Tᵀ·self·T`, symmetrized.
    pub fn congruence(&self, t: &DMatrix<f64>) -> SymMatrix {
        Self::symmetrized(t.transpose() * &self.0 * t)
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// max |a_ij − a_ji| / max |a_ij|
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax();
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0_f64;
    for j in 0..m.ncols() {
        for i in (j + 1)..m.nrows() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Copies `a[rows, cols]` into a new matrix.
pub fn submatrix(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

/// Cholesky factorization `A = L·Lᵀ` of a symmetric positive definite matrix.
///
/// The factor is kept so that repeated solves cost two triangular sweeps.
#[derive(Debug, Clone)]
pub struct Factorization {
    l: DMatrix<f64>,
    // Row-major copy of L for the forward sweep.
    lt: DMatrix<f64>,
}

/// Factorizes `a`; fails with `NotPositiveDefinite` when a pivot drops below
/// `PIVOT_TOL` times the largest diagonal entry.
pub fn factorize(a: &SymMatrix) -> Result<Factorization> {
    let n = a.dim();
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let tol = PIVOT_TOL * max_diag;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > tol) {
            return Err(Error::NotPositiveDefinite { row: j, pivot: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    let lt = l.transpose();
    Ok(Factorization { l, lt })
}

impl Factorization {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Lower-triangular Cholesky factor.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn solve(&self, b: &[f64]) -> Result<DVector<f64>> {
        self.check_len(b.len())?;
        let mut x = DVector::from_column_slice(b);
        self.solve_in_place(x.as_mut_slice());
        Ok(x)
    }

    /// Overwrites `x` (holding the right-hand side) with the solution.
    /// Panics if the length is wrong; use [`Factorization::solve`] for checked input.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        self.forward(x);
        self.backward(x);
    }

    /// Solves `L·y = b` in place.
    pub fn forward(&self, x: &mut [f64]) {
        let n = self.dim();
        assert_eq!(x.len(), n);
        // column i of `lt` is row i of L
        for i in 0..n {
            let row = self.lt.column(i);
            let mut s = x[i];
            for k in 0..i {
                s -= row[k] * x[k];
            }
            x[i] = s / row[i];
        }
    }

    /// Solves `Lᵀ·x = y` in place.
    pub fn backward(&self, x: &mut [f64]) {
        let n = self.dim();
        assert_eq!(x.len(), n);
        for i in (0..n).rev() {
            let col = self.l.column(i);
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= col[k] * x[k];
            }
            x[i] = s / col[i];
        }
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_len(b.nrows())?;
        let mut x = b.clone();
        for mut col in x.column_iter_mut() {
            self.solve_in_place(col.as_mut_slice());
        }
        Ok(x)
    }

    pub fn inverse(&self) -> SymMatrix {
        let n = self.dim();
        let inv = self
            .solve_matrix(&DMatrix::identity(n, n))
            .expect("identity is conformable");
        SymMatrix::symmetrized(inv)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: len,
            });
        }
        Ok(())
    }
}

/// Eigenpairs of `K·φ = γ·M·φ`, eigenvalues ascending, vectors M-orthonormal
/// (one per column).
#[derive(Debug, Clone)]
pub struct GeneralizedEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

const EIG_EPS: f64 = 1e-15;
const EIG_MAX_ITER: usize = 10_000;

/// Returns the `count` smallest eigenpairs of the symmetric-definite pencil
/// `(k, m)` via `M = L·Lᵀ` and the standard problem `L⁻¹·K·L⁻ᵀ`.
pub fn sym_generalized_eig(k: &SymMatrix, m: &SymMatrix, count: usize) -> Result<GeneralizedEigen> {
    let n = k.dim();
    if m.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: m.dim(),
        });
    }
    if count == 0 || count > n {
        return Err(Error::InvalidParameter(format!(
            "eigenpair count {count} outside 1..={n}"
        )));
    }
    let chol = factorize(m)?;
    // A = L⁻¹ K L⁻ᵀ = L⁻¹ (L⁻¹ K)ᵀ since K is symmetric
    let mut y = k.as_matrix().clone();
    for mut col in y.column_iter_mut() {
        chol.forward(col.as_mut_slice());
    }
    let mut a = y.transpose();
    for mut col in a.column_iter_mut() {
        chol.forward(col.as_mut_slice());
    }
    let a = SymMatrix::symmetrized(a);
    let eig = SymmetricEigen::try_new(a.into_inner(), EIG_EPS, EIG_MAX_ITER)
        .ok_or(Error::NoConvergence)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    order.truncate(count);

    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, count);
    for (c, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).clone_owned();
        chol.backward(v.as_mut_slice());
        vectors.set_column(c, &v);
    }
    Ok(GeneralizedEigen { values, vectors })
}

/// The `count` smallest eigenvalues of `(k, m)` with relative accuracy at
/// both ends of a widely spread spectrum. The plain reduction loses relative
/// precision on eigenvalues far below the largest one, so when `k` is
/// positive definite the lower part comes from the inverted pencil `(m, k)`.
pub fn sym_generalized_eigenvalues(k: &SymMatrix, m: &SymMatrix, count: usize) -> Result<Vec<f64>> {
    let n = k.dim();
    let direct = sym_generalized_eig(k, m, n)?.values;
    if count > n {
        return Err(Error::InvalidParameter(format!(
            "eigenvalue count {count} outside 1..={n}"
        )));
    }
    if factorize(k).is_err() {
        return Ok(direct[..count].to_vec());
    }
    let mut inverse: Vec<f64> = sym_generalized_eig(m, k, n)?
        .values
        .iter()
        .map(|mu| 1.0 / mu)
        .collect();
    inverse.sort_by(f64::total_cmp);
    let split = (direct[0] * direct[n - 1]).sqrt();
    Ok((0..count)
        .map(|i| {
            if direct[i] < split {
                inverse[i]
            } else {
                direct[i]
            }
        })
        .collect())
}

/// `H = [kmm − kc·ku⁻¹·kcᵀ]⁻¹`, the inverse Schur complement of the
/// `ku` block. Both `ku` and the complement must be positive definite.
pub fn schur_complement_inverse(
    kmm: &SymMatrix,
    kc: &DMatrix<f64>,
    ku: &SymMatrix,
) -> Result<SymMatrix> {
    if kc.nrows() != kmm.dim() {
        return Err(Error::DimensionMismatch {
            expected: kmm.dim(),
            found: kc.nrows(),
        });
    }
    if kc.ncols() != ku.dim() {
        return Err(Error::DimensionMismatch {
            expected: ku.dim(),
            found: kc.ncols(),
        });
    }
    let ku_f = factorize(ku).map_err(|e| Error::SingularBlock(format!("complement block: {e}")))?;
    let x = ku_f.solve_matrix(&kc.transpose())?;
    let schur = SymMatrix::symmetrized(kmm.as_matrix() - kc * x);
    let s_f =
        factorize(&schur).map_err(|e| Error::SingularBlock(format!("Schur complement: {e}")))?;
    Ok(s_f.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    fn spd(n: usize, seed: &[f64]) -> SymMatrix {
        // B·Bᵀ + n·I from a deterministic fill
        let b = DMatrix::from_fn(n, n, |i, j| {
            seed[(i * n + j) % seed.len()] + 0.1 * (i as f64 - j as f64)
        });
        SymMatrix::symmetrized(&b * b.transpose() + DMatrix::identity(n, n) * n as f64)
    }

    #[test]
    fn solve_identity() {
        let f = factorize(&SymMatrix::identity(3)).unwrap();
        let x = f.solve(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn solve_diagonal() {
        let f = factorize(&SymMatrix::from_diagonal(&[2.0, 4.0])).unwrap();
        let x = f.solve(&[2.0, 4.0]).unwrap();
        assert_relative_eq!(x[0], 1.0);
        assert_relative_eq!(x[1], 1.0);
    }

    #[test]
    fn solve_two_by_two_matches_closed_form_inverse() {
        // [[4,1],[1,2]]⁻¹ = 1/7 [[2,-1],[-1,4]]
        let a = SymMatrix::new(dmatrix![4.0, 1.0; 1.0, 2.0]).unwrap();
        let x = factorize(&a).unwrap().solve(&[1.0, 0.0]).unwrap();
        assert_relative_eq!(x[0], 2.0 / 7.0, epsilon = 1e-15);
        assert_relative_eq!(x[1], -1.0 / 7.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_indefinite_and_singular() {
        let a = SymMatrix::new(dmatrix![1.0, 2.0; 2.0, 1.0]).unwrap();
        assert!(matches!(
            factorize(&a),
            Err(Error::NotPositiveDefinite { .. })
        ));
        let s = SymMatrix::new(dmatrix![1.0, 1.0; 1.0, 1.0]).unwrap();
        assert!(matches!(
            factorize(&s),
            Err(Error::NotPositiveDefinite { row: 1, .. })
        ));
    }

    #[test]
    fn solve_wrong_length() {
        let f = factorize(&SymMatrix::identity(3)).unwrap();
        assert!(matches!(
            f.solve(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn asymmetric_input_rejected() {
        let r = SymMatrix::new(dmatrix![1.0, 2.0; 2.1, 1.0]);
        assert!(matches!(r, Err(Error::AsymmetricInput(_))));
    }

    #[test]
    fn generalized_eig_identity_pair() {
        let e = sym_generalized_eig(&SymMatrix::identity(2), &SymMatrix::identity(2), 2).unwrap();
        assert_relative_eq!(e.values[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(e.values[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn generalized_eig_diagonal() {
        let k = SymMatrix::from_diagonal(&[1.0, 4.0]);
        let e = sym_generalized_eig(&k, &SymMatrix::identity(2), 2).unwrap();
        assert_relative_eq!(e.values[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(e.values[1], 4.0, epsilon = 1e-14);
        assert_relative_eq!(e.vectors[(0, 0)].abs(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(e.vectors[(1, 1)].abs(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn generalized_eig_characteristic_polynomial() {
        // det(K − γI) = γ² − 3γ + 1
        let k = SymMatrix::new(dmatrix![2.0, -1.0; -1.0, 1.0]).unwrap();
        let e = sym_generalized_eig(&k, &SymMatrix::identity(2), 2).unwrap();
        let s5 = 5.0_f64.sqrt();
        assert_relative_eq!(e.values[0], (3.0 - s5) / 2.0, epsilon = 1e-14);
        assert_relative_eq!(e.values[1], (3.0 + s5) / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn generalized_eig_count_bounds() {
        let i = SymMatrix::identity(2);
        assert!(sym_generalized_eig(&i, &i, 0).is_err());
        assert!(sym_generalized_eig(&i, &i, 3).is_err());
        let m = SymMatrix::new(dmatrix![1.0, 0.0; 0.0, -1.0]).unwrap();
        assert!(matches!(
            sym_generalized_eig(&i, &m, 1),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn spread_spectrum_keeps_relative_accuracy() {
        // fixed-free unit spring-mass chain
        let n = 200;
        let k = SymMatrix::symmetrized(DMatrix::from_fn(n, n, |i, j| match (i, j) {
            _ if i == j && i == n - 1 => 1.0,
            _ if i == j => 2.0,
            _ if i.abs_diff(j) == 1 => -1.0,
            _ => 0.0,
        }));
        let m = SymMatrix::symmetrized(DMatrix::identity(n, n));
        let values = sym_generalized_eigenvalues(&k, &m, n).unwrap();
        for (j, got) in values.iter().enumerate() {
            let theta = (2 * j + 1) as f64 * std::f64::consts::PI / (2 * (2 * n + 1)) as f64;
            let want = 4.0 * theta.sin().powi(2);
            assert_relative_eq!(*got, want, max_relative = 1e-12);
        }
    }

    #[test]
    fn schur_decoupled_blocks() {
        let kmm = SymMatrix::new(dmatrix![3.0, 1.0; 1.0, 2.0]).unwrap();
        let ku = SymMatrix::from_diagonal(&[5.0]);
        let h = schur_complement_inverse(&kmm, &DMatrix::zeros(2, 1), &ku).unwrap();
        let inv = factorize(&kmm).unwrap().inverse();
        assert_relative_eq!(h.as_matrix(), inv.as_matrix(), epsilon = 1e-15);
    }

    #[test]
    fn schur_two_by_two() {
        let h = schur_complement_inverse(
            &SymMatrix::from_diagonal(&[4.0]),
            &dmatrix![1.0],
            &SymMatrix::from_diagonal(&[2.0]),
        )
        .unwrap();
        assert_relative_eq!(h[(0, 0)], 1.0 / 3.5, epsilon = 1e-15);
    }

    #[test]
    fn schur_singular_block() {
        let r = schur_complement_inverse(
            &SymMatrix::from_diagonal(&[4.0]),
            &dmatrix![1.0],
            &SymMatrix::from_diagonal(&[0.0]),
        );
        assert!(matches!(r, Err(Error::SingularBlock(_))));
    }

    fn arb_spd(max_n: usize) -> impl Strategy<Value = SymMatrix> {
        (1..=max_n).prop_flat_map(|n| {
            prop::collection::vec(-1.0..1.0f64, n * n).prop_map(move |v| {
                let b = DMatrix::from_vec(n, n, v);
                SymMatrix::symmetrized(&b * b.transpose() + DMatrix::identity(n, n))
            })
        })
    }

    proptest! {
        #[test]
        fn spd_solve_residual(a in arb_spd(50), seed in 0u64..1000) {
            let n = a.dim();
            let b: Vec<f64> = (0..n).map(|i| ((i as u64 * 7919 + seed) % 97) as f64 - 48.0).collect();
            let x = factorize(&a).unwrap().solve(&b).unwrap();
            let r = a.as_matrix() * &x - DVector::from_column_slice(&b);
            let bn = DVector::from_column_slice(&b).norm().max(1e-300);
            prop_assert!(r.norm() / bn <= 1e-10);
        }

        #[test]
        fn generalized_pairs_are_m_orthonormal(k in arb_spd(12), mseed in prop::collection::vec(-1.0..1.0f64, 144)) {
            let n = k.dim();
            let b = DMatrix::from_fn(n, n, |i, j| mseed[i * 12 + j]);
            let m = SymMatrix::symmetrized(&b * b.transpose() + DMatrix::identity(n, n));
            let e = sym_generalized_eig(&k, &m, n).unwrap();
            let gram = e.vectors.transpose() * m.as_matrix() * &e.vectors;
            prop_assert!((gram - DMatrix::identity(n, n)).amax() < 1e-10);
            for w in e.values.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            for (i, &g) in e.values.iter().enumerate() {
                let phi = e.vectors.column(i);
                let r = k.as_matrix() * phi - m.as_matrix() * phi * g;
                prop_assert!(r.norm() <= 1e-8 * k.as_matrix().norm() * phi.norm());
            }
        }

        #[test]
        fn schur_inverse_is_block_of_full_inverse(a in arb_spd(8).prop_filter("need two blocks", |a| a.dim() >= 2), split in 1usize..8) {
            let n = a.dim();
            let nm = split.min(n - 1);
            let mi: Vec<usize> = (0..nm).collect();
            let ui: Vec<usize> = (nm..n).collect();
            let h = schur_complement_inverse(&a.principal(&mi), &submatrix(&a, &mi, &ui), &a.principal(&ui)).unwrap();
            let full_inv = a.as_matrix().clone().try_inverse().unwrap();
            let block = submatrix(&full_inv, &mi, &mi);
            prop_assert!((h.as_matrix() - &block).amax() <= 1e-9 * block.amax());
        }
    }

    #[test]
    fn schur_matches_dense_inverse_on_fixed_5x5() {
        let a = spd(5, &[0.3, -0.7, 0.2, 0.9, -0.1, 0.5, 0.4]);
        let mi = [1usize, 3];
        let ui = [0usize, 2, 4];
        let h = schur_complement_inverse(
            &a.principal(&mi),
            &submatrix(&a, &mi, &ui),
            &a.principal(&ui),
        )
        .unwrap();
        let inv = a.as_matrix().clone().try_inverse().unwrap();
        assert_relative_eq!(
            h.as_matrix(),
            &submatrix(&inv, &mi, &mi),
            max_relative = 1e-9
        );
    }
}
