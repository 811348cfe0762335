//! Dense symmetric kernels: Cholesky, triangular solves, symmetric
//! eigendecomposition, and the simultaneous reduction of a positive-definite
//! and a positive-semidefinite form.
//!
//! The simultaneous reduction is what makes every per-iteration posterior
//! quantity diagonal: for `A` positive definite and `B` positive semidefinite
//! it returns `U` with `UᵀAU = I` and `UᵀBU = diag(d)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative threshold below which a reduced eigenvalue is treated as zero.
pub const ZERO_EIGEN_RELATIVE: f64 = 1e-8;

/// Relative asymmetry tolerated by [`simul_reduce`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Which triangular system [`triangular_solve`] solves for an upper factor `R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Solve `Rᵀx = b`.
    Forward,
    /// Solve `Rx = b`.
    Backward,
}

/// Upper-triangular Cholesky factor `R` with `RᵀR = M`.
///
/// The failing pivot index is reported when `M` is not positive definite.
pub fn cholesky_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Dimension(format!("cholesky of {}x{} matrix", n, m.ncols())));
    }
    // Row-major lower factor so that inner products run over contiguous memory.
    let mut l = vec![0.0_f64; n * n];
    for j in 0..n {
        let row_j = j * n;
        let mut diag = m[(j, j)];
        for k in 0..j {
            diag -= l[row_j + k] * l[row_j + k];
        }
        let scale = m[(j, j)].abs().max(f64::MIN_POSITIVE);
        if !(diag > 1e-14 * scale) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let ljj = diag.sqrt();
        l[row_j + j] = ljj;
        for i in (j + 1)..n {
            let row_i = i * n;
            let dot: f64 = l[row_i..row_i + j]
                .iter()
                .zip(&l[row_j..row_j + j])
                .map(|(a, b)| a * b)
                .sum();
            l[row_i + j] = (m[(i, j)] - dot) / ljj;
        }
    }
    // Column-major storage of R = Lᵀ is exactly the row-major storage of L.
    Ok(DMatrix::from_vec(n, n, l))
}

/// Solves `Rᵀx = b` (forward) or `Rx = b` (backward) for upper-triangular `R`.
pub fn triangular_solve(r: &DMatrix<f64>, b: &DVector<f64>, side: Side) -> Result<DVector<f64>> {
    let n = r.nrows();
    if r.ncols() != n || b.len() != n {
        return Err(Error::Dimension(format!(
            "triangular solve with {}x{} factor and rhs of length {}",
            n,
            r.ncols(),
            b.len()
        )));
    }
    if let Some(index) = (0..n).find(|&i| r[(i, i)] == 0.0) {
        return Err(Error::SingularSolve { index });
    }
    let mut x = b.clone();
    match side {
        Side::Forward => {
            // Rᵀ is lower triangular; column i of R holds row i of Rᵀ.
            for i in 0..n {
                let col = r.column(i);
                let mut s = x[i];
                for k in 0..i {
                    s -= col[k] * x[k];
                }
                x[i] = s / r[(i, i)];
            }
        }
        Side::Backward => {
            for i in (0..n).rev() {
                let mut s = x[i];
                for k in (i + 1)..n {
                    s -= r[(i, k)] * x[k];
                }
                x[i] = s / r[(i, i)];
            }
        }
    }
    Ok(x)
}

/// Solves `RᵀR x = b` given the upper Cholesky factor.
pub fn cholesky_solve(r: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let w = triangular_solve(r, b, Side::Forward)?;
    triangular_solve(r, &w, Side::Backward)
}

/// Inverse of a symmetric positive-definite matrix via its Cholesky factor.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r = cholesky_spd(m)?;
    let n = r.nrows();
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(n, n))
        .ok_or(Error::SingularSolve { index: 0 })?;
    let mut inv = &r_inv * r_inv.transpose();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Replaces `m` by `(m + mᵀ)/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Largest absolute asymmetry relative to the largest absolute entry.
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

fn ensure_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("{}x{} matrix is not square", m.nrows(), m.ncols())));
    }
    let asym = relative_asymmetry(m);
    if asym > SYMMETRY_TOLERANCE {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Factors of the simultaneous reduction of `(A, B)`.
///
/// `UᵀAU = I`, `UᵀBU = diag(d)` with `d` sorted descending and clamped to
/// exact zeros below [`ZERO_EIGEN_RELATIVE`]` · max(d)`, and `A = P diag(λ) Pᵀ`
/// with `λ` ascending.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    pub u: DMatrix<f64>,
    pub d: DVector<f64>,
    pub p: DMatrix<f64>,
    pub lambda: DVector<f64>,
}

impl SpectralBasis {
    pub fn dim(&self) -> usize {
        self.d.len()
    }

    /// Number of reduced eigenvalues that were clamped to zero.
    pub fn zero_count(&self) -> usize {
        self.d.iter().filter(|&&x| x == 0.0).count()
    }

    /// `D*`: indicator of a strictly positive reduced eigenvalue.
    pub fn positive_indicator(&self) -> DVector<f64> {
        self.d.map(|x| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// `U⁻¹x`, using `U⁻¹ = UᵀA` for the first form `A` of the reduction.
    pub fn u_inverse_apply(&self, a: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
        self.u.tr_mul(&(a * x))
    }

    /// `U diag(w) Uᵀ`.
    pub fn congruence(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let mut scaled = self.u.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= w[j];
        }
        let mut out = scaled * self.u.transpose();
        symmetrize(&mut out);
        out
    }
}

/// Simultaneously reduces a symmetric positive-definite `a` and a symmetric
/// positive-semidefinite `b`.
pub fn simul_reduce(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<SpectralBasis> {
    ensure_symmetric(a)?;
    ensure_symmetric(b)?;
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "simul_reduce of {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let n = a.nrows();
    let mut a_sym = a.clone();
    symmetrize(&mut a_sym);
    let (lambda, p) = sym_eigen(&a_sym);
    if let Some(pivot) = (0..n).find(|&i| !(lambda[i] > 0.0)) {
        return Err(Error::NotPositiveDefinite { pivot });
    }

    // A^{-1/2} = P Λ^{-1/2} Pᵀ
    let mut p_scaled = p.clone();
    for (j, mut col) in p_scaled.column_iter_mut().enumerate() {
        col /= lambda[j].sqrt();
    }
    let a_inv_half = &p_scaled * p.transpose();

    let mut reduced = &a_inv_half * b * &a_inv_half;
    symmetrize(&mut reduced);
    let (d_asc, c_asc) = sym_eigen(&reduced);

    let mut d = DVector::zeros(n);
    let mut c = DMatrix::zeros(n, n);
    for k in 0..n {
        let src = n - 1 - k;
        d[k] = d_asc[src];
        c.set_column(k, &c_asc.column(src));
    }
    let d_max = d.iter().cloned().fold(0.0_f64, f64::max);
    let cut = ZERO_EIGEN_RELATIVE * d_max;
    for x in d.iter_mut() {
        if *x < cut || *x <= 0.0 {
            *x = 0.0;
        }
    }
    let u = a_inv_half * c;
    Ok(SpectralBasis { u, d, p, lambda })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frob(m: &DMatrix<f64>) -> f64 {
        m.norm()
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &g * g.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn cholesky_identity_and_two_by_two() {
        let r = cholesky_spd(&DMatrix::identity(3, 3)).unwrap();
        assert!((r - DMatrix::identity(3, 3)).norm() < 1e-15);

        let m = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let r = cholesky_spd(&m).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2f64.sqrt()]);
        assert!((&r - expected).norm() < 1e-14);
        assert!((r.transpose() * &r - &m).norm() / m.norm() < 1e-10);
    }

    #[test]
    fn cholesky_reports_deficient_pivot() {
        // rank one: second pivot vanishes
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 2.0]);
        match cholesky_spd(&m) {
            Err(Error::NotPositiveDefinite { pivot }) => assert_eq!(pivot, 1),
            other => panic!("expected pivot failure, got {other:?}"),
        }
    }

    #[test]
    fn triangular_solves() {
        let b = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let x = triangular_solve(&DMatrix::identity(3, 3), &b, Side::Forward).unwrap();
        assert_eq!(x, b);

        let r = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2f64.sqrt()]);
        let x = triangular_solve(&r, &DVector::from_vec(vec![4.0, 2f64.sqrt()]), Side::Backward).unwrap();
        assert!((x[0] - 1.5).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);

        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        assert!(matches!(
            triangular_solve(&singular, &DVector::zeros(2), Side::Backward),
            Err(Error::SingularSolve { index: 1 })
        ));
    }

    #[test]
    fn cholesky_solve_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_spd(6, &mut rng);
        let b = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let r = cholesky_spd(&m).unwrap();
        let x = cholesky_solve(&r, &b).unwrap();
        let oracle = m.clone().try_inverse().unwrap() * &b;
        assert!((x - oracle).norm() < 1e-9);
    }

    #[test]
    fn eigen_residual_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_spd(20, &mut rng);
        let (vals, vecs) = sym_eigen(&m);
        let recon = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        assert!(frob(&(recon - &m)) / frob(&m) < 1e-9);
        assert!(vals.as_slice().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn simul_reduce_identity_first_form() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0]));
        let s = simul_reduce(&a, &b).unwrap();
        assert!((s.d[0] - 3.0).abs() < 1e-12 && (s.d[1] - 2.0).abs() < 1e-12);
        assert!((s.u.transpose() * &s.u - DMatrix::identity(2, 2)).norm() < 1e-12);
        let utbu = s.u.transpose() * &b * &s.u;
        assert!((utbu - DMatrix::from_diagonal(&s.d)).norm() < 1e-12);
    }

    #[test]
    fn simul_reduce_zero_second_form() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let s = simul_reduce(&a, &DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(s.d.as_slice(), &[0.0, 0.0]);
        assert!((s.u.transpose() * &a * &s.u - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn simul_reduce_rejects_bad_input() {
        let mut a = DMatrix::identity(3, 3);
        a[(0, 1)] = 0.1;
        assert!(matches!(simul_reduce(&a, &DMatrix::zeros(3, 3)), Err(Error::NotSymmetric { .. })));
        let neg = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(
            simul_reduce(&neg, &DMatrix::zeros(2, 2)),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn simul_reduce_projector_has_p_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 8;
        let a = random_spd(n, &mut rng);
        let x = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
        let h = &x * xtx_inv * x.transpose();
        let b = DMatrix::identity(n, n) - h;
        let s = simul_reduce(&a, &b).unwrap();
        assert_eq!(s.zero_count(), 3);
        let trace_star: f64 = s.positive_indicator().sum();
        assert_eq!(trace_star, (n - 3) as f64);
        let tol = 1e-8 * n as f64;
        assert!((s.u.transpose() * &a * &s.u - DMatrix::identity(n, n)).norm() < tol);
        assert!((s.u.transpose() * &b * &s.u - DMatrix::from_diagonal(&s.d)).norm() < tol);
        let recon = &s.p * DMatrix::from_diagonal(&s.lambda) * s.p.transpose();
        assert!((recon - &a).norm() < tol);
    }

    /// Brute-force generalized eigensolver: eigenvalues of A⁻¹B via the
    /// Cholesky-whitened form L⁻¹BL⁻ᵀ built from nalgebra's own factorization.
    fn generalized_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
        let l = a.clone().cholesky().unwrap().l();
        let l_inv = l.try_inverse().unwrap();
        let w = &l_inv * b * l_inv.transpose();
        let w = (&w + w.transpose()) * 0.5;
        let mut v: Vec<f64> = w.symmetric_eigenvalues().iter().cloned().collect();
        v.sort_by(|x, y| y.total_cmp(x));
        v
    }

    #[test]
    fn simul_reduce_matches_generalized_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let a = random_spd(5, &mut rng);
        let g = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        let b = &g * g.transpose();
        let s = simul_reduce(&a, &b).unwrap();
        let oracle = generalized_oracle(&a, &b);
        for (k, &o) in oracle.iter().enumerate() {
            if o.abs() < 1e-8 * oracle[0] {
                assert_eq!(s.d[k], 0.0);
            } else {
                assert!((s.d[k] - o).abs() < 1e-9 * oracle[0], "{k}: {} vs {o}", s.d[k]);
            }
        }
        // every column satisfies B u = d A u
        for k in 0..5 {
            let uk = s.u.column(k).into_owned();
            let lhs = &b * &uk;
            let rhs = &a * &uk * s.d[k];
            assert!((lhs - rhs).norm() < 1e-8);
        }
    }
}
