//! Regularized symmetric solves `(K + c I)^{-1} B` and the leave-one-out
//! shortcut.
//!
//! Both stages solve against `K + c I` with a PSD Gram `K`. The factor is a
//! Cholesky decomposition; triangular solves are blocked so that the bulk of
//! the work runs through matrix products, which matters when `B` has as many
//! columns as `K` (the Stage-I map).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{KivoError, Result};

const BLOCK: usize = 128;
const JITTER_STEPS: usize = 3;

/// How a regularized system was actually solved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegSolveRecord {
    pub ridge: f64,
    pub jitter_applied: f64,
    /// `(max L_ii / min L_ii)^2`, a cheap lower bound on the 2-norm condition number.
    pub condition_estimate: f64,
}

/// Cholesky factor of `K + (ridge + jitter) I`.
#[derive(Debug, Clone)]
pub struct RegFactor {
    l: DMatrix<f64>,
    record: RegSolveRecord,
}

fn validate(k: &DMatrix<f64>, ridge: f64) -> Result<()> {
    if !k.is_square() {
        return Err(KivoError::dims(k.nrows(), k.ncols(), "Gram matrix must be square"));
    }
    if k.nrows() == 0 {
        return Err(KivoError::EmptyInput("Gram matrix"));
    }
    if !(ridge.is_finite() && ridge > 0.0) {
        return Err(KivoError::param("ridge", format!("must be positive and finite, got {ridge}")));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(KivoError::param("gram", "non-finite entry"));
    }
    Ok(())
}

impl RegFactor {
    /// Factor `K + ridge I`. On failure, adds `1e-10 * trace / n` and
    /// escalates it tenfold up to three times.
    pub fn new(k: &DMatrix<f64>, ridge: f64) -> Result<Self> {
        validate(k, ridge)?;
        let n = k.nrows();
        let mut a = k.clone();
        // Symmetrize to guard against round-off asymmetry in callers' products.
        for j in 0..n {
            for i in j + 1..n {
                let v = 0.5 * (a[(i, j)] + a[(j, i)]);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        let base = 1e-10 * (k.trace().abs() / n as f64).max(f64::MIN_POSITIVE);
        let mut jitter = 0.0;
        for step in 0..=JITTER_STEPS {
            if step > 0 {
                jitter = base * 10f64.powi(step as i32 - 1);
                log::warn!("Cholesky failed at ridge {ridge:e}; retrying with jitter {jitter:e}");
            }
            let mut m = a.clone();
            for i in 0..n {
                m[(i, i)] += ridge + jitter;
            }
            if let Some(ch) = Cholesky::<f64, Dyn>::new(m) {
                let l = ch.unpack();
                let diag = l.diagonal();
                let (lo, hi) = diag
                    .iter()
                    .fold((f64::INFINITY, 0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
                let record = RegSolveRecord {
                    ridge,
                    jitter_applied: jitter,
                    condition_estimate: (hi / lo).powi(2),
                };
                return Ok(RegFactor { l, record });
            }
        }
        Err(KivoError::Factorization { ridge, jitter })
    }

    pub fn record(&self) -> RegSolveRecord {
        self.record
    }

    pub fn size(&self) -> usize {
        self.l.nrows()
    }

    /// `(K + c I)^{-1} B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if b.nrows() != self.size() {
            return Err(KivoError::dims(self.size(), b.nrows(), "right-hand side rows"));
        }
        let mut x = b.clone();
        forward_in_place(&self.l, &mut x);
        backward_in_place(&self.l, &mut x);
        Ok(x)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.size() {
            return Err(KivoError::dims(self.size(), b.len(), "right-hand side length"));
        }
        let mut x = b.clone();
        self.l.solve_lower_triangular_mut(&mut x);
        self.l.tr_solve_lower_triangular_mut(&mut x);
        Ok(x)
    }

    /// Diagonal of `(K + c I)^{-1}`, via the squared column norms of `L^{-1}`.
    pub fn inverse_diagonal(&self) -> DVector<f64> {
        let n = self.size();
        let mut linv = DMatrix::identity(n, n);
        forward_in_place(&self.l, &mut linv);
        DVector::from_iterator(n, linv.column_iter().map(|c| c.norm_squared()))
    }
}

/// Solves `L X = B` in place for lower-triangular `L`.
fn forward_in_place(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    let mut k0 = 0;
    while k0 < n {
        let bs = BLOCK.min(n - k0);
        if k0 > 0 {
            let update = l.view((k0, 0), (bs, k0)) * b.rows(0, k0);
            let mut rows = b.rows_mut(k0, bs);
            rows -= update;
        }
        let diag = l.view((k0, k0), (bs, bs));
        let mut rows = b.rows_mut(k0, bs);
        diag.solve_lower_triangular_mut(&mut rows);
        k0 += bs;
    }
}

/// Solves `L^T X = B` in place for lower-triangular `L`.
fn backward_in_place(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    let mut k1 = n;
    while k1 > 0 {
        let bs = BLOCK.min(k1);
        let k0 = k1 - bs;
        if k1 < n {
            let update = l.view((k1, k0), (n - k1, bs)).tr_mul(&b.rows(k1, n - k1));
            let mut rows = b.rows_mut(k0, bs);
            rows -= update;
        }
        let diag = l.view((k0, k0), (bs, bs));
        let mut rows = b.rows_mut(k0, bs);
        diag.tr_solve_lower_triangular_mut(&mut rows);
        k1 = k0;
    }
}

/// `(K + ridge I)^{-1} B` for symmetric PSD `K`.
pub fn reg_solve(k: &DMatrix<f64>, ridge: f64, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    RegFactor::new(k, ridge)?.solve(b)
}

/// Leave-one-out residuals of kernel ridge regression with ridge `c`.
///
/// With `A = K + c I` and `alpha = A^{-1} y`, the residual of the fit that
/// omits row `i` is `alpha_i / (A^{-1})_ii`, i.e. `(y_i - yhat_i) / (1 - H_ii)`.
pub fn loo_residuals(k: &DMatrix<f64>, ridge: f64, y: &DVector<f64>) -> Result<DVector<f64>> {
    let f = RegFactor::new(k, ridge)?;
    loo_from_factor(&f, y)
}

pub fn loo_from_factor(f: &RegFactor, y: &DVector<f64>) -> Result<DVector<f64>> {
    let alpha = f.solve_vec(y)?;
    let inv_diag = f.inverse_diagonal();
    let c = f.record().ridge + f.record().jitter_applied;
    let mut r = DVector::zeros(y.len());
    for i in 0..y.len() {
        let slack = c * inv_diag[i];
        if slack <= 1e-12 {
            return Err(KivoError::DegenerateLeverage { row: i, slack });
        }
        r[i] = alpha[i] / inv_diag[i];
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_psd(n: usize, rank: usize, seed: u64) -> DMatrix<f64> {
        // Small LCG keeps the oracle independent of the crate's RNG plumbing.
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let g = DMatrix::from_fn(n, rank, |_, _| next());
        &g * g.transpose()
    }

    fn dense_inverse_solve(k: &DMatrix<f64>, c: f64, b: &DMatrix<f64>) -> DMatrix<f64> {
        let n = k.nrows();
        let a = k + DMatrix::identity(n, n) * c;
        a.try_inverse().unwrap() * b
    }

    #[test]
    fn identity_and_pure_ridge() {
        let x = reg_solve(&DMatrix::identity(2, 2), 1.0, &DMatrix::from_column_slice(2, 1, &[2.0, 4.0]))
            .unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
        let y = DMatrix::from_column_slice(2, 1, &[0.3, -7.0]);
        let x = reg_solve(&DMatrix::zeros(2, 2), 1.0, &y).unwrap();
        assert!((x - y).amax() < 1e-15);
    }

    #[test]
    fn hand_two_by_two() {
        let k = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let x = reg_solve(&k, 1.0, &DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        assert!((x[0] - 3.0 / 8.0).abs() < 1e-15);
        assert!((x[1] + 1.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn blocked_solve_matches_dense_oracle() {
        // Spans several blocks with a ragged tail.
        let n = 2 * BLOCK + 37;
        let k = random_psd(n, 40, 7);
        let b = DMatrix::from_fn(n, 5, |i, j| ((i * 31 + j * 17) % 13) as f64 - 6.0);
        let c = 0.5;
        let x = reg_solve(&k, c, &b).unwrap();
        let resid = (&k * &x + &x * c - &b).amax();
        assert!(resid <= 1e-8 * (1.0 + b.amax()), "residual {resid}");
        assert!((x - dense_inverse_solve(&k, c, &b)).amax() < 1e-9);
    }

    #[test]
    fn inverse_diagonal_matches_dense() {
        let n = BLOCK + 11;
        let k = random_psd(n, n, 3);
        let f = RegFactor::new(&k, 0.2).unwrap();
        let inv = (k + DMatrix::identity(n, n) * 0.2).try_inverse().unwrap();
        let d = f.inverse_diagonal();
        for i in 0..n {
            assert!((d[i] - inv[(i, i)]).abs() <= 1e-9 * inv[(i, i)].abs().max(1.0));
        }
    }

    #[test]
    fn rejects_bad_input() {
        let k = DMatrix::identity(2, 2);
        let b = DMatrix::zeros(2, 1);
        assert!(matches!(reg_solve(&k, 0.0, &b), Err(KivoError::InvalidParameter { .. })));
        assert!(matches!(
            reg_solve(&DMatrix::zeros(2, 3), 1.0, &b),
            Err(KivoError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            reg_solve(&k, 1.0, &DMatrix::zeros(3, 1)),
            Err(KivoError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn indefinite_input_fails_after_jitter() {
        let k = DMatrix::from_row_slice(2, 2, &[-5.0, 0.0, 0.0, 1.0]);
        let err = reg_solve(&k, 1.0, &DMatrix::zeros(2, 1)).unwrap_err();
        assert!(err.is_numerical());
    }

    #[test]
    fn loo_trivial_cases() {
        let r = loo_residuals(&DMatrix::from_element(1, 1, 1.0), 1.0, &DVector::from_element(1, 2.5))
            .unwrap();
        assert!((r[0] - 2.5).abs() < 1e-14);
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let r = loo_residuals(&DMatrix::zeros(3, 3), 0.7, &y).unwrap();
        assert!((r - y).amax() < 1e-14);
    }

    fn refit_oracle(k: &DMatrix<f64>, c: f64, y: &DVector<f64>) -> DVector<f64> {
        let n = y.len();
        DVector::from_fn(n, |i, _| {
            let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            if keep.is_empty() {
                return y[i];
            }
            let m = keep.len();
            let kk = DMatrix::from_fn(m, m, |a, b| k[(keep[a], keep[b])]);
            let yy = DVector::from_fn(m, |a, _| y[keep[a]]);
            let alpha = (kk + DMatrix::identity(m, m) * c).try_inverse().unwrap() * yy;
            let pred: f64 = (0..m).map(|a| k[(i, keep[a])] * alpha[a]).sum();
            y[i] - pred
        })
    }

    #[test]
    fn loo_matches_refit_on_random_three() {
        let k = random_psd(3, 3, 11);
        let y = DVector::from_vec(vec![0.4, -1.3, 2.0]);
        let r = loo_residuals(&k, 0.3, &y).unwrap();
        assert!((r - refit_oracle(&k, 0.3, &y)).amax() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn loo_equals_refit(n in 1usize..=40, rank in 1usize..=40, seed in 0u64..1000, c in 0.01f64..5.0) {
            let k = random_psd(n, rank.min(n), seed);
            let y = DVector::from_fn(n, |i, _| ((i as f64) * 0.37 + seed as f64).sin());
            let r = loo_residuals(&k, c, &y).unwrap();
            let o = refit_oracle(&k, c, &y);
            let scale = 1.0 + o.amax();
            prop_assert!((r - o).amax() <= 1e-8 * scale);
        }

        #[test]
        fn solve_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let n = 12;
            let k = random_psd(n, 6, seed);
            let b1 = DMatrix::from_fn(n, 2, |i, j| ((i + 3 * j) as f64).cos());
            let b2 = DMatrix::from_fn(n, 2, |i, j| ((2 * i + j) as f64).sin());
            let lhs = reg_solve(&k, 0.4, &(&b1 * a + &b2 * b)).unwrap();
            let rhs = reg_solve(&k, 0.4, &b1).unwrap() * a + reg_solve(&k, 0.4, &b2).unwrap() * b;
            prop_assert!((lhs - rhs).amax() <= 1e-10 * (1.0 + a.abs() + b.abs()));
        }

        #[test]
        fn ridge_dominance(seed in 0u64..1000, c in 1.0f64..1e8) {
            // The sup-norm bound |b|_inf / c fails at second order in 1/c, so
            // the contraction is checked in the Euclidean norm.
            let n = 8;
            let k = random_psd(n, 4, seed);
            let b = DMatrix::from_fn(n, 1, |i, _| (i as f64) - 3.5);
            let x = reg_solve(&k, c, &b).unwrap();
            prop_assert!(x.norm() <= b.norm() / c * (1.0 + 1e-12));
        }
    }
}
