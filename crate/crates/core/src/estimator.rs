//! The two-stage estimator.
//!
//! Stage I regresses the treatment feature on `(Z, O)` and returns the matrix
//! `J = (K_{Z̃Õ} + ñ ξ I)^{-1} (K_{Z̃Z} ⊙ K_{ÕO})` that carries Stage-I
//! treatment features to the Stage-II sample. Stage II is ridge regression
//! with Gram `(Jᵀ K_{X̃X̃} J) ⊙ K_{OO}`, and the fitted function is
//! `f(x, o) = Σ_i k_X(x̃_i, x) Σ_j J_ij α_j k_O(o_j, o)`.
//!
//! The naive baseline treats `(X, O)` as the treatment and `(Z, O)` as the
//! instrument of classical kernel IV. It shares `J` but uses the Stage-II Gram
//! `Jᵀ (K_{X̃X̃} ⊙ K_{ÕÕ}) J`, so it projects the covariate as well.

use nalgebra::{DMatrix, DVector};

use crate::error::{KivoError, Result};
use crate::kernel::{gram, gram_sym, KernelSpec, Points};
use crate::solver::{RegFactor, RegSolveRecord};

/// Column dimensions of instrument, covariate and treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub z: usize,
    pub o: usize,
    pub x: usize,
}

/// Stage-I sample `(z̃, õ, x̃)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Data {
    pub z: Points,
    pub o: Points,
    pub x: Points,
}

/// Stage-II sample `(z, o, y)`; `x` is kept when the generator knows it.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Data {
    pub z: Points,
    pub o: Points,
    pub y: DVector<f64>,
    pub x: Option<Points>,
}

/// Held-out evaluation points with the true regression function.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalData {
    pub x: Points,
    pub o: Points,
    pub f: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dims: Dims,
    pub stage1: Stage1Data,
    pub stage2: Stage2Data,
    pub eval: Option<EvalData>,
}

fn check_len(p: &Points, dim: usize, len: usize, what: &'static str) -> Result<()> {
    if p.dim() != dim {
        return Err(KivoError::dims(dim, p.dim(), what));
    }
    if p.len() != len {
        return Err(KivoError::dims(len, p.len(), what));
    }
    Ok(())
}

impl Dataset {
    pub fn new(dims: Dims, stage1: Stage1Data, stage2: Stage2Data) -> Result<Self> {
        let d = Dataset {
            dims,
            stage1,
            stage2,
            eval: None,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d.x == 0 {
            return Err(KivoError::param("d_x", "treatment dimension must be at least 1"));
        }
        let s1 = &self.stage1;
        let nt = s1.x.len();
        if nt == 0 {
            return Err(KivoError::EmptyInput("stage-1 sample"));
        }
        check_len(&s1.x, d.x, nt, "stage-1 x")?;
        check_len(&s1.z, d.z, nt, "stage-1 z")?;
        check_len(&s1.o, d.o, nt, "stage-1 o")?;
        let s2 = &self.stage2;
        let n = s2.y.len();
        if n == 0 {
            return Err(KivoError::EmptyInput("stage-2 sample"));
        }
        check_len(&s2.z, d.z, n, "stage-2 z")?;
        check_len(&s2.o, d.o, n, "stage-2 o")?;
        if let Some(x) = &s2.x {
            check_len(x, d.x, n, "stage-2 x")?;
        }
        if s2.y.iter().any(|v| !v.is_finite()) {
            return Err(KivoError::param("y", "non-finite response"));
        }
        if let Some(e) = &self.eval {
            let q = e.f.len();
            check_len(&e.x, d.x, q, "eval x")?;
            check_len(&e.o, d.o, q, "eval o")?;
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.stage2.y.len()
    }

    pub fn n_tilde(&self) -> usize {
        self.stage1.x.len()
    }
}

/// The four kernel slots: Stage-I instrument and covariate (Matérn), Stage-II
/// treatment and covariate (Gaussian).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    pub z: KernelSpec,
    pub o1: KernelSpec,
    pub x: KernelSpec,
    pub o2: KernelSpec,
}

impl KernelSet {
    pub fn check(&self, dims: Dims) -> Result<()> {
        for (spec, dim, what) in [
            (&self.z, dims.z, "instrument kernel"),
            (&self.o1, dims.o, "stage-1 covariate kernel"),
            (&self.x, dims.x, "treatment kernel"),
            (&self.o2, dims.o, "stage-2 covariate kernel"),
        ] {
            if spec.input_dim() != dim {
                return Err(KivoError::dims(dim, spec.input_dim(), what));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Map {
    pub j: DMatrix<f64>,
    pub xi: f64,
    pub kz: KernelSpec,
    pub ko1: KernelSpec,
    pub record: RegSolveRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Kivo,
    NaiveAugmented,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Kivo => "kivo",
            Variant::NaiveAugmented => "naive",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "kivo" => Ok(Variant::Kivo),
            "naive" => Ok(Variant::NaiveAugmented),
            other => Err(KivoError::param("variant", format!("unknown `{other}`"))),
        }
    }
}

/// A fitted predictor. Immutable; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct KivoModel {
    pub variant: Variant,
    pub alpha: DVector<f64>,
    pub j: DMatrix<f64>,
    pub x_tilde: Points,
    /// Stage-I covariates; only the naive predictor evaluates at them.
    pub o_tilde: Points,
    /// Stage-II covariates.
    pub o: Points,
    pub kernels: KernelSet,
    pub lambda: f64,
    pub xi: f64,
    pub fit_record: RegSolveRecord,
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(KivoError::param(name, format!("must be positive and finite, got {v}")))
    }
}

/// `K_{Z̃Õ}` and `K_{Z̃Z} ⊙ K_{ÕO}`.
fn stage1_grams(data: &Dataset, kz: &KernelSpec, ko1: &KernelSpec) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let s1 = &data.stage1;
    let s2 = &data.stage2;
    let mut k1 = gram_sym(&s1.z, kz)?;
    k1.component_mul_assign(&gram_sym(&s1.o, ko1)?);
    let mut b = gram(&s1.z, &s2.z, kz)?;
    b.component_mul_assign(&gram(&s1.o, &s2.o, ko1)?);
    Ok((k1, b))
}

/// Stage-I map. `xi = 0` is rejected; pass `1e-12` for the unregularized limit.
pub fn fit_stage1(data: &Dataset, kz: &KernelSpec, ko1: &KernelSpec, xi: f64) -> Result<Stage1Map> {
    data.validate()?;
    positive("xi", xi)?;
    if kz.input_dim() != data.dims.z {
        return Err(KivoError::dims(data.dims.z, kz.input_dim(), "instrument kernel"));
    }
    if ko1.input_dim() != data.dims.o {
        return Err(KivoError::dims(data.dims.o, ko1.input_dim(), "stage-1 covariate kernel"));
    }
    let (k1, b) = stage1_grams(data, kz, ko1)?;
    let factor = RegFactor::new(&k1, data.n_tilde() as f64 * xi)?;
    let j = factor.solve(&b)?;
    Ok(Stage1Map {
        j,
        xi,
        kz: kz.clone(),
        ko1: ko1.clone(),
        record: factor.record(),
    })
}

fn check_map(data: &Dataset, s1: &Stage1Map) -> Result<()> {
    if s1.j.nrows() != data.n_tilde() {
        return Err(KivoError::dims(data.n_tilde(), s1.j.nrows(), "stage-1 map rows"));
    }
    if s1.j.ncols() != data.n() {
        return Err(KivoError::dims(data.n(), s1.j.ncols(), "stage-1 map columns"));
    }
    Ok(())
}

/// `Jᵀ K J`, symmetrized.
pub fn congruence(j: &DMatrix<f64>, k: &DMatrix<f64>) -> DMatrix<f64> {
    let kj = k * j;
    let mut m = j.tr_mul(&kj);
    let n = m.nrows();
    for c in 0..n {
        for r in c + 1..n {
            let v = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
    m
}

/// Stage-II Gram of the chosen variant.
pub fn stage2_gram(
    data: &Dataset,
    j: &DMatrix<f64>,
    kx: &KernelSpec,
    ko2: &KernelSpec,
    variant: Variant,
) -> Result<DMatrix<f64>> {
    let kxx = gram_sym(&data.stage1.x, kx)?;
    match variant {
        Variant::Kivo => {
            let mut k = congruence(j, &kxx);
            k.component_mul_assign(&gram_sym(&data.stage2.o, ko2)?);
            Ok(k)
        }
        Variant::NaiveAugmented => {
            let mut joint = kxx;
            joint.component_mul_assign(&gram_sym(&data.stage1.o, ko2)?);
            Ok(congruence(j, &joint))
        }
    }
}

fn fit_variant(
    data: &Dataset,
    s1: &Stage1Map,
    kx: &KernelSpec,
    ko2: &KernelSpec,
    lambda: f64,
    variant: Variant,
) -> Result<KivoModel> {
    data.validate()?;
    positive("lambda", lambda)?;
    check_map(data, s1)?;
    let kernels = KernelSet {
        z: s1.kz.clone(),
        o1: s1.ko1.clone(),
        x: kx.clone(),
        o2: ko2.clone(),
    };
    kernels.check(data.dims)?;
    let k = stage2_gram(data, &s1.j, kx, ko2, variant)?;
    let factor = RegFactor::new(&k, data.n() as f64 * lambda)?;
    let alpha = factor.solve_vec(&data.stage2.y)?;
    Ok(KivoModel {
        variant,
        alpha,
        j: s1.j.clone(),
        x_tilde: data.stage1.x.clone(),
        o_tilde: data.stage1.o.clone(),
        o: data.stage2.o.clone(),
        kernels,
        lambda,
        xi: s1.xi,
        fit_record: factor.record(),
    })
}

pub fn fit_stage2(
    data: &Dataset,
    s1: &Stage1Map,
    kx: &KernelSpec,
    ko2: &KernelSpec,
    lambda: f64,
) -> Result<KivoModel> {
    fit_variant(data, s1, kx, ko2, lambda, Variant::Kivo)
}

/// Naive Stage II on an existing Stage-I map. The Stage-I system of the
/// augmented problem coincides with the covariate-aware one, so `J` is shared.
pub fn fit_naive_stage2(
    data: &Dataset,
    s1: &Stage1Map,
    kx: &KernelSpec,
    ko2: &KernelSpec,
    lambda: f64,
) -> Result<KivoModel> {
    fit_variant(data, s1, kx, ko2, lambda, Variant::NaiveAugmented)
}

/// Both stages of the estimator.
pub fn fit(data: &Dataset, kernels: &KernelSet, xi: f64, lambda: f64) -> Result<KivoModel> {
    let s1 = fit_stage1(data, &kernels.z, &kernels.o1, xi)?;
    fit_stage2(data, &s1, &kernels.x, &kernels.o2, lambda)
}

/// Both stages of the naive augmented baseline.
pub fn fit_naive_augmented(data: &Dataset, kernels: &KernelSet, xi: f64, lambda: f64) -> Result<KivoModel> {
    let s1 = fit_stage1(data, &kernels.z, &kernels.o1, xi)?;
    fit_naive_stage2(data, &s1, &kernels.x, &kernels.o2, lambda)
}

impl KivoModel {
    pub fn dims(&self) -> (usize, usize) {
        (self.x_tilde.dim(), self.o.dim())
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn predict(&self, x: &[f64], o: &[f64]) -> Result<f64> {
        let (dx, d_o) = self.dims();
        if x.len() != dx {
            return Err(KivoError::dims(dx, x.len(), "query x"));
        }
        if o.len() != d_o {
            return Err(KivoError::dims(d_o, o.len(), "query o"));
        }
        let kx = &self.kernels.x;
        let ko = &self.kernels.o2;
        let nt = self.x_tilde.len();
        let kxv = DVector::from_fn(nt, |i, _| kx.eval_unchecked(self.x_tilde.row(i), x));
        match self.variant {
            Variant::Kivo => {
                let w = self.j.tr_mul(&kxv);
                Ok((0..self.n())
                    .map(|j| w[j] * self.alpha[j] * ko.eval_unchecked(self.o.row(j), o))
                    .sum())
            }
            Variant::NaiveAugmented => {
                let beta = &self.j * &self.alpha;
                Ok((0..nt)
                    .map(|i| beta[i] * kxv[i] * ko.eval_unchecked(self.o_tilde.row(i), o))
                    .sum())
            }
        }
    }

    /// Predictions at paired query points `(x_q, o_q)`.
    pub fn predict_batch(&self, x: &Points, o: &Points) -> Result<DVector<f64>> {
        let (dx, d_o) = self.dims();
        if x.dim() != dx {
            return Err(KivoError::dims(dx, x.dim(), "query x"));
        }
        if o.dim() != d_o {
            return Err(KivoError::dims(d_o, o.dim(), "query o"));
        }
        if x.len() != o.len() {
            return Err(KivoError::dims(x.len(), o.len(), "query rows"));
        }
        if x.is_empty() {
            return Ok(DVector::zeros(0));
        }
        let kqx = gram(x, &self.x_tilde, &self.kernels.x)?;
        match self.variant {
            Variant::Kivo => {
                let mut w = kqx * &self.j;
                w.component_mul_assign(&gram(o, &self.o, &self.kernels.o2)?);
                Ok(w * &self.alpha)
            }
            Variant::NaiveAugmented => {
                let beta = &self.j * &self.alpha;
                let mut w = kqx;
                w.component_mul_assign(&gram(o, &self.o_tilde, &self.kernels.o2)?);
                Ok(w * beta)
            }
        }
    }

    /// Predictions on the product grid `x_a × o_b`, as a `|x| × |o|` matrix.
    pub fn predict_grid(&self, x: &Points, o: &Points) -> Result<DMatrix<f64>> {
        let kqx = gram(x, &self.x_tilde, &self.kernels.x)?;
        let right = match self.variant {
            Variant::Kivo => {
                // J diag(alpha) K_{O, o*}
                let mut ko = gram(&self.o, o, &self.kernels.o2)?;
                for (r, a) in self.alpha.iter().enumerate() {
                    ko.row_mut(r).scale_mut(*a);
                }
                &self.j * ko
            }
            Variant::NaiveAugmented => {
                let beta = &self.j * &self.alpha;
                let mut ko = gram(&self.o_tilde, o, &self.kernels.o2)?;
                for (r, b) in beta.iter().enumerate() {
                    ko.row_mut(r).scale_mut(*b);
                }
                ko
            }
        };
        Ok(kqx * right)
    }
}
