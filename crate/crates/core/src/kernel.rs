//! Kernels and Gram matrices.
//!
//! Stage II uses the anisotropic Gaussian kernel
//! `exp(-|x - x'|^2 / gx^2 - |o - o'|^2 / go^2)`, one lengthscale per input
//! block. Stage I uses Matérn kernels, whose RKHS is norm-equivalent to the
//! Sobolev space of smoothness `nu + d/2`.
//!
//! A block of dimension zero contributes a factor of one, so covariate-free
//! problems (`d_o = 0`) go through the same code path.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{KivoError, Result};

/// Row-major point cloud: `len()` points of dimension `dim()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    len: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            if !data.is_empty() {
                return Err(KivoError::param("points", "zero-dimensional points carry no data"));
            }
            return Ok(Points { dim, len: 0, data });
        }
        if !data.len().is_multiple_of(dim) {
            return Err(KivoError::dims(dim, data.len() % dim, "point buffer length"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(KivoError::param("points", "non-finite coordinate"));
        }
        let len = data.len() / dim;
        Ok(Points { dim, len, data })
    }

    /// `len` points living in a zero-dimensional block.
    pub fn empty_dim(len: usize) -> Self {
        Points {
            dim: 0,
            len,
            data: Vec::new(),
        }
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(KivoError::dims(dim, r.len(), "point row"));
            }
            data.extend_from_slice(r);
        }
        if dim == 0 {
            return Ok(Points::empty_dim(rows.len()));
        }
        Points::new(dim, data)
    }

    /// Single column from a slice of scalars.
    pub fn from_column(values: &[f64]) -> Result<Self> {
        Points::new(1, values.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select(&self, idx: &[usize]) -> Points {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Points {
            dim: self.dim,
            len: idx.len(),
            data,
        }
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hstack(&self, other: &Points) -> Result<Points> {
        if self.len != other.len {
            return Err(KivoError::dims(self.len, other.len, "hstack row count"));
        }
        let dim = self.dim + other.dim;
        let mut data = Vec::with_capacity(self.len * dim);
        for i in 0..self.len {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Points {
            dim,
            len: self.len,
            data,
        })
    }
}

/// Matérn smoothness `nu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaternNu {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl MaternNu {
    pub fn value(self) -> f64 {
        match self {
            MaternNu::Half => 0.5,
            MaternNu::ThreeHalves => 1.5,
            MaternNu::FiveHalves => 2.5,
        }
    }

    pub fn from_value(nu: f64) -> Result<Self> {
        match nu {
            0.5 => Ok(MaternNu::Half),
            1.5 => Ok(MaternNu::ThreeHalves),
            2.5 => Ok(MaternNu::FiveHalves),
            _ => Err(KivoError::param("nu", format!("{nu} is not one of 0.5, 1.5, 2.5"))),
        }
    }

    /// Sobolev smoothness `t = nu + d/2` of the RKHS in dimension `d`.
    pub fn sobolev_order(self, d: usize) -> f64 {
        self.value() + d as f64 / 2.0
    }

    fn profile(self, r: f64) -> f64 {
        match self {
            MaternNu::Half => (-r).exp(),
            MaternNu::ThreeHalves => {
                let s = 3f64.sqrt() * r;
                (1.0 + s) * (-s).exp()
            }
            MaternNu::FiveHalves => {
                let s = 5f64.sqrt() * r;
                (1.0 + s + s * s / 3.0) * (-s).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    AnisotropicGaussian,
    Matern(MaternNu),
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::AnisotropicGaussian => "gaussian",
            KernelFamily::Matern(MaternNu::Half) => "matern12",
            KernelFamily::Matern(MaternNu::ThreeHalves) => "matern32",
            KernelFamily::Matern(MaternNu::FiveHalves) => "matern52",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "gaussian" => KernelFamily::AnisotropicGaussian,
            "matern12" => KernelFamily::Matern(MaternNu::Half),
            "matern32" => KernelFamily::Matern(MaternNu::ThreeHalves),
            "matern52" => KernelFamily::Matern(MaternNu::FiveHalves),
            other => return Err(KivoError::param("kernel family", format!("unknown `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelBlock {
    pub dim: usize,
    pub lengthscale: f64,
}

/// A kernel family plus one lengthscale per contiguous input block.
///
/// Gaussian blocks multiply, which is the same thing as summing the scaled
/// squared distances inside one exponential. Matérn blocks also multiply,
/// each block using its own Euclidean distance.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    blocks: Vec<KernelBlock>,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, blocks: Vec<KernelBlock>) -> Result<Self> {
        for b in &blocks {
            if !(b.lengthscale.is_finite() && b.lengthscale > 0.0) {
                return Err(KivoError::param(
                    "lengthscale",
                    format!("must be positive and finite, got {}", b.lengthscale),
                ));
            }
        }
        Ok(KernelSpec { family, blocks })
    }

    /// Single-block Gaussian `exp(-|x - x'|^2 / lengthscale^2)`.
    pub fn gaussian(dim: usize, lengthscale: f64) -> Result<Self> {
        Self::new(
            KernelFamily::AnisotropicGaussian,
            vec![KernelBlock { dim, lengthscale }],
        )
    }

    /// Two-block Gaussian over a concatenated `(x | o)` input.
    pub fn anisotropic_gaussian(dx: usize, gamma_x: f64, dobs: usize, gamma_o: f64) -> Result<Self> {
        Self::new(
            KernelFamily::AnisotropicGaussian,
            vec![
                KernelBlock {
                    dim: dx,
                    lengthscale: gamma_x,
                },
                KernelBlock {
                    dim: dobs,
                    lengthscale: gamma_o,
                },
            ],
        )
    }

    pub fn matern32(dim: usize, lengthscale: f64) -> Result<Self> {
        Self::matern(MaternNu::ThreeHalves, dim, lengthscale)
    }

    pub fn matern(nu: MaternNu, dim: usize, lengthscale: f64) -> Result<Self> {
        Self::new(KernelFamily::Matern(nu), vec![KernelBlock { dim, lengthscale }])
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn blocks(&self) -> &[KernelBlock] {
        &self.blocks
    }

    pub fn input_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.dim).sum()
    }

    /// Copy of this spec with a different lengthscale on every block.
    pub fn with_lengthscale(&self, lengthscale: f64) -> Result<Self> {
        Self::new(
            self.family,
            self.blocks
                .iter()
                .map(|b| KernelBlock {
                    dim: b.dim,
                    lengthscale,
                })
                .collect(),
        )
    }

    fn check(&self, x: &[f64], y: &[f64]) -> Result<()> {
        let d = self.input_dim();
        if x.len() != d {
            return Err(KivoError::dims(d, x.len(), "kernel argument"));
        }
        if y.len() != d {
            return Err(KivoError::dims(d, y.len(), "kernel argument"));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check(x, y)?;
        Ok(self.eval_unchecked(x, y))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::AnisotropicGaussian => {
                let mut acc = 0.0;
                let mut off = 0;
                for b in &self.blocks {
                    let inv = 1.0 / (b.lengthscale * b.lengthscale);
                    let mut s = 0.0;
                    for j in off..off + b.dim {
                        let d = x[j] - y[j];
                        s += d * d;
                    }
                    acc += s * inv;
                    off += b.dim;
                }
                (-acc).exp()
            }
            KernelFamily::Matern(nu) => {
                let mut prod = 1.0;
                let mut off = 0;
                for b in &self.blocks {
                    let mut s = 0.0;
                    for j in off..off + b.dim {
                        let d = x[j] - y[j];
                        s += d * d;
                    }
                    prod *= nu.profile(s.sqrt() / b.lengthscale);
                    off += b.dim;
                }
                prod
            }
        }
    }
}

/// Anisotropic Gaussian kernel value.
pub fn gaussian_eval(x: &[f64], y: &[f64], spec: &KernelSpec) -> Result<f64> {
    if spec.family != KernelFamily::AnisotropicGaussian {
        return Err(KivoError::param("kernel family", "expected an anisotropic Gaussian spec"));
    }
    spec.eval(x, y)
}

/// Matérn-3/2 kernel value `(1 + sqrt(3) r / l) exp(-sqrt(3) r / l)`.
pub fn matern32_eval(x: &[f64], y: &[f64], spec: &KernelSpec) -> Result<f64> {
    if spec.family != KernelFamily::Matern(MaternNu::ThreeHalves) {
        return Err(KivoError::param("kernel family", "expected a Matérn-3/2 spec"));
    }
    spec.eval(x, y)
}

fn check_points(points: &Points, spec: &KernelSpec, what: &'static str) -> Result<()> {
    if points.is_empty() {
        return Err(KivoError::EmptyInput(what));
    }
    if points.dim() != spec.input_dim() {
        return Err(KivoError::dims(spec.input_dim(), points.dim(), what));
    }
    Ok(())
}

/// Cross Gram matrix `K[i][j] = k(rows[i], cols[j])`.
pub fn gram(rows: &Points, cols: &Points, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    check_points(rows, spec, "gram rows")?;
    check_points(cols, spec, "gram cols")?;
    let n = rows.len();
    let mut k = DMatrix::zeros(n, cols.len());
    k.as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(j, col)| {
            let c = cols.row(j);
            for (i, v) in col.iter_mut().enumerate() {
                *v = spec.eval_unchecked(rows.row(i), c);
            }
        });
    Ok(k)
}

/// Square Gram matrix of a point set with itself; exactly symmetric.
pub fn gram_sym(points: &Points, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    check_points(points, spec, "gram points")?;
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    k.as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(j, col)| {
            let c = points.row(j);
            for (i, v) in col.iter_mut().enumerate().skip(j) {
                *v = spec.eval_unchecked(points.row(i), c);
            }
        });
    k.fill_upper_triangle_with_lower_triangle();
    Ok(k)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(k: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(k.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// PSD tolerance used for Gram checks: `1e-8 * trace / n`.
pub fn psd_tolerance(k: &DMatrix<f64>) -> f64 {
    1e-8 * k.trace() / k.nrows().max(1) as f64
}
