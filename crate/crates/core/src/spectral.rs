//! Cardinal B-splines, their Fourier transforms, and frequency-masked
//! hard instances.
//!
//! A hard instance is a sum of bumps that are B-splines in the covariate and,
//! in the treatment, B-splines whose spectrum has been cut down to a small box
//! of high frequencies:
//!
//! `Ω_ℓ(x) = 2 Re[(2π)^{-d} ∫_{I_ℓ} F[B](ν) e^{i⟨ν, S x⟩} dν]`,
//!
//! where `F[B](ν) = Π sinc(ν_j / 2)^𝔪` is the transform of the centred spline
//! and `I_ℓ` is a box of side `1/S` inside `[1.1π, 1.95π]^d`. Taking twice the
//! real part adds the mirrored box, so every instance is real.
//!
//! The box integrals are computed by projecting `F[B]` on each box onto
//! Legendre polynomials with a Gauss–Legendre rule of order 32 (validated by
//! order doubling) and integrating each term exactly:
//! `∫_{-1}^{1} P_n(t) e^{iωt} dt = 2 iⁿ j_n(ω)`. Evaluation cost is therefore
//! independent of how far `x` is from the origin.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{KivoError, Result};
use crate::quadrature::GaussLegendre;
use crate::rng::{stream, Role};
use crate::synthdata::{bump_density, w_density, w_knots};

/// Cardinal B-spline with `m + 1` unit-box factors, supported on `[0, m + 1]`.
///
/// Evaluated by the Cox–de Boor recursion on the integer knots.
pub fn bspline_eval(m: u32, t: f64) -> f64 {
    let m = m as usize;
    if !(t >= 0.0 && t < (m + 1) as f64) {
        return 0.0;
    }
    let j = t.floor() as usize;
    // b[i] holds B_d(t - i); only B_0(t - j) is non-zero initially.
    let mut b = vec![0.0; m + 2];
    b[j] = 1.0;
    for d in 1..=m {
        for i in 0..=m - d {
            let s = t - i as f64;
            b[i] = (s * b[i] + (d as f64 + 1.0 - s) * b[i + 1]) / d as f64;
        }
    }
    b[0]
}

/// `e^{-i m ω / 2} (sin(ω/2) / (ω/2))^m`, the transform of the spline with
/// `m` factors, i.e. of `bspline_eval(m - 1, ·)`.
pub fn bspline_fourier(m: u32, omega: f64) -> Complex64 {
    Complex64::from_polar(sinc_half(omega).powi(m as i32), -(m as f64) * omega / 2.0)
}

/// `sin(ω/2) / (ω/2)`.
fn sinc_half(omega: f64) -> f64 {
    let h = 0.5 * omega;
    if h.abs() < 1e-8 {
        1.0 - h * h / 6.0
    } else {
        h.sin() / h
    }
}

/// Spherical Bessel functions `j_0(x) .. j_nmax(x)`.
pub fn spherical_bessel(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    let ax = x.abs();
    if ax == 0.0 {
        out[0] = 1.0;
        return out;
    }
    if ax > nmax as f64 + 1.0 {
        // Upward recurrence is stable while n < x.
        out[0] = ax.sin() / ax;
        if nmax >= 1 {
            out[1] = ax.sin() / (ax * ax) - ax.cos() / ax;
        }
        for n in 1..nmax {
            out[n + 1] = (2 * n + 1) as f64 / ax * out[n] - out[n - 1];
        }
    } else {
        // Miller's downward recurrence, normalized by a closed form.
        let start = nmax + 30 + ax as usize;
        let mut next = 0.0;
        let mut cur = 1e-30;
        for n in (0..=start).rev() {
            if n <= nmax {
                out[n] = cur;
            }
            let prev = (2 * n + 1) as f64 / ax * cur - next;
            next = cur;
            cur = prev;
            if cur.abs() > 1e200 {
                cur *= 1e-200;
                next *= 1e-200;
                for v in out.iter_mut() {
                    *v *= 1e-200;
                }
            }
        }
        let j0 = if ax < 1e-4 {
            1.0 - ax * ax / 6.0
        } else {
            ax.sin() / ax
        };
        let scale = if j0.abs() >= 0.1 || nmax == 0 {
            j0 / out[0]
        } else {
            (ax.sin() / (ax * ax) - ax.cos() / ax) / out[1]
        };
        for v in out.iter_mut() {
            *v *= scale;
        }
    }
    if x < 0.0 {
        for (n, v) in out.iter_mut().enumerate() {
            if n % 2 == 1 {
                *v = -*v;
            }
        }
    }
    out
}

fn legendre_all(nmax: usize, t: f64) -> Vec<f64> {
    let mut p = vec![0.0; nmax + 1];
    p[0] = 1.0;
    if nmax >= 1 {
        p[1] = t;
    }
    for n in 1..nmax {
        p[n + 1] = ((2 * n + 1) as f64 * t * p[n] - n as f64 * p[n - 1]) / (n + 1) as f64;
    }
    p
}

const LEGENDRE_TERMS: usize = 28;
const BOX_ORDER: usize = 32;

/// Legendre projection of a smooth real amplitude on `[a, b]`, integrated
/// exactly against `e^{iνu}`.
#[derive(Debug, Clone)]
struct BoxIntegral {
    center: f64,
    half: f64,
    coeffs: Vec<f64>,
}

impl BoxIntegral {
    fn new<F: Fn(f64) -> f64>(a: f64, b: f64, amp: &F) -> Result<Self> {
        let center = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let project = |order: usize| -> Vec<f64> {
            let rule = GaussLegendre::new(order);
            let mut c = vec![0.0; LEGENDRE_TERMS];
            for (t, w) in rule.nodes.iter().zip(&rule.weights) {
                let v = amp(center + half * t) * w;
                for (n, p) in legendre_all(LEGENDRE_TERMS - 1, *t).iter().enumerate() {
                    c[n] += v * p;
                }
            }
            for (n, cn) in c.iter_mut().enumerate() {
                *cn *= (2 * n + 1) as f64 / 2.0;
            }
            c
        };
        let coeffs = project(BOX_ORDER);
        let check = project(2 * BOX_ORDER);
        let change = coeffs
            .iter()
            .zip(&check)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if change > 1e-6 {
            return Err(KivoError::Quadrature { change });
        }
        Ok(BoxIntegral { center, half, coeffs })
    }

    /// `∫_a^b amp(ν) e^{iνu} dν`.
    fn integral(&self, u: f64) -> Complex64 {
        let j = spherical_bessel(LEGENDRE_TERMS - 1, self.half * u);
        let mut s = Complex64::new(0.0, 0.0);
        let mut ipow = Complex64::new(1.0, 0.0);
        for (c, jn) in self.coeffs.iter().zip(&j) {
            s += ipow * (2.0 * c * jn);
            ipow *= Complex64::i();
        }
        Complex64::from_polar(self.half, self.center * u) * s
    }
}

/// Parameters of a hard instance.
///
/// `v` assigns a bit to each location `(ℓ_x, ℓ_o)`, in row-major order with
/// `ℓ_x` major and the first axis slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct HardInstanceSpec {
    pub resolution: u32,
    pub m_order: u32,
    pub s_x: f64,
    pub s_o: f64,
    pub d_x: usize,
    pub d_o: usize,
    pub zeta: f64,
    pub v: Vec<bool>,
    /// Amplitude; `None` picks `0.1 / sup|f_1|` over a grid, `f_1` the all-ones instance.
    pub eps0: Option<f64>,
}

impl HardInstanceSpec {
    fn validate_shape(&self) -> Result<()> {
        if self.resolution == 0 {
            return Err(KivoError::param("resolution", "must be at least 1"));
        }
        if self.m_order == 0 || !self.m_order.is_multiple_of(2) {
            return Err(KivoError::param("m_order", "must be a positive even integer"));
        }
        if !(self.s_x > 0.0 && self.s_o > 0.0) {
            return Err(KivoError::param("s_x", "smoothness must be positive"));
        }
        if (self.m_order as f64) <= self.s_x.max(self.s_o) {
            return Err(KivoError::param("m_order", "must exceed both smoothness indices"));
        }
        if self.d_x == 0 {
            return Err(KivoError::param("d_x", "must be at least 1"));
        }
        if !(self.zeta >= 3.0 && self.zeta.is_finite()) {
            return Err(KivoError::param("zeta", "mask spacing must be at least 3"));
        }
        Ok(())
    }

    fn s_min(&self) -> f64 {
        self.s_x.min(self.s_o)
    }

    /// `S = 2^{𝔎 s̲ / s_x}`, the treatment dilation.
    pub fn x_scale(&self) -> f64 {
        2f64.powf(self.resolution as f64 * self.s_min() / self.s_x)
    }

    /// `2^{⌊𝔎 s̲ / s_o⌋}`, the covariate dilation.
    pub fn o_scale(&self) -> u64 {
        1u64 << (self.resolution as f64 * self.s_min() / self.s_o).floor() as u32
    }

    /// Number of treatment locations per axis, `⌊0.8π S / ζ⌋ + 1`.
    pub fn lx_per_axis(&self) -> usize {
        (0.8 * PI * self.x_scale() / self.zeta).floor() as usize + 1
    }

    /// Covariate locations per axis: multiples of `2𝔪` in `0..=2^{⌊𝔎 s̲/s_o⌋}`.
    pub fn lo_values(&self) -> Vec<u64> {
        let step = 2 * self.m_order as u64;
        (0..=self.o_scale()).filter(|l| l % step == 0).collect()
    }

    pub fn location_count(&self) -> Result<usize> {
        self.validate_shape()?;
        Ok(self.lx_per_axis().pow(self.d_x as u32) * self.lo_values().len().pow(self.d_o as u32))
    }

    /// The mask box `I_ℓ` (unscaled frequencies) for a treatment location.
    pub fn freq_box(&self, lx: &[usize]) -> Vec<(f64, f64)> {
        let w = 1.0 / self.x_scale();
        lx.iter()
            .map(|&l| {
                let lo = 1.1 * PI + self.zeta * l as f64 * w;
                (lo, lo + w)
            })
            .collect()
    }

    /// Support of the covariate spline at `ℓ_o` along each axis.
    pub fn o_support(&self, lo: &[u64]) -> Vec<(f64, f64)> {
        let j = self.o_scale() as f64;
        lo.iter()
            .map(|&l| (l as f64 / j, (l + self.m_order as u64) as f64 / j))
            .collect()
    }
}

/// A constructed instance, ready for evaluation.
#[derive(Debug, Clone)]
pub struct HardInstance {
    spec: HardInstanceSpec,
    boxes: Vec<BoxIntegral>,
    lo_values: Vec<u64>,
    amplitude: f64,
    eps0: f64,
}

fn unravel(mut idx: usize, radix: usize, dims: usize) -> Vec<usize> {
    let mut out = vec![0; dims];
    for d in (0..dims).rev() {
        out[d] = idx % radix;
        idx /= radix;
    }
    out
}

/// `Ω_ℓ(x)` for a single treatment location.
pub fn omega_eval(spec: &HardInstanceSpec, lx: &[usize], x: &[f64]) -> Result<f64> {
    let mut probe = spec.clone();
    probe.v = vec![false; spec.location_count()?];
    probe.eps0 = Some(1.0);
    let inst = hard_instance(&probe)?;
    inst.omega(lx, x)
}

/// Builds `f_v`.
pub fn hard_instance(spec: &HardInstanceSpec) -> Result<HardInstance> {
    let count = spec.location_count()?;
    if spec.v.len() != count {
        return Err(KivoError::dims(count, spec.v.len(), "hard-instance bit vector"));
    }
    let m = spec.m_order;
    let amp = move |nu: f64| sinc_half(nu).powi(m as i32);
    let per_axis = spec.lx_per_axis();
    let mut boxes = Vec::with_capacity(per_axis);
    for l in 0..per_axis {
        let (a, b) = spec.freq_box(&[l])[0];
        boxes.push(BoxIntegral::new(a, b, &amp)?);
    }
    let s = spec.s_min();
    let amplitude_base = 2f64.powf(-(spec.resolution as f64) * s * (1.0 - spec.d_x as f64 / (2.0 * spec.s_x)));
    let mut inst = HardInstance {
        spec: spec.clone(),
        boxes,
        lo_values: spec.lo_values(),
        amplitude: amplitude_base,
        eps0: 1.0,
    };
    let eps0 = match spec.eps0 {
        Some(e) if e.is_finite() && e > 0.0 => e,
        Some(e) => return Err(KivoError::param("eps0", format!("must be positive, got {e}"))),
        None => {
            let mut ones = inst.clone();
            ones.spec.v = vec![true; count];
            let sup = ones.grid_sup();
            if sup > 0.0 {
                0.1 / sup
            } else {
                1.0
            }
        }
    };
    inst.eps0 = eps0;
    inst.amplitude = eps0 * amplitude_base;
    Ok(inst)
}

impl HardInstance {
    pub fn spec(&self) -> &HardInstanceSpec {
        &self.spec
    }

    pub fn eps0(&self) -> f64 {
        self.eps0
    }

    /// Overall factor `ε₀ 2^{-𝔎 s̲ (1 - d_x/(2 s_x))}`.
    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn len(&self) -> usize {
        self.spec.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spec.v.is_empty()
    }

    pub fn lo_values(&self) -> &[u64] {
        &self.lo_values
    }

    /// `(ℓ_x, ℓ_o)` of bit `idx`.
    pub fn location(&self, idx: usize) -> (Vec<usize>, Vec<u64>) {
        let no = self.lo_values.len().pow(self.spec.d_o as u32);
        let lx = unravel(idx / no, self.spec.lx_per_axis(), self.spec.d_x);
        let lo = unravel(idx % no, self.lo_values.len(), self.spec.d_o)
            .into_iter()
            .map(|i| self.lo_values[i])
            .collect();
        (lx, lo)
    }

    /// Box integrals `(2π)^{-1} ∫_{I_ℓ} F[B](ν) e^{iνu} dν` for every `ℓ`, per axis.
    fn axis_integrals(&self, x: &[f64]) -> Vec<Vec<Complex64>> {
        let s = self.spec.x_scale();
        x.iter()
            .map(|&xi| self.boxes.iter().map(|b| b.integral(s * xi) / (2.0 * PI)).collect())
            .collect()
    }

    fn omega_from(&self, ints: &[Vec<Complex64>], lx: &[usize]) -> f64 {
        let mut p = Complex64::new(1.0, 0.0);
        for (axis, &l) in lx.iter().enumerate() {
            p *= ints[axis][l];
        }
        2.0 * p.re
    }

    /// `Ω_ℓ(x)` (without the instance amplitude).
    pub fn omega(&self, lx: &[usize], x: &[f64]) -> Result<f64> {
        if x.len() != self.spec.d_x || lx.len() != self.spec.d_x {
            return Err(KivoError::dims(self.spec.d_x, x.len(), "treatment point"));
        }
        if lx.iter().any(|&l| l >= self.boxes.len()) {
            return Err(KivoError::param("lx", "location outside the mask range"));
        }
        Ok(self.omega_from(&self.axis_integrals(x), lx))
    }

    /// Covariate spline `Π ι_𝔪(J o_j - ℓ_j)`, with `ι_𝔪` the `𝔪`-factor spline.
    pub fn o_spline(&self, lo: &[u64], o: &[f64]) -> f64 {
        let j = self.spec.o_scale() as f64;
        lo.iter()
            .zip(o)
            .map(|(&l, &oi)| bspline_eval(self.spec.m_order - 1, j * oi - l as f64))
            .product()
    }

    pub fn eval(&self, x: &[f64], o: &[f64]) -> Result<f64> {
        if x.len() != self.spec.d_x {
            return Err(KivoError::dims(self.spec.d_x, x.len(), "treatment point"));
        }
        if o.len() != self.spec.d_o {
            return Err(KivoError::dims(self.spec.d_o, o.len(), "covariate point"));
        }
        Ok(self.eval_unchecked(x, o))
    }

    fn eval_unchecked(&self, x: &[f64], o: &[f64]) -> f64 {
        let no = self.lo_values.len().pow(self.spec.d_o as u32);
        // Covariate factors first: most locations vanish at a given o.
        let mut o_weights = Vec::with_capacity(no);
        for io in 0..no {
            let lo: Vec<u64> = unravel(io, self.lo_values.len(), self.spec.d_o)
                .into_iter()
                .map(|i| self.lo_values[i])
                .collect();
            o_weights.push(self.o_spline(&lo, o));
        }
        if o_weights.iter().all(|&w| w == 0.0) {
            return 0.0;
        }
        let ints = self.axis_integrals(x);
        let mut total = 0.0;
        for (idx, &bit) in self.spec.v.iter().enumerate() {
            if !bit {
                continue;
            }
            let w = o_weights[idx % no];
            if w == 0.0 {
                continue;
            }
            let lx = unravel(idx / no, self.spec.lx_per_axis(), self.spec.d_x);
            total += w * self.omega_from(&ints, &lx);
        }
        self.amplitude * total
    }

    /// Treatment profile `Σ_{ℓ_x} β Ω_{ℓ_x}(x)` for each covariate location, without amplitude.
    fn x_profiles(&self, x: &[f64]) -> Vec<f64> {
        let no = self.lo_values.len().pow(self.spec.d_o as u32);
        let ints = self.axis_integrals(x);
        let mut out = vec![0.0; no];
        for (idx, &bit) in self.spec.v.iter().enumerate() {
            if bit {
                let lx = unravel(idx / no, self.spec.lx_per_axis(), self.spec.d_x);
                out[idx % no] += self.omega_from(&ints, &lx);
            }
        }
        out
    }

    /// Grid points per treatment axis that resolve the highest mask frequency.
    fn x_grid_size(&self) -> usize {
        let per_axis = (16.0 * self.spec.x_scale()).ceil() as usize + 129;
        let cap = (1usize << 16) as f64;
        per_axis.min(cap.powf(1.0 / self.spec.d_x as f64) as usize).max(9)
    }

    fn grid_sup(&self) -> f64 {
        let nx = self.x_grid_size();
        let xs: Vec<f64> = (0..nx).map(|i| -0.5 + i as f64 / (nx - 1) as f64).collect();
        // Peak of each covariate factor: the spline maximum, reached on the knot grid.
        let mo = self.spec.m_order;
        let o_peak = (0..=8 * mo)
            .map(|i| bspline_eval(mo - 1, i as f64 / 8.0))
            .fold(0.0, f64::max)
            .powi(self.spec.d_o as i32);
        let mut sup: f64 = 0.0;
        let total = nx.pow(self.spec.d_x as u32);
        for flat in 0..total {
            let x: Vec<f64> = unravel(flat, nx, self.spec.d_x).iter().map(|&i| xs[i]).collect();
            for p in self.x_profiles(&x) {
                sup = sup.max(p.abs());
            }
        }
        self.amplitude * sup * o_peak
    }

    /// Composite Gauss–Legendre nodes on `[-1/2, 1/2]` fine enough for the mask frequencies.
    fn x_nodes(&self) -> Vec<(f64, f64)> {
        let panels = ((4.0 * self.spec.x_scale()).ceil() as usize).max(32);
        let rule = GaussLegendre::new(8);
        let h = 1.0 / panels as f64;
        (0..panels)
            .flat_map(|p| {
                let a = -0.5 + p as f64 * h;
                rule.mapped(a, a + h).collect::<Vec<_>>()
            })
            .collect()
    }

    /// `∫_{[0,1]^{d_o}} M_ℓ(o)² do` for each covariate location, exact on knot panels.
    fn o_energies(&self) -> Vec<f64> {
        let j = self.spec.o_scale();
        let rule = GaussLegendre::new(self.spec.m_order as usize);
        let axis: Vec<f64> = self
            .lo_values
            .iter()
            .map(|&l| {
                (0..j)
                    .map(|k| {
                        let (a, b) = (k as f64 / j as f64, (k + 1) as f64 / j as f64);
                        rule.integrate(a, b, |o| bspline_eval(self.spec.m_order - 1, j as f64 * o - l as f64).powi(2))
                    })
                    .sum()
            })
            .collect();
        let no = self.lo_values.len().pow(self.spec.d_o as u32);
        (0..no)
            .map(|io| unravel(io, self.lo_values.len(), self.spec.d_o).iter().map(|&i| axis[i]).product())
            .collect()
    }
}

/// How the instrument sees the treatment when computing the KL bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairOperator {
    /// `Z = X`: the projection is the function itself.
    Identity,
    /// Circle shift `X = Z + W (mod 1)` with `W = 0.1 ΣU_i`, on `[-1/2, 1/2)`; needs `d_x = 1`.
    Circle { k: u32 },
}

/// Separation and KL bound for a pair of instances sharing a layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStats {
    /// `‖f_v - f_v'‖²` in `L²(P_X ⊗ P_O)`, `P_X` the bump law and `P_O` uniform.
    pub l2_sep: f64,
    /// `n ‖T f_v‖² / (2σ²)`.
    pub kl_upper: f64,
}

fn same_layout(a: &HardInstanceSpec, b: &HardInstanceSpec) -> bool {
    a.resolution == b.resolution
        && a.m_order == b.m_order
        && a.s_x == b.s_x
        && a.s_o == b.s_o
        && a.d_x == b.d_x
        && a.d_o == b.d_o
        && a.zeta == b.zeta
}

/// Squared L² norm of `Σ_io M_io(o) g_io(x)` given per-location treatment profiles.
fn factorized_norm<F: Fn(&[f64]) -> Vec<f64>>(inst: &HardInstance, profile: F, nodes: &[(f64, f64)], weight: &dyn Fn(&[f64]) -> f64) -> f64 {
    let d = inst.spec.d_x;
    let energies = inst.o_energies();
    let mut acc = vec![0.0; energies.len()];
    let total = nodes.len().pow(d as u32);
    for flat in 0..total {
        let idx = unravel(flat, nodes.len(), d);
        let x: Vec<f64> = idx.iter().map(|&i| nodes[i].0).collect();
        let w: f64 = idx.iter().map(|&i| nodes[i].1).product::<f64>() * weight(&x);
        if w == 0.0 {
            continue;
        }
        for (a, p) in acc.iter_mut().zip(profile(&x)) {
            *a += w * p * p;
        }
    }
    inst.amplitude.powi(2) * acc.iter().zip(&energies).map(|(a, e)| a * e).sum::<f64>()
}

pub fn instance_pair_stats(
    fv: &HardInstance,
    fw: &HardInstance,
    op: PairOperator,
    sigma: f64,
    n: usize,
) -> Result<PairStats> {
    if !same_layout(&fv.spec, &fw.spec) {
        return Err(KivoError::param("instances", "pair must share a layout"));
    }
    if (fv.amplitude - fw.amplitude).abs() > 1e-15 * fv.amplitude.abs() {
        return Err(KivoError::param("instances", "pair must share eps0"));
    }
    if !(sigma > 0.0) {
        return Err(KivoError::param("sigma", "must be positive"));
    }
    let nodes = fv.x_nodes();
    let bump = |x: &[f64]| bump_density(x);
    let l2_sep = factorized_norm(
        fv,
        |x| {
            fv.x_profiles(x)
                .iter()
                .zip(fw.x_profiles(x))
                .map(|(a, b)| a - b)
                .collect()
        },
        &nodes,
        &bump,
    );
    let tf2 = match op {
        PairOperator::Identity => factorized_norm(fv, |x| fv.x_profiles(x), &nodes, &bump),
        PairOperator::Circle { k } => {
            if fv.spec.d_x != 1 {
                return Err(KivoError::param("operator", "the circle operator needs d_x = 1"));
            }
            if !(1..=10).contains(&k) {
                return Err(KivoError::param("k", "must lie in 1..=10"));
            }
            let s = fv.spec.x_scale();
            let rule = GaussLegendre::new(8);
            let knots = w_knots(k);
            let sub = ((0.1 * 8.0 * s).ceil() as usize).max(2);
            let mut w_nodes = Vec::new();
            for win in knots.windows(2) {
                let h = (win[1] - win[0]) / sub as f64;
                for p in 0..sub {
                    let a = win[0] + p as f64 * h;
                    w_nodes.extend(rule.mapped(a, a + h).map(|(w, wt)| (w, wt * w_density(k, w))));
                }
            }
            let wrap = |v: f64| (v + 0.5).rem_euclid(1.0) - 0.5;
            let uniform = |_: &[f64]| 1.0;
            factorized_norm(
                fv,
                |z| {
                    let mut acc = vec![0.0; fv.lo_values.len().pow(fv.spec.d_o as u32)];
                    for &(w, wt) in &w_nodes {
                        for (a, p) in acc.iter_mut().zip(fv.x_profiles(&[wrap(z[0] + w)])) {
                            *a += wt * p;
                        }
                    }
                    acc
                },
                &nodes,
                &uniform,
            )
        }
    };
    Ok(PairStats {
        l2_sep,
        kl_upper: n as f64 * tf2 / (2.0 * sigma * sigma),
    })
}

/// Random codebook containing the zero word, with pairwise Hamming distance
/// at least `len / 8`. Stops early if rejection sampling stalls.
pub fn random_codebook(len: usize, count: usize, seed: u64) -> Vec<Vec<bool>> {
    let count = count.clamp(1, 64);
    let min_dist = len.div_ceil(8);
    let mut rng = stream(seed, 0, Role::Codebook);
    let mut book = vec![vec![false; len]];
    let mut attempts = 0;
    while book.len() < count && attempts < 1000 * count {
        attempts += 1;
        let cand: Vec<bool> = (0..len).map(|_| rng.random::<bool>()).collect();
        let ok = book
            .iter()
            .all(|w| w.iter().zip(&cand).filter(|(a, b)| a != b).count() >= min_dist);
        if ok {
            book.push(cand);
        }
    }
    book
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(k: u32, v: Option<Vec<bool>>) -> HardInstanceSpec {
        let mut s = HardInstanceSpec {
            resolution: k,
            m_order: 2,
            s_x: 1.0,
            s_o: 1.0,
            d_x: 1,
            d_o: 1,
            zeta: 3.0,
            v: Vec::new(),
            eps0: None,
        };
        let n = s.location_count().unwrap();
        s.v = v.unwrap_or_else(|| vec![true; n]);
        s
    }

    #[test]
    fn bspline_examples() {
        assert_eq!(bspline_eval(0, 0.5), 1.0);
        assert_eq!(bspline_eval(1, 1.0), 1.0);
        assert!((bspline_eval(2, 1.5) - 0.75).abs() < 1e-15);
        assert_eq!(bspline_eval(2, 3.0), 0.0);
        assert_eq!(bspline_eval(3, -0.1), 0.0);
    }

    #[test]
    fn quadratic_spline_matches_convolution_oracle() {
        // (1_[0,1] * 1_[0,1] * 1_[0,1])(t) by midpoint quadrature of the triangle.
        let tri = |s: f64| if (0.0..1.0).contains(&s) { s } else if (1.0..2.0).contains(&s) { 2.0 - s } else { 0.0 };
        for t in [0.3, 1.0, 1.5, 2.2, 2.9] {
            let n = 100_000;
            let conv: f64 = (0..n).map(|i| tri(t - (i as f64 + 0.5) / n as f64) / n as f64).sum();
            assert!((bspline_eval(2, t) - conv).abs() < 1e-6);
        }
    }

    #[test]
    fn fourier_examples() {
        for m in 1..5 {
            let z = bspline_fourier(m, 0.0);
            assert!((z.re - 1.0).abs() < 1e-15 && z.im.abs() < 1e-15);
            assert!(bspline_fourier(m, 2.0 * PI).norm() < 1e-15);
        }
    }

    #[test]
    fn fourier_matches_quadrature_of_the_spline() {
        let rule = GaussLegendre::new(16);
        for m in 1..=4u32 {
            for i in 0..=80 {
                let w = -20.0 + 0.5 * i as f64;
                let mut z = Complex64::new(0.0, 0.0);
                // Knot panels make the piecewise polynomial integrand smooth per panel.
                for p in 0..m {
                    for (t, wt) in rule.mapped(p as f64, p as f64 + 1.0) {
                        z += Complex64::from_polar(bspline_eval(m - 1, t) * wt, -w * t);
                    }
                }
                assert!((z - bspline_fourier(m, w)).norm() < 1e-6, "m = {m}, w = {w}");
            }
        }
    }

    #[test]
    fn partition_of_unity() {
        for m in 0..6u32 {
            for i in 0..50 {
                let t = 10.0 + i as f64 * 0.0731;
                let s: f64 = (0..30).map(|j| bspline_eval(m, t - j as f64)).sum();
                assert!((s - 1.0).abs() < 1e-10, "m = {m}, t = {t}");
            }
        }
    }

    #[test]
    fn spherical_bessel_closed_forms() {
        for x in [1e-6, 0.01, 0.5, 1.0, PI, 3.0, 7.3, 30.0, 31.5, 400.0, -2.2] {
            let j = spherical_bessel(4, x);
            let j0 = if x.abs() < 1e-4 { 1.0 - x * x / 6.0 } else { x.sin() / x };
            let j1 = if x.abs() < 1e-3 { x / 3.0 } else { x.sin() / (x * x) - x.cos() / x };
            let j2 = if x.abs() < 1e-2 { x * x / 15.0 } else { (3.0 / (x * x) - 1.0) * x.sin() / x - 3.0 * x.cos() / (x * x) };
            assert!((j[0] - j0).abs() < 1e-12, "x = {x}");
            assert!((j[1] - j1).abs() < 1e-12, "x = {x}");
            assert!((j[2] - j2).abs() < 1e-10, "x = {x}");
        }
        assert_eq!(spherical_bessel(3, 0.0), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn box_integral_matches_panel_quadrature() {
        let amp = |nu: f64| sinc_half(nu).powi(4);
        let b = BoxIntegral::new(1.1 * PI, 1.1 * PI + 0.25, &amp).unwrap();
        let rule = GaussLegendre::new(16);
        for u in [0.0, 0.7, 13.0, 250.0, -41.0] {
            let panels = 400;
            let h = 0.25 / panels as f64;
            let mut want = Complex64::new(0.0, 0.0);
            for p in 0..panels {
                let a = 1.1 * PI + p as f64 * h;
                for (nu, w) in rule.mapped(a, a + h) {
                    want += Complex64::from_polar(amp(nu) * w, nu * u);
                }
            }
            assert!((b.integral(u) - want).norm() < 1e-12, "u = {u}");
        }
    }

    #[test]
    fn mirrored_boxes_give_a_real_value() {
        let amp = |nu: f64| sinc_half(nu).powi(2);
        let s = spec(2, None);
        let (a, b) = s.freq_box(&[1])[0];
        let pos = BoxIntegral::new(a, b, &amp).unwrap();
        let neg = BoxIntegral::new(-b, -a, &amp).unwrap();
        for u in [0.0, 0.3, 5.0, 77.0] {
            let z = pos.integral(u) + neg.integral(u);
            assert!(z.im.abs() <= 1e-10);
            assert!((z.re - 2.0 * pos.integral(u).re).abs() <= 1e-12);
        }
    }

    #[test]
    fn layout_and_boxes() {
        let s = spec(2, None);
        assert_eq!(s.x_scale(), 4.0);
        assert_eq!(s.lx_per_axis(), 4);
        assert_eq!(s.lo_values(), vec![0, 4]);
        for l in 0..s.lx_per_axis() {
            let (a, b) = s.freq_box(&[l])[0];
            assert!(a >= 1.1 * PI && b <= 1.95 * PI);
            // Scaled frequencies stay above 1.1π S.
            assert!(a * s.x_scale() >= 1.1 * PI * 4.0);
        }
        for l in 0..s.lx_per_axis() {
            for r in l + 1..s.lx_per_axis() {
                let (_, hi) = s.freq_box(&[l])[0];
                let (lo, _) = s.freq_box(&[r])[0];
                assert!(hi < lo);
            }
        }
        let sup = s.lo_values().iter().map(|&l| s.o_support(&[l])[0]).collect::<Vec<_>>();
        for w in sup.windows(2) {
            assert!(w[0].1 < w[1].0);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = spec(2, None);
        s.m_order = 3;
        assert!(s.location_count().is_err());
        let mut s = spec(2, None);
        s.zeta = 2.0;
        assert!(s.location_count().is_err());
        let mut s = spec(2, None);
        s.v.pop();
        assert!(matches!(hard_instance(&s), Err(KivoError::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_bits_give_zero_function() {
        let n = spec(2, None).v.len();
        let inst = hard_instance(&spec(2, Some(vec![false; n]))).unwrap();
        for x in [-0.4, 0.0, 0.13] {
            for o in [0.0, 0.2, 0.7] {
                assert_eq!(inst.eval(&[x], &[o]).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn default_eps0_bounds_the_all_ones_instance() {
        let inst = hard_instance(&spec(2, None)).unwrap();
        let mut sup: f64 = 0.0;
        for i in 0..=400 {
            for j in 0..=40 {
                let v = inst.eval(&[-0.5 + i as f64 / 400.0], &[j as f64 / 40.0]).unwrap();
                sup = sup.max(v.abs());
            }
        }
        assert!(sup <= 0.1 + 1e-3, "{sup}");
        assert!(sup >= 0.09, "{sup}");
    }

    #[test]
    fn pair_stats_trivial_cases() {
        let ones = hard_instance(&spec(2, None)).unwrap();
        let n = ones.len();
        let mut z = spec(2, Some(vec![false; n]));
        z.eps0 = Some(ones.eps0());
        let zero = hard_instance(&z).unwrap();
        let same = instance_pair_stats(&ones, &ones, PairOperator::Identity, 0.5, 100).unwrap();
        assert_eq!(same.l2_sep, 0.0);
        assert!(same.kl_upper > 0.0);
        let z0 = instance_pair_stats(&zero, &ones, PairOperator::Circle { k: 1 }, 0.5, 100).unwrap();
        assert_eq!(z0.kl_upper, 0.0);
        assert!(z0.l2_sep > 0.0);
        // Identity: KL bound is n ‖f‖² / (2σ²), and ‖f - 0‖² is the same norm.
        let id = instance_pair_stats(&ones, &zero, PairOperator::Identity, 0.5, 100).unwrap();
        assert!((id.kl_upper - 100.0 * id.l2_sep / 0.5).abs() <= 1e-12 * id.kl_upper);
    }

    #[test]
    fn codebook_properties() {
        let book = random_codebook(40, 16, 3);
        assert!(book[0].iter().all(|&b| !b));
        assert_eq!(book.len(), 16);
        for i in 0..book.len() {
            for j in i + 1..book.len() {
                let d = book[i].iter().zip(&book[j]).filter(|(a, b)| a != b).count();
                assert!(d >= 5);
            }
        }
        assert_eq!(random_codebook(40, 200, 3).len(), 64);
    }
}
