//! Lengthscale and regularization schedules, and grid cross-validation.
//!
//! With `A = s_x/d_x + η₁` and `D = 1 + 2A + (d_o/s_o) A`, the schedule is
//! `γ_x = n^{-(1/d_x)/D}`, `γ_o = n^{-(A/s_o)/D}` and `λ = 1/n`, which
//! balances `γ_x^{s_x + d_x η₁} = γ_o^{s_o}`.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{KivoError, Result};
use crate::estimator::{congruence, Dataset, Stage1Map, Variant};
use crate::kernel::{gram_sym, KernelSpec, MaternNu};
use crate::solver::loo_residuals;

/// Smoothness and ill-posedness description of a problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSpec {
    pub s_x: f64,
    pub s_o: f64,
    pub d_x: usize,
    pub d_o: usize,
    pub d_z: usize,
    pub eta0: f64,
    pub eta1: f64,
    pub sigma: f64,
}

impl RateSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_x.is_finite() && self.s_x > 0.0) {
            return Err(KivoError::param("s_x", "must be positive"));
        }
        if !(self.s_o.is_finite() && self.s_o > 0.0) {
            return Err(KivoError::param("s_o", "must be positive"));
        }
        if self.d_x == 0 {
            return Err(KivoError::param("d_x", "must be at least 1"));
        }
        if !(self.eta1 >= 0.0 && self.eta1.is_finite()) {
            return Err(KivoError::param("eta1", "must be non-negative"));
        }
        if !(self.eta0 >= self.eta1 && self.eta0.is_finite()) {
            return Err(KivoError::param("eta0", "must be at least eta1"));
        }
        if !(self.sigma >= 0.0) {
            return Err(KivoError::param("sigma", "must be non-negative"));
        }
        Ok(())
    }

    /// `A = s_x/d_x + η₁`.
    pub fn effective_smoothness(&self) -> f64 {
        self.s_x / self.d_x as f64 + self.eta1
    }

    /// `D = 1 + 2A + (d_o/s_o) A`.
    pub fn denominator(&self) -> f64 {
        let a = self.effective_smoothness();
        1.0 + 2.0 * a + (self.d_o as f64 / self.s_o) * a
    }
}

/// Which exponent to use for the Stage-I ridge `ξ = ñ^{-1/(m† + c·d† + ζ)}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum XiForm {
    /// `c = 1`.
    #[default]
    Theorem,
    /// `c = 1/2`, the rate-optimal Stage-I choice.
    HalfDimension,
}

impl XiForm {
    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "theorem" => Ok(XiForm::Theorem),
            "half-dim" => Ok(XiForm::HalfDimension),
            other => Err(KivoError::param("xi_form", format!("unknown `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleOut {
    pub gamma_x: f64,
    pub gamma_o: f64,
    pub lambda: f64,
    /// `None` when the smoothness orders are undefined (no covariate and no instrument dimension).
    pub xi: Option<f64>,
    pub m_o: Option<u32>,
    pub m_z: Option<u32>,
    pub m_dagger: Option<f64>,
    pub d_dagger: Option<f64>,
    pub zeta: f64,
    /// Violations of `2t ≥ m > t > d/2`; reported, not fatal.
    pub warnings: Vec<String>,
}

fn check_n(n: usize, name: &'static str) -> Result<()> {
    if n == 0 {
        return Err(KivoError::param(name, "must be at least 1"));
    }
    Ok(())
}

pub fn lengthscales(n: usize, rs: &RateSpec) -> Result<(f64, f64)> {
    rs.validate()?;
    check_n(n, "n")?;
    let d = rs.denominator();
    let ln = (n as f64).ln();
    let gx = (-(1.0 / rs.d_x as f64) / d * ln).exp();
    let go = (-(rs.effective_smoothness() / rs.s_o) / d * ln).exp();
    Ok((gx, go))
}

/// `ceil` that ignores round-off just above an integer.
fn ceil_tolerant(v: f64) -> f64 {
    (v - 1e-9 * v.abs().max(1.0)).ceil()
}

/// `(m_o, m_z)`, or `None` when both `d_o` and `d_z` are zero.
pub fn smoothness_orders(rs: &RateSpec) -> Result<Option<(u32, u32)>> {
    rs.validate()?;
    if rs.d_o == 0 {
        if rs.d_z > 0 {
            return Err(KivoError::param(
                "d_o",
                "smoothness orders need a covariate dimension when d_z > 0",
            ));
        }
        return Ok(None);
    }
    let a = rs.effective_smoothness();
    let d_o = rs.d_o as f64;
    let inner = (d_o / 2.0) * (1.0 + 2.0 * a + (d_o / rs.s_o) * a) / (1.0 + 2.0 * a);
    let m_o = ceil_tolerant(inner) + 1.0;
    let m_z = ceil_tolerant(rs.d_z as f64 / d_o * m_o);
    Ok(Some((m_o as u32, m_z as u32)))
}

/// `ñ^{-1/(m† + c·d† + ζ)}`.
pub fn xi_from(n_tilde: usize, m_dagger: f64, d_dagger: f64, zeta: f64, form: XiForm) -> Result<f64> {
    check_n(n_tilde, "n_tilde")?;
    if !(zeta >= 0.0) {
        return Err(KivoError::param("zeta", "must be non-negative"));
    }
    let c = match form {
        XiForm::Theorem => 1.0,
        XiForm::HalfDimension => 0.5,
    };
    let expo = m_dagger + c * d_dagger + zeta;
    if !(expo > 0.0) {
        return Err(KivoError::param("xi", "exponent denominator must be positive"));
    }
    Ok((n_tilde as f64).powf(-1.0 / expo))
}

/// `(λ, ξ)` for Stage-I Sobolev orders `t_z`, `t_o`.
pub fn stage_regs(
    n: usize,
    n_tilde: usize,
    rs: &RateSpec,
    t_z: f64,
    t_o: f64,
    zeta: f64,
    form: XiForm,
) -> Result<(f64, Option<f64>)> {
    check_n(n, "n")?;
    let lambda = 1.0 / n as f64;
    let Some((m_o, m_z)) = smoothness_orders(rs)? else {
        return Ok((lambda, None));
    };
    let (md, dd) = daggers(rs, m_o, m_z, t_z, t_o);
    Ok((lambda, Some(xi_from(n_tilde, md, dd, zeta, form)?)))
}

fn daggers(rs: &RateSpec, m_o: u32, m_z: u32, t_z: f64, t_o: f64) -> (f64, f64) {
    let md = (m_z as f64 / t_z).min(m_o as f64 / t_o);
    let dd = (rs.d_z as f64 / t_z).max(rs.d_o as f64 / t_o);
    (md, dd)
}

fn band_warnings(rs: &RateSpec, m_o: u32, m_z: u32, t_z: f64, t_o: f64) -> Vec<String> {
    let mut w = Vec::new();
    for (name, m, t, d) in [("z", m_z, t_z, rs.d_z), ("o", m_o, t_o, rs.d_o)] {
        let m = m as f64;
        if !(2.0 * t >= m && m > t && t > d as f64 / 2.0) {
            w.push(format!(
                "stage-1 {name} kernel: need 2t >= m > t > d/2, have t = {t}, m = {m}, d = {d}"
            ));
        }
    }
    w
}

/// Full schedule for Matérn Stage-I kernels of smoothness `nu`.
pub fn schedule(
    n: usize,
    n_tilde: usize,
    rs: &RateSpec,
    nu: MaternNu,
    zeta: f64,
    form: XiForm,
) -> Result<ScheduleOut> {
    let (gamma_x, gamma_o) = lengthscales(n, rs)?;
    let lambda = 1.0 / n as f64;
    let t_z = nu.sobolev_order(rs.d_z);
    let t_o = nu.sobolev_order(rs.d_o);
    let mut out = ScheduleOut {
        gamma_x,
        gamma_o,
        lambda,
        xi: None,
        m_o: None,
        m_z: None,
        m_dagger: None,
        d_dagger: None,
        zeta,
        warnings: Vec::new(),
    };
    if let Some((m_o, m_z)) = smoothness_orders(rs)? {
        let (md, dd) = daggers(rs, m_o, m_z, t_z, t_o);
        out.xi = Some(xi_from(n_tilde, md, dd, zeta, form)?);
        out.m_o = Some(m_o);
        out.m_z = Some(m_z);
        out.m_dagger = Some(md);
        out.d_dagger = Some(dd);
        out.warnings = band_warnings(rs, m_o, m_z, t_z, t_o);
        for w in &out.warnings {
            log::warn!("{w}");
        }
    }
    Ok(out)
}

/// Exponent of the upper rate, `-(A - η₀)/D`. For display only.
pub fn upper_rate_exponent(rs: &RateSpec) -> f64 {
    -(rs.effective_smoothness() - rs.eta0) / rs.denominator()
}

/// Exponent of the minimax lower rate. For display only.
pub fn lower_rate_exponent(rs: &RateSpec) -> f64 {
    let r = rs.s_x / rs.d_x as f64;
    -r / (1.0 + 2.0 * rs.effective_smoothness() + (rs.d_o as f64 / rs.s_o) * r)
}

/// Multiplicative grid `{1/4, 1/2, 1, 2, 4}` around the schedule for both
/// lengthscales, with `λ = 1/n`.
pub fn default_grid(gamma_x: f64, gamma_o: f64, n: usize) -> Vec<(f64, f64, f64)> {
    const F: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
    let lambda = 1.0 / n as f64;
    let mut g = Vec::with_capacity(25);
    for fx in F {
        for fo in F {
            g.push((gamma_x * fx, gamma_o * fo, lambda));
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvRow {
    pub gamma_x: f64,
    pub gamma_o: f64,
    pub lambda: f64,
    pub cv_value: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub best: (f64, f64, f64),
    pub table: Vec<CvRow>,
}

fn lex_greater(a: (f64, f64, f64), b: (f64, f64, f64)) -> bool {
    a.partial_cmp(&b) == Some(std::cmp::Ordering::Greater)
}

/// Leave-one-out selection of `(γ_x, γ_o, λ)` for a fixed Stage-I map.
///
/// The criterion is the mean squared leave-one-out residual of the Stage-II
/// ridge system with ridge `nλ`. Ties (relative 1e-12) go to the
/// lexicographically larger tuple.
pub fn cv_select(
    data: &Dataset,
    stage1: &Stage1Map,
    grid: &[(f64, f64, f64)],
    variant: Variant,
) -> Result<CvResult> {
    data.validate()?;
    if grid.is_empty() {
        return Err(KivoError::EmptyInput("cross-validation grid"));
    }
    let n = data.n();
    if n < 3 {
        return Err(KivoError::param("n", "cross-validation needs at least 3 stage-2 points"));
    }
    for &(gx, go, l) in grid {
        for (name, v) in [("gamma_x", gx), ("gamma_o", go), ("lambda", l)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(KivoError::param(name, format!("grid value {v} must be positive")));
            }
        }
    }
    let dims = data.dims;
    let j = &stage1.j;
    if j.nrows() != data.n_tilde() || j.ncols() != n {
        return Err(KivoError::dims(data.n_tilde(), j.nrows(), "stage-1 map"));
    }

    let mut cache_o: HashMap<u64, DMatrix<f64>> = HashMap::new();
    let mut cache_x: HashMap<u64, DMatrix<f64>> = HashMap::new();
    let mut values = vec![0.0; grid.len()];
    // Grid points sharing γ_x (Kivo) or (γ_x, γ_o) (naive) share the expensive congruence.
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| {
        grid[a]
            .0
            .total_cmp(&grid[b].0)
            .then(grid[a].1.total_cmp(&grid[b].1))
            .then(a.cmp(&b))
    });
    let mut start = 0;
    while start < order.len() {
        let gx = grid[order[start]].0;
        let mut end = start;
        while end < order.len() && grid[order[end]].0.to_bits() == gx.to_bits() {
            end += 1;
        }
        let group = &order[start..end];
        let kx = KernelSpec::gaussian(dims.x, gx)?;
        let kxx = gram_sym(&data.stage1.x, &kx)?;
        let systems: Vec<(usize, DMatrix<f64>)> = match variant {
            Variant::Kivo => {
                let m = cache_x.entry(gx.to_bits()).or_insert_with(|| congruence(j, &kxx)).clone();
                let mut out = Vec::new();
                for &g in group {
                    let go = grid[g].1;
                    if let Entry::Vacant(e) = cache_o.entry(go.to_bits()) {
                        e.insert(gram_sym(&data.stage2.o, &KernelSpec::gaussian(dims.o, go)?)?);
                    }
                    out.push((g, m.component_mul(&cache_o[&go.to_bits()])));
                }
                out
            }
            Variant::NaiveAugmented => {
                let mut by_go: HashMap<u64, DMatrix<f64>> = HashMap::new();
                let mut out = Vec::new();
                for &g in group {
                    let go = grid[g].1;
                    if let Entry::Vacant(e) = by_go.entry(go.to_bits()) {
                        let ko = KernelSpec::gaussian(dims.o, go)?;
                        e.insert(congruence(j, &kxx.component_mul(&gram_sym(&data.stage1.o, &ko)?)));
                    }
                    out.push((g, by_go[&go.to_bits()].clone()));
                }
                out
            }
        };
        let results: Vec<Result<(usize, f64)>> = systems
            .into_par_iter()
            .map(|(g, k)| {
                let r = loo_residuals(&k, n as f64 * grid[g].2, &data.stage2.y)?;
                Ok((g, r.norm_squared() / n as f64))
            })
            .collect();
        for r in results {
            let (g, v) = r?;
            values[g] = v;
        }
        start = end;
    }

    let mut best = 0;
    for i in 1..grid.len() {
        let (v, b) = (values[i], values[best]);
        let tie = (v - b).abs() <= 1e-12 * v.abs().max(b.abs());
        if (!tie && v < b) || (tie && lex_greater(grid[i], grid[best])) {
            best = i;
        }
    }
    let table = grid
        .iter()
        .zip(&values)
        .enumerate()
        .map(|(i, (&(gamma_x, gamma_o, lambda), &cv_value))| CvRow {
            gamma_x,
            gamma_o,
            lambda,
            cv_value,
            selected: i == best,
        })
        .collect();
    Ok(CvResult {
        best: grid[best],
        table,
    })
}

/// Writes the table as CSV with columns `gamma_x,gamma_o,lambda,cv_value,selected`.
pub fn write_cv_table<W: Write>(table: &[CvRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["gamma_x", "gamma_o", "lambda", "cv_value", "selected"])?;
    for r in table {
        w.write_record([
            format!("{:.16e}", r.gamma_x),
            format!("{:.16e}", r.gamma_o),
            format!("{:.16e}", r.lambda),
            format!("{:.16e}", r.cv_value),
            (r.selected as u8).to_string(),
        ])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rs(s_x: f64, s_o: f64, d_x: usize, d_o: usize, d_z: usize, eta1: f64) -> RateSpec {
        RateSpec {
            s_x,
            s_o,
            d_x,
            d_o,
            d_z,
            eta0: eta1,
            eta1,
            sigma: 0.1,
        }
    }

    #[test]
    fn lengthscale_examples() {
        let (gx, go) = lengthscales(1, &rs(1.0, 1.0, 1, 1, 1, 0.0)).unwrap();
        assert_eq!((gx, go), (1.0, 1.0));
        let (gx, go) = lengthscales(16, &rs(1.0, 1.0, 1, 1, 1, 0.0)).unwrap();
        assert!((gx - 0.5).abs() < 1e-15 && (go - 0.5).abs() < 1e-15);
        let r = rs(1.0, 1.0, 1, 1, 1, 1.0);
        assert_eq!(r.denominator(), 7.0);
        let (gx, go) = lengthscales(128, &r).unwrap();
        assert!((gx - 0.5).abs() < 1e-15 && (go - 0.25).abs() < 1e-15);
    }

    #[test]
    fn smoothness_order_examples() {
        assert_eq!(smoothness_orders(&rs(1.0, 1.0, 1, 1, 1, 0.0)).unwrap(), Some((2, 2)));
        assert_eq!(smoothness_orders(&rs(1.0, 1.0, 1, 1, 1, 1.0)).unwrap(), Some((2, 2)));
        assert_eq!(smoothness_orders(&rs(1.0, 1.0, 1, 3, 3, 0.0)).unwrap().unwrap().0, 4);
        assert_eq!(smoothness_orders(&rs(1.0, 1.0, 1, 0, 0, 0.0)).unwrap(), None);
        assert!(smoothness_orders(&rs(1.0, 1.0, 1, 0, 1, 0.0)).is_err());
    }

    #[test]
    fn regularization_examples() {
        let (l, _) = stage_regs(10, 10, &rs(1.0, 1.0, 1, 1, 1, 0.0), 2.0, 2.0, 0.05, XiForm::Theorem).unwrap();
        assert_eq!(l, 0.1);
        assert!((xi_from(8, 2.0, 1.0, 0.0, XiForm::Theorem).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(xi_from(1, 2.0, 1.0, 0.05, XiForm::Theorem).unwrap(), 1.0);
        let half = xi_from(64, 2.0, 2.0, 0.0, XiForm::HalfDimension).unwrap();
        assert!((half - 0.25).abs() < 1e-15);
    }

    #[test]
    fn invalid_rate_specs() {
        assert!(lengthscales(4, &rs(0.0, 1.0, 1, 1, 1, 0.0)).is_err());
        assert!(lengthscales(4, &rs(1.0, 1.0, 0, 1, 1, 0.0)).is_err());
        let mut r = rs(1.0, 1.0, 1, 1, 1, 1.0);
        r.eta0 = 0.5;
        assert!(lengthscales(4, &r).is_err());
        assert!(lengthscales(0, &rs(1.0, 1.0, 1, 1, 1, 0.0)).is_err());
    }

    #[test]
    fn edge_reductions() {
        // Without covariates the treatment lengthscale is n^{-1/(d_x + 2 s_x + 2 η₁ d_x)}.
        let r = rs(1.5, 2.0, 2, 0, 0, 0.5);
        let (gx, _) = lengthscales(1000, &r).unwrap();
        let want = 1000f64.powf(-1.0 / (2.0 + 3.0 + 2.0 * 0.5 * 2.0));
        assert!((gx - want).abs() < 1e-14);
    }

    #[test]
    fn band_violation_warns() {
        let s = schedule(100, 100, &rs(1.0, 1.0, 1, 1, 1, 0.0), MaternNu::ThreeHalves, 0.05, XiForm::Theorem).unwrap();
        assert_eq!(s.m_o, Some(2));
        assert!(!s.warnings.is_empty());
        let s = schedule(100, 100, &rs(1.0, 1.0, 1, 1, 1, 0.0), MaternNu::Half, 0.05, XiForm::Theorem).unwrap();
        assert!(s.warnings.is_empty(), "{:?}", s.warnings);
    }

    #[test]
    fn rate_exponents() {
        let r = rs(1.0, 1.0, 1, 1, 1, 1.0);
        assert!((upper_rate_exponent(&r) - (-1.0 / 7.0)).abs() < 1e-15);
        assert!((lower_rate_exponent(&r) - (-1.0 / 6.0)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn balance_identity(
            s_x in 0.1f64..5.0, s_o in 0.1f64..5.0, d_x in 1usize..5, d_o in 0usize..5,
            eta1 in 0.0f64..4.0, n in 2usize..1_000_000,
        ) {
            let r = rs(s_x, s_o, d_x, d_o, d_o, eta1);
            let (gx, go) = lengthscales(n, &r).unwrap();
            let lhs = gx.powf(s_x + d_x as f64 * eta1);
            let rhs = go.powf(s_o);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs);
            prop_assert!(gx > 0.0 && gx <= 1.0 && go > 0.0 && go <= 1.0);
        }

        #[test]
        fn monotone_in_n(s_x in 0.1f64..5.0, s_o in 0.1f64..5.0, eta1 in 0.0f64..3.0, n in 1usize..100_000) {
            let r = rs(s_x, s_o, 1, 1, 1, eta1);
            let (a, b) = lengthscales(n, &r).unwrap();
            let (c, d) = lengthscales(n + 1, &r).unwrap();
            prop_assert!(c <= a && d <= b);
            prop_assert!(1.0 / (n as f64 + 1.0) < 1.0 / n as f64);
        }

        #[test]
        fn no_covariate_shrink_matches_classical_krr(s_x in 0.1f64..5.0, s_o in 0.1f64..5.0, n in 2usize..100_000) {
            let r = rs(s_x, s_o, 1, 1, 1, 0.0);
            let (gx, go) = lengthscales(n, &r).unwrap();
            prop_assert!((gx.powf(s_x) - go.powf(s_o)).abs() <= 1e-12 * go.powf(s_o));
        }
    }
}
