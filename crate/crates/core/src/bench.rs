//! Convergence-rate sweeps and the paired comparison against naive
//! augmentation.
//!
//! Every `(n, seed)` cell draws its own dataset from the generator, fits, and
//! scores the fit on fresh evaluation draws. Cells are independent and run in
//! parallel; results are collected in the order of the configured `n` list
//! and seed list, so reports do not depend on the worker count.
//!
//! Risks are estimated on a product design: `p` treatment draws crossed with
//! `q` covariate draws, `p = q = ⌈√eval_points⌉`. Both generators have
//! independent treatment and covariate marginals, so the grid average is an
//! unbiased estimate of the `L²(P_X ⊗ P_O)` risk and uses the grid predictor.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::diagnostics::ls_slope;
use crate::error::{KivoError, Result};
use crate::estimator::{fit_stage1, fit_stage2, fit_naive_stage2, Dataset, KernelSet, KivoModel, Stage1Map, Variant};
use crate::kernel::{KernelSpec, MaternNu, Points};
use crate::quadrature::GaussLegendre;
use crate::rng::{stream, Role};
use crate::schedule::{cv_select, default_grid, CvResult, lower_rate_exponent, schedule, upper_rate_exponent, RateSpec, XiForm};
use crate::synthdata::{bump_sample, w_density, w_knots, CircleDgpSpec, DgpSpec};

/// Stage-I Matérn kernels; their lengthscales are not scheduled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage1Kernels {
    pub nu: MaternNu,
    pub ls_z: f64,
    pub ls_o: f64,
}

impl Default for Stage1Kernels {
    fn default() -> Self {
        Stage1Kernels {
            nu: MaternNu::ThreeHalves,
            ls_z: 0.1,
            ls_o: 0.5,
        }
    }
}

/// Schedule-derived hyperparameters. The rates fix exponents only, so each
/// lengthscale carries a constant factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryTuning {
    pub rate: RateSpec,
    pub zeta: f64,
    pub form: XiForm,
    pub scale_x: f64,
    pub scale_o: f64,
    /// Replaces the scheduled `ξ`, which is undefined when `d_o = d_z = 0`.
    pub xi: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tuning {
    Theory(TheoryTuning),
    /// Leave-one-out over `{1/4, .., 4}²` around the theory lengthscales.
    Cv(TheoryTuning),
    /// Ridges left at `None` become `1/n`.
    Fixed {
        gamma_x: f64,
        gamma_o: f64,
        lambda: Option<f64>,
        xi: Option<f64>,
    },
}

impl Tuning {
    fn rate(&self) -> Option<RateSpec> {
        match self {
            Tuning::Theory(t) | Tuning::Cv(t) => Some(t.rate),
            Tuning::Fixed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub dgp: DgpSpec,
    pub n_list: Vec<usize>,
    /// Replicate indices; each selects independent streams under `master_seed`.
    pub seeds: Vec<u64>,
    pub master_seed: u64,
    /// `ñ = round(tilde_ratio · n)`.
    pub tilde_ratio: f64,
    pub eval_points: usize,
    pub stage1: Stage1Kernels,
    pub tuning: Tuning,
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() {
            return Err(KivoError::EmptyInput("sample-size list"));
        }
        if let Some(&n) = self.n_list.iter().find(|&&n| n < 16) {
            return Err(KivoError::param("n_list", format!("sample sizes must be at least 16, got {n}")));
        }
        if self.seeds.is_empty() {
            return Err(KivoError::EmptyInput("seed list"));
        }
        if self.seeds.len() < 5 {
            log::warn!("only {} seeds; medians over fewer than 5 replicates are noisy", self.seeds.len());
        }
        if !(self.tilde_ratio > 0.0 && self.tilde_ratio.is_finite()) {
            return Err(KivoError::param("tilde_ratio", "must be positive"));
        }
        if self.eval_points == 0 {
            return Err(KivoError::param("eval_points", "must be at least 1"));
        }
        if let Tuning::Theory(t) | Tuning::Cv(t) = &self.tuning {
            t.rate.validate()?;
            if !(t.scale_x > 0.0 && t.scale_o > 0.0) {
                return Err(KivoError::param("scale", "lengthscale factors must be positive"));
            }
        }
        Ok(())
    }

    pub fn n_tilde(&self, n: usize) -> usize {
        ((self.tilde_ratio * n as f64).round() as usize).max(1)
    }
}

/// Hyperparameters used in one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub gamma_x: f64,
    pub gamma_o: f64,
    pub lambda: f64,
    pub xi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRow {
    pub n: usize,
    pub n_tilde: usize,
    pub seed: u64,
    pub hyper: Hyper,
    pub l2_error: f64,
    pub projected_error: f64,
    /// Seconds; kept out of the CSV so reports stay byte-identical.
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub n: usize,
    pub median_l2: f64,
    pub median_projected: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    pub summary: Vec<SummaryRow>,
    /// Log-log slope of the median `L²` error; `None` with fewer than 3 sizes.
    pub slope: Option<f64>,
    pub rate: Option<RateSpec>,
}

/// Slope of a report, with the theoretical exponents for display next to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub upper_exponent: Option<f64>,
    pub lower_exponent: Option<f64>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn summarize(rows: &[RateRow]) -> Vec<SummaryRow> {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let l2: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.l2_error).collect();
            let pr: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.projected_error).collect();
            SummaryRow {
                n,
                median_l2: median(&l2),
                median_projected: median(&pr),
            }
        })
        .collect()
}

fn summary_slope(summary: &[SummaryRow]) -> Result<f64> {
    if summary.len() < 3 {
        return Err(KivoError::param("report", format!("slope needs at least 3 sample sizes, got {}", summary.len())));
    }
    if summary.iter().any(|s| !(s.median_l2 > 0.0)) {
        return Err(KivoError::param("report", "median errors must be positive"));
    }
    let xs: Vec<f64> = summary.iter().map(|s| (s.n as f64).ln()).collect();
    let ys: Vec<f64> = summary.iter().map(|s| s.median_l2.ln()).collect();
    ls_slope(&xs, &ys)
}

impl RateReport {
    pub fn from_rows(rows: Vec<RateRow>, rate: Option<RateSpec>) -> Self {
        let summary = summarize(&rows);
        let slope = summary_slope(&summary).ok();
        RateReport {
            rows,
            summary,
            slope,
            rate,
        }
    }

    /// Columns `n, n_tilde, seed, gamma_x, gamma_o, lambda, xi, l2_error, projected_error`.
    pub fn write_rows_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut put = |rec: Vec<String>| w.write_record(&rec).map_err(csv_error);
        put(
            ["n", "n_tilde", "seed", "gamma_x", "gamma_o", "lambda", "xi", "l2_error", "projected_error"]
                .map(String::from)
                .to_vec(),
        )?;
        for r in &self.rows {
            put(vec![
                r.n.to_string(),
                r.n_tilde.to_string(),
                r.seed.to_string(),
                fmt(r.hyper.gamma_x),
                fmt(r.hyper.gamma_o),
                fmt(r.hyper.lambda),
                fmt(r.hyper.xi),
                fmt(r.l2_error),
                fmt(r.projected_error),
            ])?;
        }
        w.flush().map_err(|e| csv_error(e.into()))
    }

    /// Per-size medians, then a `slope` line and the display exponents.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut put = |rec: Vec<String>| w.write_record(&rec).map_err(csv_error);
        put(["n", "median_l2_error", "median_projected_error"].map(String::from).to_vec())?;
        for s in &self.summary {
            put(vec![s.n.to_string(), fmt(s.median_l2), fmt(s.median_projected)])?;
        }
        let opt = |v: Option<f64>| v.map(fmt).unwrap_or_default();
        put(vec!["slope".into(), opt(self.slope), String::new()])?;
        if let Some(rate) = self.rate {
            put(vec!["upper_exponent".into(), fmt(upper_rate_exponent(&rate)), String::new()])?;
            put(vec!["lower_exponent".into(), fmt(lower_rate_exponent(&rate)), String::new()])?;
        }
        w.flush().map_err(|e| csv_error(e.into()))
    }

    /// Two whitespace-separated columns: `ln n` and `ln median L² error`.
    pub fn write_plot_data<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# log_n log_median_l2_error")?;
        for s in &self.summary {
            writeln!(out, "{} {}", fmt((s.n as f64).ln()), fmt(s.median_l2.ln()))?;
        }
        Ok(())
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

fn csv_error(e: csv::Error) -> KivoError {
    KivoError::Format {
        path: "<report>".into(),
        message: e.to_string(),
    }
}

/// OLS slope of `ln median error` on `ln n`, with the theoretical exponents when known.
pub fn slope_fit(report: &RateReport) -> Result<SlopeFit> {
    let slope = summary_slope(&report.summary)?;
    Ok(SlopeFit {
        slope,
        upper_exponent: report.rate.map(|r| upper_rate_exponent(&r)),
        lower_exponent: report.rate.map(|r| lower_rate_exponent(&r)),
    })
}

/// Evaluation draws for one cell.
#[derive(Debug, Clone)]
pub struct RiskDesign {
    pub x: Points,
    pub o: Points,
    pub z: Vec<f64>,
}

/// `p` treatment (and instrument) draws crossed with `q` covariate draws.
pub fn risk_design(dgp: &DgpSpec, eval_points: usize, master: u64, seed: u64) -> Result<RiskDesign> {
    let side = (eval_points as f64).sqrt().ceil() as usize;
    let dims = dgp.dims();
    let mut rng = stream(master, seed, Role::Eval);
    let x: Vec<f64> = match dgp {
        DgpSpec::Circle(_) => (0..side).map(|_| rng.random::<f64>()).collect(),
        DgpSpec::Npr(_) => (0..side * dims.x).map(|_| bump_sample(&mut rng)).collect(),
    };
    let o: Vec<f64> = (0..side * dims.o).map(|_| rng.random::<f64>()).collect();
    let z: Vec<f64> = match dgp {
        DgpSpec::Circle(_) => (0..side).map(|_| rng.random::<f64>()).collect(),
        DgpSpec::Npr(_) => Vec::new(),
    };
    Ok(RiskDesign {
        x: Points::new(dims.x, x)?,
        o: if dims.o == 0 {
            Points::empty_dim(side)
        } else {
            Points::new(dims.o, o)?
        },
        z,
    })
}

fn rms(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    ((a - b).norm_squared() / a.len() as f64).sqrt()
}

/// `(‖f̂ − f*‖, ‖T f̂ − T f*‖)` on a design; `predict` maps treatment and covariate
/// points to the grid of values.
pub fn risks<P>(dgp: &DgpSpec, design: &RiskDesign, predict: P) -> Result<(f64, f64)>
where
    P: Fn(&Points, &Points) -> Result<DMatrix<f64>>,
{
    let truth = DMatrix::from_fn(design.x.len(), design.o.len(), |i, c| dgp.f_star(design.x.row(i), design.o.row(c)));
    let fit = predict(&design.x, &design.o)?;
    let l2 = rms(&fit, &truth);
    let projected = match dgp {
        DgpSpec::Npr(_) => l2,
        DgpSpec::Circle(c) => projected_error(c, design, &predict)?,
    };
    Ok((l2, projected))
}

/// Gauss–Legendre nodes for `E g(frac(z + W))`, split at the density knots
/// and at the wrap point `1 − z`.
fn shift_nodes(k: u32, z: f64) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(8);
    let mut cuts = w_knots(k);
    let wrap = 1.0 - z;
    if wrap > 0.0 && wrap < 0.1 * k as f64 {
        cuts.push(wrap);
    }
    let mut refined = Vec::new();
    for w in cuts.windows(2) {
        // Sub-panels no wider than 0.05.
        let pieces = ((w[1] - w[0]) / 0.05).ceil().max(1.0) as usize;
        for p in 0..pieces {
            refined.push(w[0] + (w[1] - w[0]) * p as f64 / pieces as f64);
        }
    }
    refined.push(0.1 * k as f64);
    refined.sort_by(|a, b| a.total_cmp(b));
    refined.dedup();
    let mut nodes = Vec::new();
    for w in refined.windows(2) {
        nodes.extend(rule.mapped(w[0], w[1]).map(|(v, wt)| (v, wt * w_density(k, v))));
    }
    nodes
}

fn projected_error<P>(spec: &CircleDgpSpec, design: &RiskDesign, predict: &P) -> Result<f64>
where
    P: Fn(&Points, &Points) -> Result<DMatrix<f64>>,
{
    let per_z: Vec<Vec<(f64, f64)>> = design.z.iter().map(|&z| shift_nodes(spec.k, z)).collect();
    let xs: Vec<f64> = design
        .z
        .iter()
        .zip(&per_z)
        .flat_map(|(&z, nodes)| nodes.iter().map(move |&(w, _)| (z + w).fract()))
        .collect();
    let fit = predict(&Points::from_column(&xs)?, &design.o)?;
    let q = design.o.len();
    let mut sq = 0.0;
    let mut row = 0;
    for (&z, nodes) in design.z.iter().zip(&per_z) {
        for c in 0..q {
            let tf: f64 = nodes.iter().enumerate().map(|(r, &(_, wt))| wt * fit[(row + r, c)]).sum();
            sq += (tf - spec.true_projection(z, design.o.row(c))).powi(2);
        }
        row += nodes.len();
    }
    Ok((sq / (design.z.len() * q) as f64).sqrt())
}

fn stage1_kernels(spec: &BenchSpec, data: &Dataset) -> Result<(KernelSpec, KernelSpec)> {
    let dims = data.dims;
    Ok((
        KernelSpec::matern(spec.stage1.nu, dims.z, spec.stage1.ls_z)?,
        KernelSpec::matern(spec.stage1.nu, dims.o, spec.stage1.ls_o)?,
    ))
}

fn base_hyper(tuning: &Tuning, n: usize, n_tilde: usize, nu: MaternNu) -> Result<Hyper> {
    match *tuning {
        Tuning::Fixed {
            gamma_x,
            gamma_o,
            lambda,
            xi,
        } => Ok(Hyper {
            gamma_x,
            gamma_o,
            lambda: lambda.unwrap_or(1.0 / n as f64),
            xi: xi.unwrap_or(1.0 / n as f64),
        }),
        Tuning::Theory(t) | Tuning::Cv(t) => {
            let s = schedule(n, n_tilde, &t.rate, nu, t.zeta, t.form)?;
            let xi = t.xi.or(s.xi).ok_or_else(|| {
                KivoError::param("xi", "the schedule leaves the stage-1 ridge undefined; set it explicitly")
            })?;
            Ok(Hyper {
                gamma_x: t.scale_x * s.gamma_x,
                gamma_o: t.scale_o * s.gamma_o,
                lambda: s.lambda,
                xi,
            })
        }
    }
}

fn stage2(data: &Dataset, s1: &Stage1Map, h: &Hyper, variant: Variant) -> Result<KivoModel> {
    let kx = KernelSpec::gaussian(data.dims.x, h.gamma_x)?;
    let ko = KernelSpec::gaussian(data.dims.o, h.gamma_o)?;
    match variant {
        Variant::Kivo => fit_stage2(data, s1, &kx, &ko, h.lambda),
        Variant::NaiveAugmented => fit_naive_stage2(data, s1, &kx, &ko, h.lambda),
    }
}

/// Final hyperparameters for one arm: CV refines the lengthscales for the given Stage-I map.
fn arm_hyper(tuning: &Tuning, base: Hyper, data: &Dataset, s1: &Stage1Map, variant: Variant) -> Result<Hyper> {
    match tuning {
        Tuning::Cv(_) => {
            let grid = default_grid(base.gamma_x, base.gamma_o, data.n());
            let best = cv_select(data, s1, &grid, variant)?.best;
            Ok(Hyper {
                gamma_x: best.0,
                gamma_o: best.1,
                lambda: best.2,
                xi: base.xi,
            })
        }
        _ => Ok(base),
    }
}

/// A model fitted under a tuning rule, with the hyperparameters it used.
#[derive(Debug, Clone)]
pub struct TunedFit {
    pub model: KivoModel,
    pub hyper: Hyper,
    pub cv: Option<CvResult>,
}

/// Fits one dataset the way a bench cell does.
pub fn fit_tuned(data: &Dataset, stage1: &Stage1Kernels, tuning: &Tuning, variant: Variant) -> Result<TunedFit> {
    data.validate()?;
    let base = base_hyper(tuning, data.n(), data.n_tilde(), stage1.nu)?;
    let kz = KernelSpec::matern(stage1.nu, data.dims.z, stage1.ls_z)?;
    let ko1 = KernelSpec::matern(stage1.nu, data.dims.o, stage1.ls_o)?;
    let s1 = fit_stage1(data, &kz, &ko1, base.xi)?;
    let (hyper, cv) = match tuning {
        Tuning::Cv(_) => {
            let grid = default_grid(base.gamma_x, base.gamma_o, data.n());
            let cv = cv_select(data, &s1, &grid, variant)?;
            let (gamma_x, gamma_o, lambda) = cv.best;
            (
                Hyper {
                    gamma_x,
                    gamma_o,
                    lambda,
                    xi: base.xi,
                },
                Some(cv),
            )
        }
        _ => (base, None),
    };
    let model = stage2(data, &s1, &hyper, variant)?;
    Ok(TunedFit { model, hyper, cv })
}

struct Cell {
    data: Dataset,
    s1: Stage1Map,
    base: Hyper,
    design: RiskDesign,
}

fn prepare(spec: &BenchSpec, n: usize, seed: u64) -> Result<Cell> {
    let n_tilde = spec.n_tilde(n);
    let data = spec.dgp.dataset(n, n_tilde, spec.master_seed, seed)?;
    let base = base_hyper(&spec.tuning, n, n_tilde, spec.stage1.nu)?;
    let (kz, ko1) = stage1_kernels(spec, &data)?;
    let s1 = fit_stage1(&data, &kz, &ko1, base.xi)?;
    let design = risk_design(&spec.dgp, spec.eval_points, spec.master_seed, seed)?;
    Ok(Cell { data, s1, base, design })
}

fn score(spec: &BenchSpec, cell: &Cell, variant: Variant) -> Result<(Hyper, f64, f64)> {
    let h = arm_hyper(&spec.tuning, cell.base, &cell.data, &cell.s1, variant)?;
    let model = stage2(&cell.data, &cell.s1, &h, variant)?;
    let (l2, pr) = risks(&spec.dgp, &cell.design, |x, o| model.predict_grid(x, o))?;
    Ok((h, l2, pr))
}

fn cells(spec: &BenchSpec) -> Vec<(usize, u64)> {
    spec.n_list
        .iter()
        .flat_map(|&n| spec.seeds.iter().map(move |&s| (n, s)))
        .collect()
}

fn tag(n: usize, seed: u64) -> impl Fn(KivoError) -> KivoError {
    move |e| KivoError::Replicate {
        n,
        seed,
        source: Box::new(e),
    }
}

/// The kernel set a cell fits with, for export alongside reports.
pub fn cell_kernels(spec: &BenchSpec, data: &Dataset, h: &Hyper) -> Result<KernelSet> {
    let (z, o1) = stage1_kernels(spec, data)?;
    Ok(KernelSet {
        z,
        o1,
        x: KernelSpec::gaussian(data.dims.x, h.gamma_x)?,
        o2: KernelSpec::gaussian(data.dims.o, h.gamma_o)?,
    })
}

pub fn rate_sweep(spec: &BenchSpec) -> Result<RateReport> {
    spec.validate()?;
    let rows = cells(spec)
        .into_par_iter()
        .map(|(n, seed)| {
            let start = Instant::now();
            let cell = prepare(spec, n, seed).map_err(tag(n, seed))?;
            let (hyper, l2_error, projected_error) = score(spec, &cell, Variant::Kivo).map_err(tag(n, seed))?;
            Ok(RateRow {
                n,
                n_tilde: cell.data.n_tilde(),
                seed,
                hyper,
                l2_error,
                projected_error,
                wall_time: start.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RateReport::from_rows(rows, spec.tuning.rate()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedRow {
    pub n: usize,
    pub seed: u64,
    pub kivo: Hyper,
    pub naive: Hyper,
    pub kivo_l2: f64,
    pub naive_l2: f64,
    pub kivo_projected: f64,
    pub naive_projected: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedReport {
    pub rows: Vec<PairedRow>,
}

impl PairedReport {
    /// `(n, median KIV-O L² error, median naive L² error)` per sample size.
    pub fn medians(&self) -> Vec<(usize, f64, f64)> {
        let mut ns: Vec<usize> = self.rows.iter().map(|r| r.n).collect();
        ns.sort_unstable();
        ns.dedup();
        ns.into_iter()
            .map(|n| {
                let k: Vec<f64> = self.rows.iter().filter(|r| r.n == n).map(|r| r.kivo_l2).collect();
                let v: Vec<f64> = self.rows.iter().filter(|r| r.n == n).map(|r| r.naive_l2).collect();
                (n, median(&k), median(&v))
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut put = |rec: Vec<String>| w.write_record(&rec).map_err(csv_error);
        put([
            "n",
            "seed",
            "gamma_x",
            "gamma_o",
            "lambda",
            "xi",
            "kivo_l2_error",
            "naive_l2_error",
            "kivo_projected_error",
            "naive_projected_error",
        ]
        .map(String::from)
        .to_vec())?;
        for r in &self.rows {
            put(vec![
                r.n.to_string(),
                r.seed.to_string(),
                fmt(r.kivo.gamma_x),
                fmt(r.kivo.gamma_o),
                fmt(r.kivo.lambda),
                fmt(r.kivo.xi),
                fmt(r.kivo_l2),
                fmt(r.naive_l2),
                fmt(r.kivo_projected),
                fmt(r.naive_projected),
            ])?;
        }
        w.flush().map_err(|e| csv_error(e.into()))
    }
}

/// Both estimators on the same dataset and Stage-I map in every cell.
pub fn compare_naive(spec: &BenchSpec) -> Result<PairedReport> {
    spec.validate()?;
    let rows = cells(spec)
        .into_par_iter()
        .map(|(n, seed)| {
            let cell = prepare(spec, n, seed).map_err(tag(n, seed))?;
            let (kivo, kivo_l2, kivo_projected) = score(spec, &cell, Variant::Kivo).map_err(tag(n, seed))?;
            let (naive, naive_l2, naive_projected) =
                score(spec, &cell, Variant::NaiveAugmented).map_err(tag(n, seed))?;
            Ok(PairedRow {
                n,
                seed,
                kivo,
                naive,
                kivo_l2,
                naive_l2,
                kivo_projected,
                naive_projected,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PairedReport { rows })
}
