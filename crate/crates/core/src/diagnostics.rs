//! Discretized conditional-expectation operators on the circle and
//! contractivity probes.
//!
//! The treatment grid is a partition of `[0, 1)` into `n_x` cells
//! `[j/n_x, (j+1)/n_x)`, represented by their midpoints; the instrument grid
//! is the points `z_i = i/n_z`. Entry `(i, j)` of the Markov matrix is the
//! probability that `frac(z_i + W)` falls in cell `j`, computed exactly from
//! the distribution function of `W`, so rows sum to one before normalization.
//! The adjoint is the posterior: the column-normalized transpose.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{KivoError, Result};
use crate::synthdata::{contractivity_ratio, mc_contractivity, w_cdf, CircleDgpSpec};

/// Law of the circle shift `W` behind an operator grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShiftLaw {
    /// `W = 0.1 ΣU_i` with `k` uniforms.
    IrwinHall { k: u32 },
    /// `W ≡ 0`, the regime `Z = X`.
    PointMass,
}

#[derive(Debug, Clone)]
pub struct OperatorGrid {
    /// `n_z × n_x`, row-stochastic.
    pub markov: DMatrix<f64>,
    /// `n_x × n_z`, row-stochastic wherever the treatment cell is reachable.
    pub posterior: DMatrix<f64>,
    pub n_z: usize,
    pub n_x: usize,
    pub law: ShiftLaw,
}

const MIN_GRID: usize = 16;

fn check_grid(n_z: usize, n_x: usize) -> Result<()> {
    if n_z < MIN_GRID || n_x < MIN_GRID {
        return Err(KivoError::param("grid", format!("sizes must be at least {MIN_GRID}, got {n_z} x {n_x}")));
    }
    Ok(())
}

fn normalized(mut markov: DMatrix<f64>, n_z: usize, n_x: usize, law: ShiftLaw) -> OperatorGrid {
    for mut row in markov.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    let mut posterior = markov.transpose();
    for mut row in posterior.row_iter_mut() {
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        }
    }
    OperatorGrid {
        markov,
        posterior,
        n_z,
        n_x,
        law,
    }
}

/// Markov matrix of `X = Z + W (mod 1)` for the circle design.
pub fn build_operator(spec: &CircleDgpSpec, n_z: usize, n_x: usize) -> Result<OperatorGrid> {
    spec.validate()?;
    check_grid(n_z, n_x)?;
    let k = spec.k;
    let h = 1.0 / n_x as f64;
    // W lives in [0, 0.1k] ⊆ [0, 1], so a cell wraps at most once.
    let mass = |t: f64| {
        let b = t + h;
        if b <= 1.0 {
            w_cdf(k, b) - w_cdf(k, t)
        } else {
            (1.0 - w_cdf(k, t)) + w_cdf(k, b - 1.0)
        }
    };
    let markov = DMatrix::from_fn(n_z, n_x, |i, j| {
        let t = (j as f64 * h - i as f64 / n_z as f64).rem_euclid(1.0);
        // Distribution-function differences can round below zero in the tails.
        mass(t).max(0.0)
    });
    Ok(normalized(markov, n_z, n_x, ShiftLaw::IrwinHall { k }))
}

/// Markov matrix of `X = Z`: each `z_i` maps to the cell that contains it.
pub fn build_identity_operator(n_z: usize, n_x: usize) -> Result<OperatorGrid> {
    check_grid(n_z, n_x)?;
    let mut markov = DMatrix::zeros(n_z, n_x);
    for i in 0..n_z {
        markov[(i, i * n_x / n_z)] = 1.0;
    }
    Ok(normalized(markov, n_z, n_x, ShiftLaw::PointMass))
}

impl OperatorGrid {
    /// Midpoints of the treatment cells.
    pub fn x_points(&self) -> Vec<f64> {
        (0..self.n_x).map(|j| (j as f64 + 0.5) / self.n_x as f64).collect()
    }

    pub fn z_points(&self) -> Vec<f64> {
        (0..self.n_z).map(|i| i as f64 / self.n_z as f64).collect()
    }

    /// `T`: columns of `f` are covariate slices of a function on the treatment grid.
    pub fn apply(&self, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if f.nrows() != self.n_x {
            return Err(KivoError::dims(self.n_x, f.nrows(), "treatment-grid function"));
        }
        Ok(&self.markov * f)
    }

    /// `T*`, the posterior average back onto the treatment grid.
    pub fn apply_adjoint(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if g.nrows() != self.n_z {
            return Err(KivoError::dims(self.n_z, g.nrows(), "instrument-grid function"));
        }
        Ok(&self.posterior * g)
    }

    /// `f(x_j, o_c)` on the treatment grid times the covariate grid.
    pub fn tabulate<F: Fn(f64, f64) -> f64>(&self, f: F, o_grid: &[f64]) -> DMatrix<f64> {
        let xs = self.x_points();
        DMatrix::from_fn(self.n_x, o_grid.len().max(1), |j, c| f(xs[j], o_grid.get(c).copied().unwrap_or(0.0)))
    }
}

/// Root-mean-square over a grid: the `ℓ²` norm under the uniform grid measure.
pub fn grid_norm(f: &DMatrix<f64>) -> f64 {
    if f.is_empty() {
        return 0.0;
    }
    (f.norm_squared() / f.len() as f64).sqrt()
}

/// `max |T*T g − g|` over the grid, `g` given as a function of `(x, o)`.
///
/// The covariate is a passenger: `T` acts on each covariate slice separately.
pub fn partial_identity_check<F: Fn(f64, f64) -> f64>(op: &OperatorGrid, g: F, o_grid: &[f64]) -> Result<f64> {
    let f = op.tabulate(g, o_grid);
    let back = op.apply_adjoint(&op.apply(&f)?)?;
    Ok((back - f).amax())
}

/// `‖T*T g‖ / ‖g‖` in the grid norm.
pub fn normal_contraction<F: Fn(f64, f64) -> f64>(op: &OperatorGrid, g: F, o_grid: &[f64]) -> Result<f64> {
    let f = op.tabulate(g, o_grid);
    let norm = grid_norm(&f);
    if norm == 0.0 {
        return Err(KivoError::param("g", "has zero norm on the grid"));
    }
    Ok(grid_norm(&op.apply_adjoint(&op.apply(&f)?)?) / norm)
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(KivoError::dims(xs.len(), ys.len(), "slope fit"));
    }
    if xs.len() < 2 {
        return Err(KivoError::param("points", "slope needs at least two points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(KivoError::param("points", "abscissae are all equal"));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRow {
    pub m: u32,
    pub log_m: f64,
    pub log_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTable {
    pub k: u32,
    pub rows: Vec<ProbeRow>,
    pub slope: f64,
}

impl ProbeTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| KivoError::Format {
            path: "<probe table>".into(),
            message: e.to_string(),
        };
        w.write_record(["k", "m", "log_m", "log_ratio"]).map_err(io)?;
        for r in &self.rows {
            w.write_record([
                self.k.to_string(),
                r.m.to_string(),
                format!("{:.12e}", r.log_m),
                format!("{:.12e}", r.log_ratio),
            ])
            .map_err(io)?;
        }
        w.write_record(["slope".to_string(), String::new(), String::new(), format!("{:.12e}", self.slope)])
            .map_err(io)?;
        w.flush().map_err(|e| KivoError::Format {
            path: "<probe table>".into(),
            message: e.to_string(),
        })
    }
}

fn check_freqs(k: u32, freqs: &[u32]) -> Result<()> {
    if k == 0 || k > 10 {
        return Err(KivoError::param("k", "must lie in 1..=10"));
    }
    if let Some(&m) = freqs.iter().find(|&&m| m % 10 == 0) {
        return Err(KivoError::param("freqs", format!("m = {m} is a zero of sin(0.1πm)")));
    }
    Ok(())
}

fn table<F: FnMut(u32) -> Result<f64>>(k: u32, freqs: &[u32], mut ratio: F) -> Result<ProbeTable> {
    check_freqs(k, freqs)?;
    let rows = freqs
        .iter()
        .map(|&m| {
            Ok(ProbeRow {
                m,
                log_m: (m as f64).ln(),
                log_ratio: ratio(m)?.ln(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| r.log_m).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.log_ratio).collect();
    let slope = ls_slope(&xs, &ys)?;
    Ok(ProbeTable { k, rows, slope })
}

/// Closed-form `log ‖Tf‖²/‖f‖²` against `log m`; for `m ≡ 5 (mod 10)` the slope is `−2k`.
pub fn contractivity_probe(k: u32, freqs: &[u32]) -> Result<ProbeTable> {
    table(k, freqs, |m| contractivity_ratio(m, k))
}

/// The same table from Monte-Carlo ratios; frequency `i` uses seed `seed + i`.
pub fn contractivity_probe_mc(k: u32, freqs: &[u32], a: f64, samples: usize, seed: u64) -> Result<ProbeTable> {
    let mut i = 0;
    table(k, freqs, |m| {
        i += 1;
        mc_contractivity(m, k, a, samples, seed.wrapping_add(i - 1))
    })
}
