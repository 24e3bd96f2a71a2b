//! Synthetic data with known operator and target.
//!
//! The circle generator places `Z`, `O` and latent `U_1..U_k` uniformly on
//! the unit circle and sets `X = Z + 0.1 ΣU_i (mod 1)`. The conditional
//! expectation of `cos(2πm X)` given `Z` is then a damped, shifted cosine
//! with known amplitude, so both the operator and the projected target are
//! available in closed form.
//!
//! The regression generator takes `Z = X` (the operator is the identity) with
//! `X` drawn from a smooth compactly supported bump density.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{KivoError, Result};
use crate::estimator::{Dataset, Dims, Stage1Data, Stage2Data};
use crate::kernel::Points;
use crate::quadrature::adaptive;
use crate::rng::{stream, Role};

/// Circle generator parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleDgpSpec {
    /// Number of latent uniforms; also the contractivity exponent.
    pub k: u32,
    /// Frequency of the target in `x`.
    pub m: u32,
    /// Covariate amplitude of `h(o) = 1 + a cos(2πo)`.
    pub a: f64,
    /// Endogeneity strength.
    pub c_e: f64,
    pub sigma: f64,
    /// Overall target amplitude; zero gives a pure-noise problem.
    pub amp: f64,
    /// When false the covariate is dropped (`d_o = 0`, `h ≡ 1`).
    pub covariate: bool,
}

impl Default for CircleDgpSpec {
    fn default() -> Self {
        CircleDgpSpec {
            k: 1,
            m: 3,
            a: 0.5,
            c_e: 0.5,
            sigma: 0.2,
            amp: 1.0,
            covariate: true,
        }
    }
}

impl CircleDgpSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=10).contains(&self.k) {
            return Err(KivoError::param("k", format!("must lie in 1..=10, got {}", self.k)));
        }
        if self.m == 0 {
            return Err(KivoError::param("m", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.a) {
            return Err(KivoError::param("a", format!("must lie in [0, 1), got {}", self.a)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(KivoError::param("sigma", "must be non-negative"));
        }
        if !self.c_e.is_finite() || !self.amp.is_finite() {
            return Err(KivoError::param("c_e", "must be finite"));
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        Dims {
            z: 1,
            o: self.covariate as usize,
            x: 1,
        }
    }

    fn h(&self, o: &[f64]) -> f64 {
        match o.first() {
            Some(&o) if self.covariate => 1.0 + self.a * (2.0 * PI * o).cos(),
            _ => 1.0,
        }
    }

    /// `f*(x, o) = amp · cos(2πm x) · h(o)`.
    pub fn f_star(&self, x: f64, o: &[f64]) -> f64 {
        self.amp * (2.0 * PI * self.m as f64 * x).cos() * self.h(o)
    }

    /// `(T f*)(z, o) = amp · ρ · cos(2πm z + 0.1π m k) · h(o)`.
    pub fn true_projection(&self, z: f64, o: &[f64]) -> f64 {
        let m = self.m as f64;
        let shift = 0.1 * PI * m * self.k as f64;
        self.amp * damping(self.m, self.k) * (2.0 * PI * m * z + shift).cos() * self.h(o)
    }
}

/// `ρ(m, k) = (sin(0.1πm) / (0.1πm))^k`, the modulus of `E e^{2πi m W}`.
pub fn damping(m: u32, k: u32) -> f64 {
    let t = 0.1 * PI * m as f64;
    (t.sin() / t).powi(k as i32)
}

/// `‖Tf‖² / ‖f‖²` for `f(x, o) = trig(2πm x) h(o)`: `(10/(πm))^{2k} sin^{2k}(0.1πm)`.
pub fn contractivity_ratio(m: u32, k: u32) -> Result<f64> {
    if m == 0 {
        return Err(KivoError::param("m", "must be at least 1"));
    }
    let m = m as f64;
    let k = k as i32;
    Ok((10.0 / (PI * m)).powi(2 * k) * (0.1 * PI * m).sin().powi(2 * k))
}

/// Stratified uniforms: one draw per cell `[j/n, (j+1)/n)`, randomly permuted.
fn stratified<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|j| (j as f64 + rng.random::<f64>()) / n as f64).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
    v
}

/// Monte-Carlo estimate of `‖Tf‖² / ‖f‖²` for `f = cos(2πm x)(1 + a cos 2πo)`.
///
/// Each coordinate of the latent vector `(Z, O, U_1..U_k)` is stratified
/// (Latin hypercube). `E[f(X, O) | Z, O]` is estimated through the empirical
/// characteristic function of each `U_i` column, and both norms are sample
/// means over the same design.
pub fn mc_contractivity(m: u32, k: u32, a: f64, samples: usize, seed: u64) -> Result<f64> {
    if samples < 2 {
        return Err(KivoError::param("samples", "need at least 2"));
    }
    let spec = CircleDgpSpec {
        k,
        m,
        a,
        c_e: 0.0,
        sigma: 0.0,
        amp: 1.0,
        covariate: true,
    };
    spec.validate()?;
    let mut rng = stream(seed, 0, Role::Aux);
    let z = stratified(&mut rng, samples);
    let o = stratified(&mut rng, samples);
    let omega = 0.2 * PI * m as f64;
    let mut phi = Complex64::new(1.0, 0.0);
    let mut w = vec![0.0; samples];
    for _ in 0..k {
        let u = stratified(&mut rng, samples);
        let mean: Complex64 = u.iter().map(|&u| Complex64::from_polar(1.0, omega * u)).sum::<Complex64>()
            / samples as f64;
        phi *= mean;
        for (wi, ui) in w.iter_mut().zip(&u) {
            *wi += 0.1 * ui;
        }
    }
    let mut tf2 = 0.0;
    let mut f2 = 0.0;
    for i in 0..samples {
        let h = spec.h(&[o[i]]);
        let tf = (Complex64::from_polar(1.0, 2.0 * PI * m as f64 * z[i]) * phi).re * h;
        let x = (z[i] + w[i]).fract();
        let f = spec.f_star(x, &[o[i]]);
        tf2 += tf * tf;
        f2 += f * f;
    }
    Ok(tf2 / f2)
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Density of the sum of `k` independent uniforms on `[0, 1)`; support `[0, k)`.
pub fn irwin_hall_pdf(k: u32, s: f64) -> f64 {
    if k == 0 || !(0.0..k as f64).contains(&s) {
        return 0.0;
    }
    let top = s.floor() as u32;
    let sum: f64 = (0..=top)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * binomial(k, j) * (s - j as f64).powi(k as i32 - 1)
        })
        .sum();
    (sum / factorial(k - 1)).max(0.0)
}

pub fn irwin_hall_cdf(k: u32, s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= k as f64 {
        return 1.0;
    }
    let top = s.floor() as u32;
    let sum: f64 = (0..=top)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * binomial(k, j) * (s - j as f64).powi(k as i32)
        })
        .sum();
    (sum / factorial(k)).clamp(0.0, 1.0)
}

/// Density of `W = 0.1 ΣU_i`.
pub fn w_density(k: u32, w: f64) -> f64 {
    10.0 * irwin_hall_pdf(k, 10.0 * w)
}

pub fn w_cdf(k: u32, w: f64) -> f64 {
    irwin_hall_cdf(k, 10.0 * w)
}

/// Breakpoints of the piecewise-polynomial density of `W`: `0, 0.1, .., 0.1k`.
pub fn w_knots(k: u32) -> Vec<f64> {
    (0..=k).map(|j| 0.1 * j as f64).collect()
}

/// Raw columns of a circle sample; `eps` is the structural error.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleSample {
    pub z: Vec<f64>,
    pub o: Vec<f64>,
    pub x: Vec<f64>,
    pub eps: Vec<f64>,
    pub y: Vec<f64>,
}

/// Draws `n` points. Per point the order of draws is `Z, O, U_1..U_k, N`.
pub fn circle_sample<R: Rng>(spec: &CircleDgpSpec, n: usize, rng: &mut R) -> Result<CircleSample> {
    spec.validate()?;
    let mut s = CircleSample {
        z: Vec::with_capacity(n),
        o: Vec::with_capacity(n),
        x: Vec::with_capacity(n),
        eps: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let z: f64 = rng.random();
        let o: f64 = rng.random();
        let mut w = 0.0;
        let mut u1 = 0.0;
        for i in 0..spec.k {
            let u: f64 = rng.random();
            if i == 0 {
                u1 = u;
            }
            w += 0.1 * u;
        }
        let noise: f64 = rng.sample(StandardNormal);
        let x = (z + w).fract();
        let eps = spec.c_e * (2.0 * PI * u1).sin() + spec.sigma * noise;
        let ov: &[f64] = if spec.covariate { &[o] } else { &[] };
        s.y.push(spec.f_star(x, ov) + eps);
        s.z.push(z);
        s.o.push(o);
        s.x.push(x);
        s.eps.push(eps);
    }
    Ok(s)
}

fn column_or_empty(v: &[f64], present: bool) -> Result<Points> {
    if present {
        Points::from_column(v)
    } else {
        Ok(Points::empty_dim(v.len()))
    }
}

/// Stage-I and Stage-II samples from independent streams of `(seed, replicate)`.
pub fn circle_dataset(spec: &CircleDgpSpec, n: usize, n_tilde: usize, seed: u64, replicate: u64) -> Result<Dataset> {
    let s1 = circle_sample(spec, n_tilde, &mut stream(seed, replicate, Role::Stage1))?;
    let s2 = circle_sample(spec, n, &mut stream(seed, replicate, Role::Stage2))?;
    Dataset::new(
        spec.dims(),
        Stage1Data {
            z: Points::from_column(&s1.z)?,
            o: column_or_empty(&s1.o, spec.covariate)?,
            x: Points::from_column(&s1.x)?,
        },
        Stage2Data {
            z: Points::from_column(&s2.z)?,
            o: column_or_empty(&s2.o, spec.covariate)?,
            y: DVector::from_vec(s2.y),
            x: Some(Points::from_column(&s2.x)?),
        },
    )
}

fn bump_kernel(x: f64) -> f64 {
    if x.abs() >= 0.5 {
        0.0
    } else {
        (-2.0 / (1.0 - 4.0 * x * x)).exp()
    }
}

/// `∫ exp(-2/(1-4x²)) dx` over `(-1/2, 1/2)`.
pub fn bump_normalizer() -> f64 {
    static Z: OnceLock<f64> = OnceLock::new();
    *Z.get_or_init(|| adaptive(&bump_kernel, -0.5, 0.5, 1e-14, 40).expect("bump normalizer quadrature"))
}

/// Product bump density on `(-1/2, 1/2)^d`.
pub fn bump_density(x: &[f64]) -> f64 {
    let z = bump_normalizer();
    x.iter().map(|&v| bump_kernel(v) / z).product()
}

/// One coordinate from the bump density, by rejection from the uniform.
pub fn bump_sample<R: Rng>(rng: &mut R) -> f64 {
    let peak = (-2f64).exp();
    loop {
        let x = rng.random::<f64>() - 0.5;
        let u: f64 = rng.random();
        if u * peak < bump_kernel(x) {
            return x;
        }
    }
}

/// Regression generator: `Z = X`, `X` bump-distributed, `O` uniform.
///
/// Target `amp · cos(2πm Σx) · (1 + a Σ cos 2πo)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NprSpec {
    pub d_x: usize,
    pub d_o: usize,
    pub m: u32,
    pub a: f64,
    pub amp: f64,
    pub sigma: f64,
}

impl Default for NprSpec {
    fn default() -> Self {
        NprSpec {
            d_x: 1,
            d_o: 1,
            m: 1,
            a: 0.5,
            amp: 1.0,
            sigma: 0.0,
        }
    }
}

impl NprSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_x == 0 {
            return Err(KivoError::param("d_x", "must be at least 1"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(KivoError::param("sigma", "must be non-negative"));
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        Dims {
            z: self.d_x,
            o: self.d_o,
            x: self.d_x,
        }
    }

    pub fn f_star(&self, x: &[f64], o: &[f64]) -> f64 {
        let sx: f64 = x.iter().sum();
        let h = 1.0 + self.a * o.iter().map(|&v| (2.0 * PI * v).cos()).sum::<f64>();
        self.amp * (2.0 * PI * self.m as f64 * sx).cos() * h
    }
}

/// Raw regression sample, row-major blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct NprSample {
    pub x: Points,
    pub o: Points,
    pub y: Vec<f64>,
}

pub fn npr_sample<R: Rng, F: Fn(&[f64], &[f64]) -> f64>(
    n: usize,
    d_x: usize,
    d_o: usize,
    f_star: F,
    sigma: f64,
    rng: &mut R,
) -> Result<NprSample> {
    let mut xs = Vec::with_capacity(n * d_x);
    let mut os = Vec::with_capacity(n * d_o);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let x0 = xs.len();
        for _ in 0..d_x {
            xs.push(bump_sample(rng));
        }
        let o0 = os.len();
        for _ in 0..d_o {
            os.push(rng.random::<f64>());
        }
        let noise: f64 = rng.sample(StandardNormal);
        y.push(f_star(&xs[x0..], &os[o0..]) + sigma * noise);
    }
    let o = if d_o == 0 {
        Points::empty_dim(n)
    } else {
        Points::new(d_o, os)?
    };
    Ok(NprSample {
        x: Points::new(d_x, xs)?,
        o,
        y,
    })
}

pub fn npr_dataset(spec: &NprSpec, n: usize, n_tilde: usize, seed: u64, replicate: u64) -> Result<Dataset> {
    spec.validate()?;
    let f = |x: &[f64], o: &[f64]| spec.f_star(x, o);
    let s1 = npr_sample(n_tilde, spec.d_x, spec.d_o, f, spec.sigma, &mut stream(seed, replicate, Role::Stage1))?;
    let s2 = npr_sample(n, spec.d_x, spec.d_o, f, spec.sigma, &mut stream(seed, replicate, Role::Stage2))?;
    Dataset::new(
        spec.dims(),
        Stage1Data {
            z: s1.x.clone(),
            o: s1.o,
            x: s1.x,
        },
        Stage2Data {
            z: s2.x.clone(),
            o: s2.o,
            y: DVector::from_vec(s2.y),
            x: Some(s2.x),
        },
    )
}

/// Either generator, as chosen in configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DgpSpec {
    Circle(CircleDgpSpec),
    Npr(NprSpec),
}

impl DgpSpec {
    pub fn dims(&self) -> Dims {
        match self {
            DgpSpec::Circle(c) => c.dims(),
            DgpSpec::Npr(p) => p.dims(),
        }
    }

    pub fn dataset(&self, n: usize, n_tilde: usize, seed: u64, replicate: u64) -> Result<Dataset> {
        match self {
            DgpSpec::Circle(c) => circle_dataset(c, n, n_tilde, seed, replicate),
            DgpSpec::Npr(p) => npr_dataset(p, n, n_tilde, seed, replicate),
        }
    }

    pub fn f_star(&self, x: &[f64], o: &[f64]) -> f64 {
        match self {
            DgpSpec::Circle(c) => c.f_star(x[0], o),
            DgpSpec::Npr(p) => p.f_star(x, o),
        }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            DgpSpec::Circle(c) => c.sigma,
            DgpSpec::Npr(p) => p.sigma,
        }
    }
}

// ---- CSV ----

fn csv_err(path: &Path, line: usize, column: &str, message: impl Into<String>) -> KivoError {
    KivoError::Parse {
        path: path.to_path_buf(),
        line,
        column: column.to_string(),
        message: message.into(),
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes stage-1 rows then stage-2 rows under the header
/// `z1..,o1..,x1..,y,stage`. Unknown cells are left empty.
pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    let io = |source: std::io::Error| KivoError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io)?;
    write_csv_to(data, file).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => io(source),
        other => KivoError::Format {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    })
}

pub fn write_csv_to<W: std::io::Write>(data: &Dataset, out: W) -> std::result::Result<(), csv::Error> {
    let d = data.dims;
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = Vec::new();
    header.extend((1..=d.z).map(|i| format!("z{i}")));
    header.extend((1..=d.o).map(|i| format!("o{i}")));
    header.extend((1..=d.x).map(|i| format!("x{i}")));
    header.push("y".into());
    header.push("stage".into());
    w.write_record(&header)?;
    let s1 = &data.stage1;
    for i in 0..s1.x.len() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        rec.extend(s1.z.row(i).iter().map(|&v| fmt(v)));
        rec.extend(s1.o.row(i).iter().map(|&v| fmt(v)));
        rec.extend(s1.x.row(i).iter().map(|&v| fmt(v)));
        rec.push(String::new());
        rec.push("1".into());
        w.write_record(&rec)?;
    }
    let s2 = &data.stage2;
    for i in 0..s2.y.len() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        rec.extend(s2.z.row(i).iter().map(|&v| fmt(v)));
        rec.extend(s2.o.row(i).iter().map(|&v| fmt(v)));
        match &s2.x {
            Some(x) => rec.extend(x.row(i).iter().map(|&v| fmt(v))),
            None => rec.extend(std::iter::repeat_n(String::new(), d.x)),
        }
        rec.push(fmt(s2.y[i]));
        rec.push("2".into());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses column names into `(z, o, x)` index lists plus `y` and `stage` positions.
fn parse_header(path: &Path, header: &csv::StringRecord) -> Result<(Dims, [Vec<usize>; 3], usize, usize)> {
    let mut blocks: [Vec<(usize, usize)>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut y = None;
    let mut stage = None;
    for (pos, name) in header.iter().enumerate() {
        let name = name.trim();
        let slot = match name.chars().next() {
            _ if name == "y" => {
                y = Some(pos);
                continue;
            }
            _ if name == "stage" => {
                stage = Some(pos);
                continue;
            }
            Some('z') => 0,
            Some('o') => 1,
            Some('x') => 2,
            _ => return Err(csv_err(path, 1, name, "unknown column")),
        };
        let idx: usize = name[1..]
            .parse()
            .ok()
            .filter(|&i| i >= 1)
            .ok_or_else(|| csv_err(path, 1, name, "unknown column"))?;
        blocks[slot].push((idx, pos));
    }
    let y = y.ok_or_else(|| csv_err(path, 1, "y", "missing column"))?;
    let stage = stage.ok_or_else(|| csv_err(path, 1, "stage", "missing column"))?;
    let mut out: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (b, prefix) in ["z", "o", "x"].iter().enumerate() {
        blocks[b].sort();
        for (want, &(idx, pos)) in blocks[b].iter().enumerate() {
            if idx != want + 1 {
                return Err(csv_err(path, 1, &format!("{prefix}{idx}"), "columns must be numbered 1..d without gaps"));
            }
            out[b].push(pos);
        }
    }
    let dims = Dims {
        z: out[0].len(),
        o: out[1].len(),
        x: out[2].len(),
    };
    if dims.x == 0 {
        return Err(csv_err(path, 1, "x1", "missing column"));
    }
    Ok((dims, out, y, stage))
}

pub fn read_csv(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|source| KivoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv_from(file, path)
}

pub fn read_csv_from<R: std::io::Read>(input: R, path: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr
        .headers()
        .map_err(|e| csv_err(path, 1, "-", e.to_string()))?
        .clone();
    let (dims, cols, ycol, scol) = parse_header(path, &header)?;
    let mut s1 = [Vec::new(), Vec::new(), Vec::new()];
    let mut s2 = [Vec::new(), Vec::new(), Vec::new()];
    let mut y = Vec::new();
    let mut s2_has_x: Option<bool> = None;
    for (r, rec) in rdr.records().enumerate() {
        let line = r + 2;
        let rec = rec.map_err(|e| csv_err(path, line, "-", e.to_string()))?;
        if rec.len() != header.len() {
            return Err(csv_err(path, line, "-", format!("expected {} cells, found {}", header.len(), rec.len())));
        }
        let cell = |pos: usize| -> Result<Option<f64>> {
            let s = rec[pos].trim();
            if s.is_empty() {
                return Ok(None);
            }
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Some(v)),
                _ => Err(csv_err(path, line, &header[pos], format!("`{s}` is not a finite number"))),
            }
        };
        let block = |b: usize, required: bool| -> Result<Option<Vec<f64>>> {
            let mut vals = Vec::with_capacity(cols[b].len());
            for &pos in &cols[b] {
                match cell(pos)? {
                    Some(v) => vals.push(v),
                    None if required => return Err(csv_err(path, line, &header[pos], "missing value")),
                    None => return Ok(None),
                }
            }
            Ok(Some(vals))
        };
        match rec[scol].trim() {
            "1" => {
                for (b, col) in s1.iter_mut().enumerate() {
                    col.extend(block(b, true)?.unwrap_or_default());
                }
            }
            "2" => {
                for (b, col) in s2.iter_mut().enumerate().take(2) {
                    col.extend(block(b, true)?.unwrap_or_default());
                }
                let x = block(2, false)?;
                match (s2_has_x, &x) {
                    (None, _) => s2_has_x = Some(x.is_some()),
                    (Some(h), _) if h != x.is_some() => {
                        return Err(csv_err(path, line, "x1", "stage-2 x must be given on all rows or none"));
                    }
                    _ => {}
                }
                s2[2].extend(x.unwrap_or_default());
                let yv = cell(ycol)?.ok_or_else(|| csv_err(path, line, "y", "stage-2 row requires y"))?;
                y.push(yv);
            }
            other => return Err(csv_err(path, line, "stage", format!("expected 1 or 2, found `{other}`"))),
        }
    }
    let n1 = s1[2].len() / dims.x;
    let n2 = y.len();
    if n1 == 0 {
        return Err(KivoError::Format {
            path: path.to_path_buf(),
            message: "fitting requires at least one stage-1 row (stage = 1)".into(),
        });
    }
    if n2 == 0 {
        return Err(KivoError::Format {
            path: path.to_path_buf(),
            message: "fitting requires at least one stage-2 row (stage = 2)".into(),
        });
    }
    let pts = |dim: usize, len: usize, v: Vec<f64>| -> Result<Points> {
        if dim == 0 {
            Ok(Points::empty_dim(len))
        } else {
            Points::new(dim, v)
        }
    };
    let [z1, o1, x1] = s1;
    let [z2, o2, x2] = s2;
    Dataset::new(
        dims,
        Stage1Data {
            z: pts(dims.z, n1, z1)?,
            o: pts(dims.o, n1, o1)?,
            x: pts(dims.x, n1, x1)?,
        },
        Stage2Data {
            z: pts(dims.z, n2, z2)?,
            o: pts(dims.o, n2, o2)?,
            y: DVector::from_vec(y),
            x: if s2_has_x == Some(true) {
                Some(pts(dims.x, n2, x2)?)
            } else {
                None
            },
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_circle_is_exact() {
        let spec = CircleDgpSpec {
            c_e: 0.0,
            sigma: 0.0,
            ..Default::default()
        };
        let s = circle_sample(&spec, 100, &mut stream(1, 0, Role::Stage2)).unwrap();
        for i in 0..100 {
            assert_eq!(s.y[i], spec.f_star(s.x[i], &[s.o[i]]));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = CircleDgpSpec::default();
        let a = circle_dataset(&spec, 50, 40, 9, 3).unwrap();
        let b = circle_dataset(&spec, 50, 40, 9, 3).unwrap();
        assert_eq!(a, b);
        let c = circle_dataset(&spec, 50, 40, 9, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn projection_closed_form_examples() {
        let spec = CircleDgpSpec {
            m: 10,
            ..Default::default()
        };
        for z in [0.0, 0.13, 0.5] {
            assert!(spec.true_projection(z, &[0.3]).abs() < 1e-15);
        }
        let spec = CircleDgpSpec {
            m: 5,
            k: 1,
            a: 0.0,
            ..Default::default()
        };
        // Peak where 2π·5z + π/2 = 2π.
        let z = 0.15;
        assert!((spec.true_projection(z, &[0.0]) - 2.0 / PI).abs() < 1e-12);
    }

    #[test]
    fn ratio_examples() {
        assert!((contractivity_ratio(5, 1).unwrap() - (2.0 / PI).powi(2)).abs() < 1e-15);
        assert!((contractivity_ratio(5, 1).unwrap() - 0.4052847).abs() < 1e-7);
        for k in 1..4 {
            assert!(contractivity_ratio(10, k).unwrap() < 1e-30);
        }
        assert!(contractivity_ratio(0, 1).is_err());
    }

    #[test]
    fn mc_ratio_close_to_closed_form() {
        let est = mc_contractivity(7, 2, 0.5, 200_000, 3).unwrap();
        let exact = contractivity_ratio(7, 2).unwrap();
        assert!((est / exact - 1.0).abs() < 0.02, "{est} vs {exact}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        for bad in [
            CircleDgpSpec { k: 0, ..Default::default() },
            CircleDgpSpec { k: 11, ..Default::default() },
            CircleDgpSpec { m: 0, ..Default::default() },
            CircleDgpSpec { a: 1.0, ..Default::default() },
            CircleDgpSpec { sigma: -1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn irwin_hall_values() {
        assert_eq!(w_density(1, 0.05), 10.0);
        assert_eq!(w_density(1, 0.1), 0.0);
        assert_eq!(w_density(1, -0.01), 0.0);
        // Triangle peak f_IH(1) = 1 sits at w = 0.1.
        assert!((w_density(2, 0.1) - 10.0).abs() < 1e-12);
        assert!((w_density(2, 0.05) - 5.0).abs() < 1e-12);
        for k in 1..=10u32 {
            // Independent check: the density integrates to one and matches the CDF.
            let n = 20_000;
            let h = k as f64 / n as f64;
            let total: f64 = (0..n).map(|i| irwin_hall_pdf(k, (i as f64 + 0.5) * h) * h).sum();
            assert!((total - 1.0).abs() < 1e-6, "k = {k}");
            let mid = k as f64 / 2.0;
            assert!((irwin_hall_cdf(k, mid) - 0.5).abs() < 1e-10);
            let partial: f64 = (0..n / 4).map(|i| irwin_hall_pdf(k, (i as f64 + 0.5) * h) * h).sum();
            assert!((partial - irwin_hall_cdf(k, k as f64 / 4.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn bump_density_basics() {
        assert_eq!(bump_density(&[0.5]), 0.0);
        assert_eq!(bump_density(&[0.1, -0.7]), 0.0);
        let z = bump_normalizer();
        assert!((bump_density(&[0.0]) - (-2f64).exp() / z).abs() < 1e-15);
        // Independent check of the normalization with a fine midpoint rule.
        let n = 200_000;
        let h = 1.0 / n as f64;
        let total: f64 = (0..n).map(|i| bump_density(&[-0.5 + (i as f64 + 0.5) * h]) * h).sum();
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn npr_columns_identical() {
        let d = npr_dataset(&NprSpec::default(), 30, 20, 1, 0).unwrap();
        assert_eq!(&d.stage2.z, d.stage2.x.as_ref().unwrap());
        assert_eq!(d.stage1.z, d.stage1.x);
        let spec = NprSpec::default();
        let x = d.stage2.x.as_ref().unwrap();
        for i in 0..30 {
            assert_eq!(d.stage2.y[i], spec.f_star(x.row(i), d.stage2.o.row(i)));
        }
    }

    #[test]
    fn csv_round_trip() {
        for covariate in [true, false] {
            let spec = CircleDgpSpec {
                covariate,
                ..Default::default()
            };
            let d = circle_dataset(&spec, 20, 15, 4, 0).unwrap();
            let mut buf = Vec::new();
            write_csv_to(&d, &mut buf).unwrap();
            let back = read_csv_from(buf.as_slice(), Path::new("mem.csv")).unwrap();
            assert_eq!(back, d);
            let text = String::from_utf8(buf).unwrap();
            let head = text.lines().next().unwrap();
            assert_eq!(head, if covariate { "z1,o1,x1,y,stage" } else { "z1,x1,y,stage" });
        }
    }

    #[test]
    fn csv_errors_name_row_and_column() {
        let p = Path::new("d.csv");
        let missing_y = "z1,o1,x1,y,stage\n0.1,0.2,0.3,,1\n0.1,0.2,,,2\n";
        match read_csv_from(missing_y.as_bytes(), p) {
            Err(KivoError::Parse { line: 3, column, .. }) => assert_eq!(column, "y"),
            other => panic!("{other:?}"),
        }
        let missing_x = "z1,o1,x1,y,stage\n0.1,0.2,,,1\n";
        match read_csv_from(missing_x.as_bytes(), p) {
            Err(KivoError::Parse { line: 2, column, .. }) => assert_eq!(column, "x1"),
            other => panic!("{other:?}"),
        }
        let bad_num = "z1,x1,y,stage\nabc,0.3,,1\n";
        assert!(matches!(read_csv_from(bad_num.as_bytes(), p), Err(KivoError::Parse { line: 2, .. })));
        let bad_header = "z1,w1,x1,y,stage\n";
        assert!(matches!(read_csv_from(bad_header.as_bytes(), p), Err(KivoError::Parse { line: 1, .. })));
        let no_stage1 = "z1,x1,y,stage\n0.1,,0.5,2\n";
        assert!(matches!(read_csv_from(no_stage1.as_bytes(), p), Err(KivoError::Format { .. })));
    }
}
