use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use kivo::bench::{compare_naive, fit_tuned, rate_sweep, BenchSpec, Stage1Kernels, TheoryTuning, Tuning};
use kivo::diagnostics::{
    build_operator, contractivity_probe, contractivity_probe_mc, normal_contraction, partial_identity_check,
};
use kivo::estimator::{Dataset, Variant};
use kivo::model_file;
use kivo::schedule::{cv_select, default_grid, schedule, write_cv_table, RateSpec, XiForm};
use kivo::spectral::{self, random_codebook, HardInstanceSpec};
use kivo::synthdata::{damping, read_csv, write_csv_to, CircleDgpSpec, DgpSpec, NprSpec};
use kivo::{KivoError, MaternNu, Points};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::Common;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Kivo(#[from] KivoError),
}

impl CliError {
    /// 2 for configuration and validation, 3 for I/O, 4 for numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Kivo(e) if e.is_io() => 3,
            CliError::Kivo(e) if e.is_numerical() => 4,
            CliError::Kivo(_) => 2,
        }
    }
}

fn io_error(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::parse(&RunConfig::load(path).map_err(io_error(path))?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set("dgp.seed", seed.to_string());
    }
    Ok(cfg)
}

/// The file behind `path`, or standard output.
fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    match path {
        Some(p) => Ok(Box::new(BufWriter::new(File::create(p).map_err(io_error(p))?))),
        None => Ok(Box::new(BufWriter::new(std::io::stdout()))),
    }
}

/// `<out>.<suffix>` next to the main output, when there is one.
fn sibling(path: Option<&Path>, suffix: &str) -> Option<PathBuf> {
    path.map(|p| {
        let mut s = p.as_os_str().to_owned();
        s.push(format!(".{suffix}"));
        PathBuf::from(s)
    })
}

fn finish(mut w: Box<dyn Write>, path: Option<&Path>) -> Result<(), CliError> {
    w.flush().map_err(io_error(path.unwrap_or(Path::new("<stdout>"))))
}

fn required_path(flag: Option<PathBuf>, cfg: &RunConfig, key: &str, what: &str) -> Result<PathBuf, CliError> {
    flag.or_else(|| cfg.path(key).map(PathBuf::from))
        .ok_or_else(|| CliError::Usage(format!("{what} required: pass --{} or set `{key}`", &key[3..])))
}

fn dgp(cfg: &RunConfig) -> Result<DgpSpec, CliError> {
    let spec = match cfg.choice("dgp.kind", &["circle", "npr"])? {
        "circle" => {
            let c = CircleDgpSpec {
                k: cfg.u32("dgp.k")?,
                m: cfg.u32("dgp.m")?,
                a: cfg.f64("dgp.a")?,
                c_e: cfg.f64("dgp.c_e")?,
                sigma: cfg.f64("dgp.sigma")?,
                amp: cfg.f64("dgp.amp")?,
                covariate: cfg.bool("dgp.covariate")?,
            };
            c.validate()?;
            DgpSpec::Circle(c)
        }
        _ => {
            let p = NprSpec {
                d_x: cfg.usize("dgp.d_x")?,
                d_o: cfg.usize("dgp.d_o")?,
                m: cfg.u32("dgp.m")?,
                a: cfg.f64("dgp.a")?,
                amp: cfg.f64("dgp.amp")?,
                sigma: cfg.f64("dgp.sigma")?,
            };
            p.validate()?;
            DgpSpec::Npr(p)
        }
    };
    Ok(spec)
}

fn nu(cfg: &RunConfig) -> Result<MaternNu, CliError> {
    MaternNu::from_value(cfg.f64("fit.nu")?).map_err(|e| ConfigError::Invalid {
        key: "fit.nu".into(),
        reason: e.to_string(),
    }.into())
}

fn stage1(cfg: &RunConfig) -> Result<Stage1Kernels, CliError> {
    Ok(Stage1Kernels {
        nu: nu(cfg)?,
        ls_z: cfg.f64("fit.ls_z")?,
        ls_o: cfg.f64("fit.ls_o")?,
    })
}

fn rate_spec(cfg: &RunConfig, dims: kivo::estimator::Dims) -> Result<RateSpec, CliError> {
    Ok(RateSpec {
        s_x: cfg.f64("schedule.s_x")?,
        s_o: cfg.f64("schedule.s_o")?,
        d_x: dims.x,
        d_o: dims.o,
        d_z: dims.z,
        eta0: cfg.f64("schedule.eta0")?,
        eta1: cfg.f64("schedule.eta1")?,
        sigma: cfg.f64("dgp.sigma")?,
    })
}

fn tuning(cfg: &RunConfig, dims: kivo::estimator::Dims) -> Result<Tuning, CliError> {
    let theory = |cfg: &RunConfig| -> Result<TheoryTuning, CliError> {
        Ok(TheoryTuning {
            rate: rate_spec(cfg, dims)?,
            zeta: cfg.f64("schedule.zeta")?,
            form: XiForm::from_name(cfg.raw("schedule.xi_form")).map_err(|e| ConfigError::Invalid {
                key: "schedule.xi_form".into(),
                reason: e.to_string(),
            })?,
            scale_x: cfg.f64("schedule.scale_x")?,
            scale_o: cfg.f64("schedule.scale_o")?,
            xi: cfg.auto_f64("fit.xi")?,
        })
    };
    Ok(match cfg.choice("schedule.mode", &["theory", "cv", "fixed"])? {
        "theory" => Tuning::Theory(theory(cfg)?),
        "cv" => Tuning::Cv(theory(cfg)?),
        _ => Tuning::Fixed {
            gamma_x: cfg.f64("fit.gamma_x")?,
            gamma_o: cfg.f64("fit.gamma_o")?,
            lambda: cfg.auto_f64("fit.lambda")?,
            xi: cfg.auto_f64("fit.xi")?,
        },
    })
}

fn variant(cfg: &RunConfig) -> Result<Variant, CliError> {
    let v = cfg.choice("fit.variant", &["kivo", "naive"])?;
    Ok(Variant::from_name(v)?)
}

fn dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let n = cfg.usize("dgp.n")?;
    let n_tilde = cfg.auto_usize("dgp.n_tilde")?.unwrap_or(n);
    Ok(dgp(cfg)?.dataset(n, n_tilde, cfg.u64("dgp.seed")?, cfg.u64("dgp.replicate")?)?)
}

pub fn simulate(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let data = dataset(&cfg)?;
    let out = common.out.as_deref();
    let mut w = output(out)?;
    write_csv_to(&data, &mut w).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::Io {
            path: out.unwrap_or(Path::new("<stdout>")).to_path_buf(),
            source,
        },
        other => CliError::Usage(format!("{other:?}")),
    })?;
    finish(w, out)
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn points_header(dx: usize, dobs: usize, last: &str) -> Vec<String> {
    let mut h: Vec<String> = (1..=dx).map(|i| format!("x{i}")).collect();
    h.extend((1..=dobs).map(|i| format!("o{i}")));
    h.push(last.to_string());
    h
}

fn write_predictions(out: Option<&Path>, x: &Points, o: &Points, values: &[f64]) -> Result<(), CliError> {
    let w = output(out)?;
    let mut csv = csv::Writer::from_writer(w);
    let err = |e: csv::Error| CliError::Usage(format!("writing predictions: {e}"));
    csv.write_record(points_header(x.dim(), o.dim(), "prediction")).map_err(err)?;
    for (i, v) in values.iter().enumerate() {
        let mut rec: Vec<String> = x.row(i).iter().map(|&a| fmt(a)).collect();
        rec.extend(o.row(i).iter().map(|&a| fmt(a)));
        rec.push(fmt(*v));
        csv.write_record(&rec).map_err(err)?;
    }
    let w = csv.into_inner().map_err(|e| CliError::Usage(format!("writing predictions: {e}")))?;
    finish(w, out)
}

fn stage2_points(data: &Dataset, path: &Path) -> Result<(Points, Points), CliError> {
    let x = data.stage2.x.clone().ok_or_else(|| {
        CliError::Kivo(KivoError::Format {
            path: path.to_path_buf(),
            message: "stage-2 rows need treatment values".into(),
        })
    })?;
    Ok((x, data.stage2.o.clone()))
}

pub fn fit(common: &Common, data: Option<PathBuf>, model: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let data_path = required_path(data, &cfg, "io.data", "a dataset")?;
    let model_path = required_path(model, &cfg, "io.model", "a model output path")?;
    let data = read_csv(&data_path)?;
    let tuned = fit_tuned(&data, &stage1(&cfg)?, &tuning(&cfg, data.dims)?, variant(&cfg)?)?;
    log::info!(
        "gamma_x = {}, gamma_o = {}, lambda = {}, xi = {}",
        tuned.hyper.gamma_x,
        tuned.hyper.gamma_o,
        tuned.hyper.lambda,
        tuned.hyper.xi
    );
    model_file::save(&tuned.model, &model_path)?;
    if let Some(out) = common.out.as_deref() {
        let (x, o) = stage2_points(&data, &data_path)?;
        let fitted = tuned.model.predict_batch(&x, &o)?;
        write_predictions(Some(out), &x, &o, fitted.as_slice())?;
    }
    Ok(())
}

/// Query points: a CSV with columns `x1..,o1..` matching the model.
fn read_query(path: &Path, dx: usize, dobs: usize) -> Result<(Points, Points), CliError> {
    let fail = |line: usize, message: String| {
        CliError::Kivo(KivoError::Parse {
            path: path.to_path_buf(),
            line,
            column: String::new(),
            message,
        })
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => fail(1, format!("{other:?}")),
    })?;
    let want = points_header(dx, dobs, "");
    let want = &want[..dx + dobs];
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| fail(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != want {
        return Err(fail(1, format!("expected columns {}", want.join(","))));
    }
    let (mut xs, mut os) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| fail(i + 2, e.to_string()))?;
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| fail(i + 2, format!("`{cell}` is not a number")))?;
            if c < dx {
                xs.push(v);
            } else {
                os.push(v);
            }
        }
    }
    let n = xs.len() / dx.max(1);
    let o = if dobs == 0 {
        Points::empty_dim(n)
    } else {
        Points::new(dobs, os)?
    };
    Ok((Points::new(dx, xs)?, o))
}

pub fn predict(
    common: &Common,
    model: Option<PathBuf>,
    data: Option<PathBuf>,
    query: Option<PathBuf>,
) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let model_path = required_path(model, &cfg, "io.model", "a model file")?;
    let model = model_file::load(&model_path)?;
    let (dx, dobs) = model.dims();
    let (x, o) = match (query.or_else(|| cfg.path("io.query").map(PathBuf::from)), data) {
        (Some(q), _) => read_query(&q, dx, dobs)?,
        (None, data) => {
            let path = data
                .or_else(|| cfg.path("io.data").map(PathBuf::from))
                .ok_or_else(|| CliError::Usage("query points required: pass --query or --data".into()))?;
            stage2_points(&read_csv(&path)?, &path)?
        }
    };
    let values = model.predict_batch(&x, &o)?;
    write_predictions(common.out.as_deref(), &x, &o, values.as_slice())
}

pub fn cv(common: &Common, data: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let data_path = required_path(data, &cfg, "io.data", "a dataset")?;
    let data = read_csv(&data_path)?;
    let st1 = stage1(&cfg)?;
    let rate = rate_spec(&cfg, data.dims)?;
    let s = schedule(
        data.n(),
        data.n_tilde(),
        &rate,
        st1.nu,
        cfg.f64("schedule.zeta")?,
        XiForm::from_name(cfg.raw("schedule.xi_form"))?,
    )?;
    let xi = cfg
        .auto_f64("fit.xi")?
        .or(s.xi)
        .ok_or_else(|| CliError::Usage("the schedule leaves the stage-1 ridge undefined; set `fit.xi`".into()))?;
    let kz = kivo::KernelSpec::matern(st1.nu, data.dims.z, st1.ls_z)?;
    let ko1 = kivo::KernelSpec::matern(st1.nu, data.dims.o, st1.ls_o)?;
    let s1 = kivo::estimator::fit_stage1(&data, &kz, &ko1, xi)?;
    let grid = default_grid(
        cfg.f64("schedule.scale_x")? * s.gamma_x,
        cfg.f64("schedule.scale_o")? * s.gamma_o,
        data.n(),
    );
    let res = cv_select(&data, &s1, &grid, variant(&cfg)?)?;
    let out = common.out.as_deref();
    let mut w = output(out)?;
    write_cv_table(&res.table, &mut w).map_err(io_error(out.unwrap_or(Path::new("<stdout>"))))?;
    finish(w, out)
}

fn bench_spec(cfg: &RunConfig) -> Result<BenchSpec, CliError> {
    let dgp = dgp(cfg)?;
    Ok(BenchSpec {
        dgp,
        tuning: tuning(cfg, dgp.dims())?,
        n_list: cfg.list("bench.n_list")?,
        seeds: (0..cfg.u64("bench.replicates")?).collect(),
        master_seed: cfg.u64("dgp.seed")?,
        tilde_ratio: cfg.f64("bench.tilde_ratio")?,
        eval_points: cfg.usize("bench.eval_points")?,
        stage1: stage1(cfg)?,
    })
}

pub fn rates(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let report = rate_sweep(&bench_spec(&cfg)?)?;
    let out = common.out.as_deref();
    let mut w = output(out)?;
    report.write_rows_csv(&mut w)?;
    let summary_path = sibling(out, "summary.csv");
    if summary_path.is_some() {
        finish(w, out)?;
        w = output(summary_path.as_deref())?;
    } else {
        writeln!(w).map_err(io_error(Path::new("<stdout>")))?;
    }
    report.write_summary_csv(&mut w)?;
    finish(w, summary_path.as_deref())?;
    if let Some(plot) = sibling(out, "plot.dat") {
        let mut w = output(Some(&plot))?;
        report.write_plot_data(&mut w).map_err(io_error(&plot))?;
        finish(w, Some(&plot))?;
    }
    Ok(())
}

pub fn compare(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let report = compare_naive(&bench_spec(&cfg)?)?;
    let out = common.out.as_deref();
    let mut w = output(out)?;
    report.write_csv(&mut w)?;
    finish(w, out)
}

pub fn diagnose(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let k = cfg.u32("diag.k")?;
    let freqs: Vec<u32> = cfg.list("diag.freqs")?;
    let out = common.out.as_deref();
    let mut w = output(out)?;
    contractivity_probe(k, &freqs)?.write_csv(&mut w)?;

    let samples = cfg.usize("diag.mc_samples")?;
    let mc_path = sibling(out, "mc.csv");
    if samples > 0 {
        let table = contractivity_probe_mc(k, &freqs, cfg.f64("dgp.a")?, samples, cfg.u64("dgp.seed")?)?;
        if mc_path.is_some() {
            let mut m = output(mc_path.as_deref())?;
            table.write_csv(&mut m)?;
            finish(m, mc_path.as_deref())?;
        } else {
            writeln!(w).map_err(io_error(Path::new("<stdout>")))?;
            table.write_csv(&mut w)?;
        }
    }

    let grid = cfg.usize("diag.grid")?;
    let spec = CircleDgpSpec {
        k,
        ..CircleDgpSpec::default()
    };
    let op = build_operator(&spec, grid, grid)?;
    let o_grid: Vec<f64> = (0..32).map(|c| c as f64 / 32.0).collect();
    let tau = std::f64::consts::TAU;
    let checks = [
        ("constant_deviation", partial_identity_check(&op, |_, _| 1.0, &o_grid)?),
        ("covariate_deviation", partial_identity_check(&op, |_, o| (tau * o).cos(), &o_grid)?),
        ("contraction_ratio_m5", normal_contraction(&op, |x, _| (tau * 5.0 * x).cos(), &[0.0])?),
        ("contraction_expected_m5", damping(5, k).powi(2)),
    ];
    let op_path = sibling(out, "operator.csv");
    if op_path.is_some() {
        finish(w, out)?;
        w = output(op_path.as_deref())?;
    } else {
        writeln!(w).map_err(io_error(Path::new("<stdout>")))?;
    }
    let werr = io_error(op_path.as_deref().unwrap_or(Path::new("<stdout>")));
    writeln!(w, "check,value").map_err(&werr)?;
    for (name, v) in checks {
        writeln!(w, "{name},{}", fmt(v)).map_err(&werr)?;
    }
    finish(w, op_path.as_deref())
}

fn bits(cfg: &RunConfig, len: usize) -> Result<Vec<bool>, CliError> {
    let v = cfg.raw("hard.v");
    let bad = |reason: String| {
        CliError::Config(ConfigError::Invalid {
            key: "hard.v".into(),
            reason,
        })
    };
    match v {
        "ones" => Ok(vec![true; len]),
        "zeros" => Ok(vec![false; len]),
        _ => {
            if let Some(i) = v.strip_prefix("codeword:") {
                let i: usize = i.parse().map_err(|_| bad(format!("`{v}` has no codeword index")))?;
                let book = random_codebook(len, 64, cfg.u64("dgp.seed")?);
                book.get(i)
                    .cloned()
                    .ok_or_else(|| bad(format!("codebook has {} words", book.len())))
            } else if let Some(b) = v.strip_prefix("bits:") {
                if b.len() != len {
                    return Err(bad(format!("needs {len} bits, got {}", b.len())));
                }
                b.chars()
                    .map(|c| match c {
                        '0' => Ok(false),
                        '1' => Ok(true),
                        _ => Err(bad(format!("`{c}` is not a bit"))),
                    })
                    .collect()
            } else {
                Err(bad(format!("`{v}` is not ones, zeros, codeword:I or bits:..")))
            }
        }
    }
}

pub fn hard_instance(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let mut spec = HardInstanceSpec {
        resolution: cfg.u32("hard.resolution")?,
        m_order: cfg.u32("hard.m_order")?,
        s_x: cfg.f64("hard.s_x")?,
        s_o: cfg.f64("hard.s_o")?,
        d_x: cfg.usize("hard.d_x")?,
        d_o: cfg.usize("hard.d_o")?,
        zeta: cfg.f64("hard.zeta")?,
        v: Vec::new(),
        eps0: cfg.auto_f64("hard.eps0")?,
    };
    spec.v = bits(&cfg, spec.location_count()?)?;
    let inst = spectral::hard_instance(&spec)?;
    let g = cfg.usize("hard.grid")?;
    if g < 2 {
        return Err(ConfigError::Invalid {
            key: "hard.grid".into(),
            reason: "needs at least 2 points per axis".into(),
        }
        .into());
    }
    let out = common.out.as_deref();
    let werr = io_error(out.unwrap_or(Path::new("<stdout>")));
    let mut w = output(out)?;
    let bitstring: String = spec.v.iter().map(|&b| if b { '1' } else { '0' }).collect();
    for (k, v) in [
        ("resolution", spec.resolution.to_string()),
        ("m_order", spec.m_order.to_string()),
        ("s_x", spec.s_x.to_string()),
        ("s_o", spec.s_o.to_string()),
        ("d_x", spec.d_x.to_string()),
        ("d_o", spec.d_o.to_string()),
        ("zeta", spec.zeta.to_string()),
        ("eps0", fmt(inst.eps0())),
        ("x_scale", fmt(spec.x_scale())),
        ("locations", spec.v.len().to_string()),
        ("v", bitstring),
    ] {
        writeln!(w, "# {k} = {v}").map_err(&werr)?;
    }
    writeln!(w, "{}", points_header(spec.d_x, spec.d_o, "f").join(",")).map_err(&werr)?;
    let axes = spec.d_x + spec.d_o;
    let total = g.pow(axes as u32);
    let mut point = vec![0.0; axes];
    for flat in 0..total {
        let mut idx = flat;
        for a in (0..axes).rev() {
            let t = (idx % g) as f64 / (g - 1) as f64;
            idx /= g;
            point[a] = if a < spec.d_x { t - 0.5 } else { t };
        }
        let f = inst.eval(&point[..spec.d_x], &point[spec.d_x..])?;
        let mut line: Vec<String> = point.iter().map(|&v| fmt(v)).collect();
        line.push(fmt(f));
        writeln!(w, "{}", line.join(",")).map_err(&werr)?;
    }
    finish(w, out)
}
