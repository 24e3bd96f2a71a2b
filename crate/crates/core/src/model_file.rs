//! Line-oriented text container for fitted models.
//!
//! ```text
//! kivo-model v1
//! VARIANT kivo
//! KERNELS 4
//! z matern32 1 1 3.0000000000000000e-1
//! ...
//! LAMBDA <f>
//! XI <f>
//! RECORD <ridge> <jitter> <condition>
//! ALPHA <n>
//! <one value per line>
//! J <rows> <cols>
//! <one row per line>
//! XTILDE <rows> <cols>
//! O <rows> <cols>
//! OTILDE <rows> <cols>
//! ```
//!
//! Floats are written with 17 significant digits, which round-trips every
//! `f64` exactly. Matrices with zero columns have no data lines.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{KivoError, Result};
use crate::estimator::{KernelSet, KivoModel, Variant};
use crate::kernel::{KernelBlock, KernelFamily, KernelSpec, Points};
use crate::solver::RegSolveRecord;

pub const HEADER: &str = "kivo-model v1";

fn f(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_kernel(out: &mut String, slot: &str, spec: &KernelSpec) {
    let _ = write!(out, "{slot} {} {}", spec.family().name(), spec.blocks().len());
    for b in spec.blocks() {
        let _ = write!(out, " {} {}", b.dim, f(b.lengthscale));
    }
    out.push('\n');
}

fn write_points(out: &mut String, name: &str, p: &Points) {
    let _ = writeln!(out, "{name} {} {}", p.len(), p.dim());
    if p.dim() == 0 {
        return;
    }
    for i in 0..p.len() {
        let row: Vec<String> = p.row(i).iter().map(|&v| f(v)).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

/// Serializes a model to the text container.
pub fn to_text(model: &KivoModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER}");
    let _ = writeln!(out, "VARIANT {}", model.variant.name());
    let _ = writeln!(out, "KERNELS 4");
    write_kernel(&mut out, "z", &model.kernels.z);
    write_kernel(&mut out, "o1", &model.kernels.o1);
    write_kernel(&mut out, "x", &model.kernels.x);
    write_kernel(&mut out, "o2", &model.kernels.o2);
    let _ = writeln!(out, "LAMBDA {}", f(model.lambda));
    let _ = writeln!(out, "XI {}", f(model.xi));
    let r = model.fit_record;
    let _ = writeln!(
        out,
        "RECORD {} {} {}",
        f(r.ridge),
        f(r.jitter_applied),
        f(r.condition_estimate)
    );
    let _ = writeln!(out, "ALPHA {}", model.alpha.len());
    for &a in model.alpha.iter() {
        let _ = writeln!(out, "{}", f(a));
    }
    let _ = writeln!(out, "J {} {}", model.j.nrows(), model.j.ncols());
    for row in model.j.row_iter() {
        let row: Vec<String> = row.iter().map(|&v| f(v)).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    write_points(&mut out, "XTILDE", &model.x_tilde);
    write_points(&mut out, "O", &model.o);
    write_points(&mut out, "OTILDE", &model.o_tilde);
    out
}

pub fn save(model: &KivoModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(model)).map_err(|source| KivoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: &Path) -> Result<KivoModel> {
    let text = std::fs::read_to_string(path).map_err(|source| KivoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_text(&text, path)
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    path: PathBuf,
    line: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, column: &str, message: impl Into<String>) -> KivoError {
        KivoError::Parse {
            path: self.path.clone(),
            line: self.line,
            column: column.to_string(),
            message: message.into(),
        }
    }

    fn next(&mut self) -> Result<Vec<&'a str>> {
        match self.lines.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l.split_whitespace().collect())
            }
            None => Err(self.err("-", "unexpected end of file")),
        }
    }

    fn tagged(&mut self, tag: &str, args: usize) -> Result<Vec<&'a str>> {
        let t = self.next()?;
        if t.first() != Some(&tag) || t.len() != args + 1 {
            return Err(self.err(tag, format!("expected `{tag}` with {args} argument(s)")));
        }
        Ok(t[1..].to_vec())
    }

    fn num(&self, s: &str, column: &str) -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| self.err(column, format!("`{s}` is not a number")))
    }

    fn count(&self, s: &str, column: &str) -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| self.err(column, format!("`{s}` is not a count")))
    }

    fn matrix(&mut self, tag: &str) -> Result<DMatrix<f64>> {
        let a = self.tagged(tag, 2)?;
        let r = self.count(a[0], tag)?;
        let c = self.count(a[1], tag)?;
        let mut m = DMatrix::zeros(r, c);
        if c == 0 {
            return Ok(m);
        }
        for i in 0..r {
            let t = self.next()?;
            if t.len() != c {
                return Err(self.err(tag, format!("expected {c} values, found {}", t.len())));
            }
            for (j, s) in t.iter().enumerate() {
                m[(i, j)] = self.num(s, &format!("{tag}[{j}]"))?;
            }
        }
        Ok(m)
    }

    fn points(&mut self, tag: &str) -> Result<Points> {
        let m = self.matrix(tag)?;
        if m.ncols() == 0 {
            return Ok(Points::empty_dim(m.nrows()));
        }
        Points::new(m.ncols(), m.transpose().as_slice().to_vec())
    }

    fn kernel(&mut self, slot: &str) -> Result<KernelSpec> {
        let t = self.next()?;
        if t.len() < 3 || t[0] != slot {
            return Err(self.err(slot, format!("expected kernel slot `{slot}`")));
        }
        let family = KernelFamily::from_name(t[1]).map_err(|e| self.err(slot, e.to_string()))?;
        let nb = self.count(t[2], slot)?;
        if t.len() != 3 + 2 * nb {
            return Err(self.err(slot, "block count does not match the listed blocks"));
        }
        let mut blocks = Vec::with_capacity(nb);
        for b in 0..nb {
            blocks.push(KernelBlock {
                dim: self.count(t[3 + 2 * b], slot)?,
                lengthscale: self.num(t[4 + 2 * b], slot)?,
            });
        }
        KernelSpec::new(family, blocks).map_err(|e| self.err(slot, e.to_string()))
    }
}

pub fn from_text(text: &str, path: &Path) -> Result<KivoModel> {
    let mut r = Reader {
        lines: text.lines().enumerate(),
        path: path.to_path_buf(),
        line: 0,
    };
    let head = r.next()?;
    if head.join(" ") != HEADER {
        return Err(r.err("header", format!("expected `{HEADER}`")));
    }
    let v = r.tagged("VARIANT", 1)?;
    let variant = Variant::from_name(v[0]).map_err(|e| r.err("VARIANT", e.to_string()))?;
    r.tagged("KERNELS", 1)?;
    let kernels = KernelSet {
        z: r.kernel("z")?,
        o1: r.kernel("o1")?,
        x: r.kernel("x")?,
        o2: r.kernel("o2")?,
    };
    let lambda = {
        let a = r.tagged("LAMBDA", 1)?;
        r.num(a[0], "LAMBDA")?
    };
    let xi = {
        let a = r.tagged("XI", 1)?;
        r.num(a[0], "XI")?
    };
    let fit_record = {
        let a = r.tagged("RECORD", 3)?;
        RegSolveRecord {
            ridge: r.num(a[0], "RECORD")?,
            jitter_applied: r.num(a[1], "RECORD")?,
            condition_estimate: r.num(a[2], "RECORD")?,
        }
    };
    let n = {
        let a = r.tagged("ALPHA", 1)?;
        r.count(a[0], "ALPHA")?
    };
    let mut alpha = DVector::zeros(n);
    for i in 0..n {
        let t = r.next()?;
        if t.len() != 1 {
            return Err(r.err("ALPHA", "expected one value per line"));
        }
        alpha[i] = r.num(t[0], "ALPHA")?;
    }
    let j = r.matrix("J")?;
    let x_tilde = r.points("XTILDE")?;
    let o = r.points("O")?;
    let o_tilde = r.points("OTILDE")?;
    let fmt = |message: String| KivoError::Format {
        path: path.to_path_buf(),
        message,
    };
    if j.ncols() != n || j.nrows() != x_tilde.len() || o.len() != n || o_tilde.len() != x_tilde.len() {
        return Err(fmt("section shapes are inconsistent".into()));
    }
    if kernels.x.input_dim() != x_tilde.dim() || kernels.o2.input_dim() != o.dim() {
        return Err(fmt("kernel dimensions do not match the stored points".into()));
    }
    Ok(KivoModel {
        variant,
        alpha,
        j,
        x_tilde,
        o_tilde,
        o,
        kernels,
        lambda,
        xi,
        fit_record,
    })
}
