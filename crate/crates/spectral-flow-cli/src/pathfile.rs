//! Plain-text operator-path files.
//!
//! Format (whitespace-separated tokens; `#` starts a comment that runs to
//! the end of the line; blank lines are ignored):
//!
//! ```text
//! n m                  matrix dimension, sample count (m >= 2)
//! lambda0 lambda1      parameter interval, lambda0 < lambda1
//! involution           optional marker, followed by an n x n matrix
//! <n x n entries>      first sample block
//! ...                  m blocks total, at uniformly spaced parameters
//! ```
//!
//! The resulting path interpolates linearly in the parameter between
//! consecutive sample blocks — affine interpolation of symmetric matrices
//! stays symmetric — and carries the exact piecewise-constant difference
//! quotient of the samples as its parameter derivative.

use nalgebra::DMatrix;
use spectral_flow::equivariance::Involution;
use spectral_flow::sflcore::OperatorPath;

use crate::error::{CliError, CliResult};

/// Relative symmetry tolerance for sample blocks: a block is rejected when
/// `max |M - M^T|` exceeds `sym_tol * (1 + max |entry|)`. Accepted blocks
/// are symmetrized exactly before use. The same absolute tolerance gates
/// the involution matrix.
pub const DEFAULT_SYM_TOL: f64 = 1e-8;

/// A parsed operator-path file.
#[derive(Debug, Clone)]
pub struct PathFile {
    pub dim: usize,
    pub lambda0: f64,
    pub lambda1: f64,
    /// Optional involution matrix commuting with every sample.
    pub involution: Option<DMatrix<f64>>,
    /// Symmetrized sample blocks at uniform parameter spacing.
    pub samples: Vec<DMatrix<f64>>,
}

/// Whitespace tokens paired with their 1-based line number.
fn tokenize(text: &str) -> Vec<(usize, &str)> {
    text.lines()
        .enumerate()
        .flat_map(|(i, line)| {
            let body = line.split('#').next().unwrap_or("");
            body.split_whitespace().map(move |tok| (i + 1, tok))
        })
        .collect()
}

struct Cursor<'a> {
    toks: &'a [(usize, &'a str)],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn next(&mut self, what: &str) -> CliResult<(usize, &'a str)> {
        let item = self.toks.get(self.pos).copied().ok_or_else(|| {
            CliError::Invalid(format!("unexpected end of file: expected {what}"))
        })?;
        self.pos += 1;
        Ok(item)
    }

    fn peek(&self) -> Option<&'a str> {
        self.toks.get(self.pos).map(|&(_, t)| t)
    }

    fn usize(&mut self, what: &str) -> CliResult<usize> {
        let (line, tok) = self.next(what)?;
        tok.parse().map_err(|_| {
            CliError::Invalid(format!("line {line}: expected {what}, found {tok:?}"))
        })
    }

    fn f64(&mut self, what: &str) -> CliResult<f64> {
        let (line, tok) = self.next(what)?;
        let value: f64 = tok.parse().map_err(|_| {
            CliError::Invalid(format!("line {line}: expected {what}, found {tok:?}"))
        })?;
        if !value.is_finite() {
            return Err(CliError::Invalid(format!(
                "line {line}: {what} must be finite, found {tok:?}"
            )));
        }
        Ok(value)
    }
}

fn read_matrix(cur: &mut Cursor, dim: usize, what: &str) -> CliResult<DMatrix<f64>> {
    let mut m = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            m[(i, j)] = cur.f64(&format!("entry ({}, {}) of {what}", i + 1, j + 1))?;
        }
    }
    Ok(m)
}

fn symmetry_defect(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Parse an operator-path file; `sym_tol` is the relative symmetry gate for
/// the sample blocks.
pub fn parse_path_file(text: &str, sym_tol: f64) -> CliResult<PathFile> {
    let toks = tokenize(text);
    let mut cur = Cursor { toks: &toks, pos: 0 };

    let dim = cur.usize("the matrix dimension")?;
    let count = cur.usize("the sample count")?;
    if dim == 0 {
        return Err(CliError::Invalid("matrix dimension must be at least 1".into()));
    }
    if count < 2 {
        return Err(CliError::Invalid(
            "sample count must be at least 2 (linear interpolation needs two samples)".into(),
        ));
    }
    let lambda0 = cur.f64("the lower parameter bound")?;
    let lambda1 = cur.f64("the upper parameter bound")?;
    if lambda0 >= lambda1 {
        return Err(CliError::Invalid(format!(
            "parameter interval [{lambda0}, {lambda1}] must be increasing"
        )));
    }

    let involution = if cur.peek() == Some("involution") {
        cur.next("the involution marker")?;
        let sigma = read_matrix(&mut cur, dim, "the involution")?;
        // Symmetric-orthogonal with square identity; rejects e.g. projections.
        Involution::new(sigma.clone(), DEFAULT_SYM_TOL)
            .map_err(|e| CliError::Invalid(e.to_string()))?;
        Some(sigma)
    } else {
        None
    };

    let mut samples = Vec::with_capacity(count);
    for k in 0..count {
        let raw = read_matrix(&mut cur, dim, &format!("sample block {}", k + 1))?;
        let defect = symmetry_defect(&raw);
        let tol = sym_tol * (1.0 + raw.amax());
        if defect > tol {
            return Err(CliError::Invalid(format!(
                "sample block {} is not symmetric: defect {defect:.3e} exceeds tolerance {tol:.3e}",
                k + 1
            )));
        }
        samples.push(0.5 * (&raw + raw.transpose()));
    }

    if let Some(&(line, tok)) = toks.get(cur.pos) {
        return Err(CliError::Invalid(format!(
            "line {line}: trailing data starting at {tok:?} after the final sample block"
        )));
    }

    Ok(PathFile {
        dim,
        lambda0,
        lambda1,
        involution,
        samples,
    })
}

impl PathFile {
    /// Build the interpolating operator path: affine in the parameter
    /// between consecutive samples, with the exact piecewise-constant
    /// difference quotient as derivative.
    pub fn to_operator_path(&self) -> CliResult<OperatorPath> {
        let (l0, l1) = (self.lambda0, self.lambda1);
        let m = self.samples.len();
        let h = (l1 - l0) / (m - 1) as f64;
        let cell = move |lambda: f64| -> (usize, f64) {
            let k = (((lambda - l0) / h).floor() as isize).clamp(0, m as isize - 2) as usize;
            (k, (lambda - (l0 + k as f64 * h)) / h)
        };

        let samples = std::sync::Arc::new(self.samples.clone());
        let for_sampler = samples.clone();
        let sampler = move |lambda: f64| {
            let (k, theta) = cell(lambda);
            &for_sampler[k] * (1.0 - theta) + &for_sampler[k + 1] * theta
        };
        let derivative = move |lambda: f64| {
            let (k, _) = cell(lambda);
            (&samples[k + 1] - &samples[k]) / h
        };

        // Any failure here reflects the file contents, so it maps to the
        // invalid-input exit code rather than the numerical one.
        let mut path = OperatorPath::new(l0, l1, sampler)
            .map_err(|e| CliError::Invalid(e.to_string()))?
            .with_derivative(derivative);
        if let Some(sigma) = &self.involution {
            let sigma = Involution::new(sigma.clone(), DEFAULT_SYM_TOL)
                .map_err(|e| CliError::Invalid(e.to_string()))?;
            path = path
                .with_involution(sigma)
                .map_err(|e| CliError::Invalid(e.to_string()))?;
        }
        Ok(path)
    }

    /// Serialize back to the file format. Floats use the shortest
    /// representation that parses back to the identical value, so a
    /// parse/serialize round trip preserves every sample bit-for-bit.
    /// Exercised by the round-trip tests; kept on the type so programmatic
    /// paths can be exported in the interchange format.
    #[cfg_attr(not(test), allow(dead_code))]
    pub fn serialize(&self) -> String {
        use std::fmt::Write as _;

        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.dim, self.samples.len());
        let _ = writeln!(out, "{} {}", self.lambda0, self.lambda1);
        if let Some(sigma) = &self.involution {
            let _ = writeln!(out, "involution");
            write_matrix(&mut out, sigma);
        }
        for block in &self.samples {
            out.push('\n');
            write_matrix(&mut out, block);
        }
        out
    }
}

#[cfg_attr(not(test), allow(dead_code))]
fn write_matrix(out: &mut String, m: &DMatrix<f64>) {
    use std::fmt::Write as _;

    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{}", m[(i, j)]);
        }
        out.push('\n');
    }
}
