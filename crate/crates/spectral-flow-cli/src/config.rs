//! Run configuration.
//!
//! A configuration file is a TOML document with one flat key-value section
//! per subcommand (`[path]`, `[pde]`, `[ham]`, `[selftest]`) plus the shared
//! sections `[run]` (output directory, parallelism, timestamp, curve
//! resolution) and `[engine]` (core-engine tolerance overrides). Command-line
//! flags override file values.
//!
//! Coefficient functions are never given as expressions; they are chosen
//! from a named registry with numeric parameters:
//!
//! * elliptic-system coefficients (`s1`..`s3` in `[pde]`):
//!   `["constant", c]`, `["affine-lambda", offset, slope]`, and
//!   `["polynomial", coef, xpow, lpow, ...]` (triplets);
//! * Hamiltonian coefficient entries (`entry_<i>_<j>` in `[ham]`): arrays of
//!   pieces `[t_lo, t_hi, "family", params...]`, each active on the time
//!   window `[t_lo, t_hi)` (`-inf`/`inf` are valid TOML floats); overlapping
//!   pieces add. Scalar families of `(lambda, t)`: `constant c`,
//!   `affine-lambda offset slope`, `sin-lambda amp`, `cos-lambda amp`,
//!   `arctan-t amp scale`, `arctan-t-sin-lambda amp scale`,
//!   `arctan-t-cos-lambda amp scale`, `tanh-t amp scale`, and
//!   `gauss-t amp center width`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use spectral_flow::ham::{self, HamiltonianProblem, LimitFn, TimeMatrixFn};
use spectral_flow::pde::{CoefficientFamily, Nonlinearity, PdeProblem, PolyTerm};
use spectral_flow::selftest::SelftestOptions;
use spectral_flow::sflcore::FlowOptions;
use toml::Value;

use crate::error::{CliError, CliResult};
use crate::pathfile::DEFAULT_SYM_TOL;

const SECTIONS: &[&str] = &["run", "engine", "path", "pde", "ham", "selftest"];

/// A parsed configuration document.
pub struct FileConfig {
    root: toml::Table,
}

impl FileConfig {
    pub fn empty() -> FileConfig {
        FileConfig {
            root: toml::Table::new(),
        }
    }

    pub fn load(path: &Path) -> CliResult<FileConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Io(format!("cannot read config file {}: {e}", path.display()))
        })?;
        FileConfig::parse(&text).map_err(|e| match e {
            CliError::Invalid(msg) => {
                CliError::Invalid(format!("config file {}: {msg}", path.display()))
            }
            other => other,
        })
    }

    pub fn parse(text: &str) -> CliResult<FileConfig> {
        let root: toml::Table = text
            .parse()
            .map_err(|e| CliError::Invalid(format!("TOML parse error: {e}")))?;
        for (key, value) in &root {
            if !SECTIONS.contains(&key.as_str()) {
                return Err(CliError::Invalid(format!(
                    "unknown section [{key}]; known sections: {}",
                    SECTIONS.join(", ")
                )));
            }
            if !value.is_table() {
                return Err(CliError::Invalid(format!(
                    "top-level key {key:?} must be a section table"
                )));
            }
        }
        Ok(FileConfig { root })
    }

    fn section(&self, name: &'static str) -> Section<'_> {
        Section {
            name,
            table: self.root.get(name).and_then(Value::as_table),
        }
    }
}

/// A view of one configuration section with typed, validated accessors.
struct Section<'a> {
    name: &'static str,
    table: Option<&'a toml::Table>,
}

impl<'a> Section<'a> {
    fn key_err(&self, key: &str, msg: &str) -> CliError {
        CliError::Invalid(format!("[{}] {key}: {msg}", self.name))
    }

    fn check_keys(&self, allowed: &[&str], extra: impl Fn(&str) -> bool) -> CliResult<()> {
        if let Some(table) = self.table {
            for key in table.keys() {
                if !allowed.contains(&key.as_str()) && !extra(key) {
                    return Err(CliError::Invalid(format!(
                        "[{}] unknown key {key:?}; allowed keys: {}",
                        self.name,
                        allowed.join(", ")
                    )));
                }
            }
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.table.and_then(|t| t.get(key))
    }

    fn f64(&self, key: &str) -> CliResult<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => value_f64(v).map(Some).map_err(|m| self.key_err(key, &m)),
        }
    }

    fn positive_f64(&self, key: &str) -> CliResult<Option<f64>> {
        match self.f64(key)? {
            Some(x) if x.is_finite() && x > 0.0 => Ok(Some(x)),
            Some(_) => Err(self.key_err(key, "must be a positive finite number")),
            None => Ok(None),
        }
    }

    fn usize(&self, key: &str) -> CliResult<Option<usize>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => {
                let i = v
                    .as_integer()
                    .ok_or_else(|| self.key_err(key, "expected an integer"))?;
                usize::try_from(i)
                    .map(Some)
                    .map_err(|_| self.key_err(key, "must be a nonnegative integer"))
            }
        }
    }

    fn u64(&self, key: &str) -> CliResult<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => {
                let i = v
                    .as_integer()
                    .ok_or_else(|| self.key_err(key, "expected an integer"))?;
                u64::try_from(i)
                    .map(Some)
                    .map_err(|_| self.key_err(key, "must be a nonnegative integer"))
            }
        }
    }

    fn bool(&self, key: &str) -> CliResult<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_bool()
                .map(Some)
                .ok_or_else(|| self.key_err(key, "expected true or false")),
        }
    }

    fn str(&self, key: &str) -> CliResult<Option<&'a str>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_str()
                .map(Some)
                .ok_or_else(|| self.key_err(key, "expected a string")),
        }
    }
}

fn value_f64(v: &Value) -> Result<f64, String> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        other => Err(format!("expected a number, found {}", other.type_str())),
    }
}

// ------------------------------------------------------------------ //
// [engine] and [run]
// ------------------------------------------------------------------ //

/// Core-engine options with `[engine]` overrides applied.
pub fn engine_options(cfg: &FileConfig) -> CliResult<FlowOptions> {
    let s = cfg.section("engine");
    s.check_keys(
        &[
            "zero_tol_rel",
            "gap_factor",
            "kernel_tol_rel",
            "lambda_tol_rel",
            "form_zero_rel",
            "initial_subdivisions",
            "max_depth",
            "scan_points",
            "unsplit_partition_max",
        ],
        |_| false,
    )?;
    let mut o = FlowOptions::default();
    if let Some(x) = s.positive_f64("zero_tol_rel")? {
        o.zero_tol_rel = x;
    }
    if let Some(x) = s.positive_f64("gap_factor")? {
        o.gap_factor = x;
    }
    if let Some(x) = s.positive_f64("kernel_tol_rel")? {
        o.kernel_tol_rel = x;
    }
    if let Some(x) = s.positive_f64("lambda_tol_rel")? {
        o.lambda_tol_rel = x;
    }
    if let Some(x) = s.positive_f64("form_zero_rel")? {
        o.form_zero_rel = x;
    }
    if let Some(n) = s.usize("initial_subdivisions")? {
        if n == 0 {
            return Err(s.key_err("initial_subdivisions", "must be at least 1"));
        }
        o.initial_subdivisions = n;
    }
    if let Some(n) = s.usize("max_depth")? {
        if n == 0 {
            return Err(s.key_err("max_depth", "must be at least 1"));
        }
        o.max_depth = n;
    }
    if let Some(n) = s.usize("scan_points")? {
        if n < 3 {
            return Err(s.key_err("scan_points", "must be at least 3"));
        }
        o.scan_points = n;
    }
    if let Some(n) = s.usize("unsplit_partition_max")? {
        o.unsplit_partition_max = n;
    }
    Ok(o)
}

/// Options shared by every subcommand.
pub struct CommonRun {
    /// Output directory for the report and the CSV curves, if any.
    pub out: Option<PathBuf>,
    /// Worker threads for the sample engine; `None` keeps the default.
    pub parallel: Option<usize>,
    /// Whether the report carries a timestamp line.
    pub timestamp: bool,
    /// Uniform parameter samples for the emitted eigenvalue curves.
    pub curve_points: usize,
}

pub fn common_run(
    cfg: &FileConfig,
    out_flag: Option<PathBuf>,
    parallel_flag: Option<usize>,
    no_timestamp_flag: bool,
) -> CliResult<CommonRun> {
    let s = cfg.section("run");
    s.check_keys(&["out", "parallel", "timestamp", "curve_points"], |_| false)?;
    let out = match out_flag {
        Some(dir) => Some(dir),
        None => s.str("out")?.map(PathBuf::from),
    };
    let parallel = match parallel_flag {
        Some(p) => Some(p),
        None => s.usize("parallel")?,
    };
    if parallel == Some(0) {
        return Err(CliError::Invalid(
            "parallelism degree must be at least 1".into(),
        ));
    }
    let timestamp = !no_timestamp_flag && s.bool("timestamp")?.unwrap_or(true);
    let curve_points = s.usize("curve_points")?.unwrap_or(101);
    if curve_points < 2 {
        return Err(s.key_err("curve_points", "must be at least 2"));
    }
    Ok(CommonRun {
        out,
        parallel,
        timestamp,
        curve_points,
    })
}

// ------------------------------------------------------------------ //
// [path]
// ------------------------------------------------------------------ //

pub struct PathRun {
    pub file: PathBuf,
    pub sym_tol: f64,
}

pub fn path_run(cfg: &FileConfig, file_flag: Option<PathBuf>) -> CliResult<PathRun> {
    let s = cfg.section("path");
    s.check_keys(&["file", "sym_tol"], |_| false)?;
    let file = match file_flag {
        Some(f) => f,
        None => s.str("file")?.map(PathBuf::from).ok_or_else(|| {
            CliError::Invalid(
                "no operator-path file given: pass it as an argument or set [path] file".into(),
            )
        })?,
    };
    let sym_tol = match s.positive_f64("sym_tol")? {
        Some(x) => x,
        None => DEFAULT_SYM_TOL,
    };
    Ok(PathRun { file, sym_tol })
}

// ------------------------------------------------------------------ //
// [pde]
// ------------------------------------------------------------------ //

pub struct PdeRun {
    pub problem: PdeProblem,
    /// Preset name, when one was selected.
    pub preset: Option<String>,
    /// Newton branch-search half-width around each detected crossing.
    pub branch_radius: f64,
    /// Branch-search grid points per side.
    pub branch_grid: usize,
}

pub fn pde_run(
    cfg: &FileConfig,
    preset_flag: Option<&str>,
    modes_flag: Option<usize>,
) -> CliResult<PdeRun> {
    let s = cfg.section("pde");
    s.check_keys(
        &[
            "preset",
            "modes",
            "lambda_min",
            "lambda_max",
            "nonlinearity",
            "even",
            "s1",
            "s2",
            "s3",
            "branch_radius",
            "branch_grid",
        ],
        |_| false,
    )?;
    let preset = match preset_flag {
        Some(p) => Some(p.to_owned()),
        None => s.str("preset")?.map(str::to_owned),
    };
    let modes = match modes_flag {
        Some(m) => m,
        None => s.usize("modes")?.unwrap_or(64),
    };
    if modes == 0 {
        return Err(CliError::Invalid("mode count must be at least 1".into()));
    }

    let mut problem = match preset.as_deref() {
        Some("indefinite-cubic") => PdeProblem::indefinite_cubic(modes),
        Some("even-quartic") => PdeProblem::even_quartic(modes),
        Some(other) => {
            return Err(CliError::Invalid(format!(
                "unknown pde preset {other:?}; available presets: indefinite-cubic, even-quartic"
            )));
        }
        None => {
            let families = ["s1", "s2", "s3"].map(|key| coefficient_family(&s, key));
            let [s1, s2, s3] = families;
            let (s1, s2, s3) = (s1?, s2?, s3?);
            let (Some(s1), Some(s2), Some(s3)) = (s1, s2, s3) else {
                return Err(CliError::Invalid(
                    "without a preset, [pde] needs the coefficient families s1, s2, s3 \
                     (Hessian entries F_uu, F_uv, F_vv at the trivial solution)"
                        .into(),
                ));
            };
            let nonlinearity = match s.str("nonlinearity")? {
                None | Some("none") => None,
                Some("indefinite-cubic") => Some(Nonlinearity::IndefiniteCubic),
                Some("even-quartic") => Some(Nonlinearity::EvenQuartic),
                Some(other) => {
                    return Err(s.key_err(
                        "nonlinearity",
                        &format!(
                            "unknown value {other:?}; choose none, indefinite-cubic, even-quartic"
                        ),
                    ));
                }
            };
            let even = match s.bool("even")? {
                Some(flag) => flag,
                None => nonlinearity.is_some_and(|n| n.is_even_in_v()),
            };
            PdeProblem {
                s: [s1, s2, s3],
                nonlinearity,
                modes,
                lambda_range: (0.0, 2.0),
                even_in_v: even,
            }
        }
    };

    if let Some(x) = s.f64("lambda_min")? {
        problem.lambda_range.0 = x;
    }
    if let Some(x) = s.f64("lambda_max")? {
        problem.lambda_range.1 = x;
    }
    let (l0, l1) = problem.lambda_range;
    if !(l0.is_finite() && l1.is_finite() && l0 < l1) {
        return Err(CliError::Invalid(format!(
            "parameter interval [{l0}, {l1}] must be finite and increasing"
        )));
    }

    let branch_radius = s.positive_f64("branch_radius")?.unwrap_or(0.5);
    let branch_grid = s.usize("branch_grid")?.unwrap_or(12);
    if branch_grid == 0 {
        return Err(s.key_err("branch_grid", "must be at least 1"));
    }

    Ok(PdeRun {
        problem,
        preset,
        branch_radius,
        branch_grid,
    })
}

/// One coefficient family from the named registry:
/// `["constant", c]`, `["affine-lambda", offset, slope]`, or
/// `["polynomial", coef, xpow, lpow, ...]`.
fn coefficient_family(s: &Section, key: &str) -> CliResult<Option<CoefficientFamily>> {
    let Some(v) = s.get(key) else {
        return Ok(None);
    };
    let arr = v.as_array().ok_or_else(|| {
        s.key_err(key, "expected an array [\"family-name\", numeric parameters...]")
    })?;
    let name = arr
        .first()
        .and_then(Value::as_str)
        .ok_or_else(|| s.key_err(key, "the first element must be the family name"))?;
    let params: Vec<f64> = arr[1..]
        .iter()
        .map(value_f64)
        .collect::<Result<_, _>>()
        .map_err(|m| s.key_err(key, &m))?;
    if params.iter().any(|p| !p.is_finite()) {
        return Err(s.key_err(key, "parameters must be finite"));
    }
    let family = match name {
        "constant" => {
            let [c] = params[..] else {
                return Err(s.key_err(key, "constant takes 1 parameter: value"));
            };
            CoefficientFamily::Constant(c)
        }
        "affine-lambda" => {
            let [offset, slope] = params[..] else {
                return Err(s.key_err(key, "affine-lambda takes 2 parameters: offset, slope"));
            };
            CoefficientFamily::AffineLambda { offset, slope }
        }
        "polynomial" => {
            if params.is_empty() || params.len() % 3 != 0 {
                return Err(s.key_err(
                    key,
                    "polynomial takes coef, xpow, lpow triplets (at least one)",
                ));
            }
            let terms = params
                .chunks_exact(3)
                .map(|triple| {
                    let (coef, xpow, lpow) = (triple[0], triple[1], triple[2]);
                    let as_pow = |p: f64| -> Result<u32, CliError> {
                        if p.fract() == 0.0 && (0.0..=u32::MAX as f64).contains(&p) {
                            Ok(p as u32)
                        } else {
                            Err(s.key_err(key, "exponents must be nonnegative integers"))
                        }
                    };
                    Ok(PolyTerm {
                        coef,
                        xpow: as_pow(xpow)?,
                        lpow: as_pow(lpow)?,
                    })
                })
                .collect::<CliResult<Vec<_>>>()?;
            CoefficientFamily::Polynomial { terms }
        }
        other => {
            return Err(s.key_err(
                key,
                &format!(
                    "unknown family {other:?}; registry: constant, affine-lambda, polynomial"
                ),
            ));
        }
    };
    Ok(Some(family))
}

// ------------------------------------------------------------------ //
// [ham]
// ------------------------------------------------------------------ //

pub struct HamRun {
    pub problem: HamiltonianProblem,
    pub preset: Option<String>,
    pub scan_points: usize,
    pub convergence: bool,
}

pub fn ham_run(
    cfg: &FileConfig,
    preset_flag: Option<&str>,
    truncation_flag: Option<f64>,
    grid_flag: Option<usize>,
) -> CliResult<HamRun> {
    let s = cfg.section("ham");
    s.check_keys(
        &[
            "preset",
            "dim",
            "truncation",
            "grid",
            "lambda_min",
            "lambda_max",
            "involution",
            "scan_points",
            "convergence",
        ],
        |key| key.starts_with("entry_"),
    )?;
    let preset = match preset_flag {
        Some(p) => Some(p.to_owned()),
        None => s.str("preset")?.map(str::to_owned),
    };
    let truncation = match truncation_flag {
        Some(t) if t.is_finite() && t > 0.0 => Some(t),
        Some(t) => {
            return Err(CliError::Invalid(format!(
                "truncation half-width must be positive, got {t}"
            )));
        }
        None => s.positive_f64("truncation")?,
    };
    let grid = match grid_flag {
        Some(g) => Some(g),
        None => s.usize("grid")?,
    };
    if let Some(g) = grid {
        if g < 2 || g % 2 != 0 {
            return Err(CliError::Invalid(format!(
                "time grid must have an even node count of at least 2, got {g}"
            )));
        }
    }

    let custom_keys = s
        .table
        .map(|t| {
            t.keys()
                .filter(|k| *k == "dim" || *k == "involution" || k.starts_with("entry_"))
                .cloned()
                .collect::<Vec<_>>()
        })
        .unwrap_or_default();

    let mut problem = match preset.as_deref() {
        Some("pejsachowicz-loop") => {
            if let Some(key) = custom_keys.first() {
                return Err(CliError::Invalid(format!(
                    "[ham] key {key:?} conflicts with the preset; presets accept only \
                     truncation, grid, lambda_min, lambda_max, scan_points, convergence"
                )));
            }
            ham::pejsachowicz_loop(
                truncation.unwrap_or(ham::DEFAULT_TRUNCATION),
                grid.unwrap_or(ham::DEFAULT_GRID),
            )
        }
        Some(other) => {
            return Err(CliError::Invalid(format!(
                "unknown ham preset {other:?}; available presets: pejsachowicz-loop"
            )));
        }
        None => custom_ham_problem(&s, truncation, grid)?,
    };

    if let Some(x) = s.f64("lambda_min")? {
        problem.lambda_range.0 = x;
    }
    if let Some(x) = s.f64("lambda_max")? {
        problem.lambda_range.1 = x;
    }
    let (l0, l1) = problem.lambda_range;
    if !(l0.is_finite() && l1.is_finite() && l0 < l1) {
        return Err(CliError::Invalid(format!(
            "parameter interval [{l0}, {l1}] must be finite and increasing"
        )));
    }

    let scan_points = s.usize("scan_points")?.unwrap_or(33);
    if scan_points < 3 {
        return Err(s.key_err("scan_points", "must be at least 3"));
    }
    let convergence = s.bool("convergence")?.unwrap_or(true);

    Ok(HamRun {
        problem,
        preset,
        scan_points,
        convergence,
    })
}

/// Scalar coefficient families of `(lambda, t)` for custom Hamiltonian
/// systems, with closed-form parameter derivatives.
#[derive(Debug, Clone, Copy)]
enum TimeFamily {
    Constant(f64),
    AffineLambda { offset: f64, slope: f64 },
    SinLambda { amp: f64 },
    CosLambda { amp: f64 },
    ArctanT { amp: f64, scale: f64 },
    ArctanTSinLambda { amp: f64, scale: f64 },
    ArctanTCosLambda { amp: f64, scale: f64 },
    TanhT { amp: f64, scale: f64 },
    GaussT { amp: f64, center: f64, width: f64 },
}

impl TimeFamily {
    fn parse(name: &str, params: &[f64]) -> Result<TimeFamily, String> {
        let expect = |n: usize, usage: &str| -> Result<(), String> {
            if params.len() == n {
                Ok(())
            } else {
                Err(format!("{name} takes {n} parameter(s): {usage}"))
            }
        };
        match name {
            "constant" => {
                expect(1, "value")?;
                Ok(TimeFamily::Constant(params[0]))
            }
            "affine-lambda" => {
                expect(2, "offset, slope")?;
                Ok(TimeFamily::AffineLambda {
                    offset: params[0],
                    slope: params[1],
                })
            }
            "sin-lambda" => {
                expect(1, "amplitude")?;
                Ok(TimeFamily::SinLambda { amp: params[0] })
            }
            "cos-lambda" => {
                expect(1, "amplitude")?;
                Ok(TimeFamily::CosLambda { amp: params[0] })
            }
            "arctan-t" => {
                expect(2, "amplitude, time scale")?;
                Ok(TimeFamily::ArctanT {
                    amp: params[0],
                    scale: params[1],
                })
            }
            "arctan-t-sin-lambda" => {
                expect(2, "amplitude, time scale")?;
                Ok(TimeFamily::ArctanTSinLambda {
                    amp: params[0],
                    scale: params[1],
                })
            }
            "arctan-t-cos-lambda" => {
                expect(2, "amplitude, time scale")?;
                Ok(TimeFamily::ArctanTCosLambda {
                    amp: params[0],
                    scale: params[1],
                })
            }
            "tanh-t" => {
                expect(2, "amplitude, time scale")?;
                Ok(TimeFamily::TanhT {
                    amp: params[0],
                    scale: params[1],
                })
            }
            "gauss-t" => {
                expect(3, "amplitude, center, width")?;
                if params[2] <= 0.0 {
                    return Err("gauss-t width must be positive".into());
                }
                Ok(TimeFamily::GaussT {
                    amp: params[0],
                    center: params[1],
                    width: params[2],
                })
            }
            other => Err(format!(
                "unknown family {other:?}; registry: constant, affine-lambda, sin-lambda, \
                 cos-lambda, arctan-t, arctan-t-sin-lambda, arctan-t-cos-lambda, tanh-t, gauss-t"
            )),
        }
    }

    fn eval(&self, lambda: f64, t: f64) -> f64 {
        match *self {
            TimeFamily::Constant(c) => c,
            TimeFamily::AffineLambda { offset, slope } => offset + slope * lambda,
            TimeFamily::SinLambda { amp } => amp * lambda.sin(),
            TimeFamily::CosLambda { amp } => amp * lambda.cos(),
            TimeFamily::ArctanT { amp, scale } => amp * (scale * t).atan(),
            TimeFamily::ArctanTSinLambda { amp, scale } => amp * (scale * t).atan() * lambda.sin(),
            TimeFamily::ArctanTCosLambda { amp, scale } => amp * (scale * t).atan() * lambda.cos(),
            TimeFamily::TanhT { amp, scale } => amp * (scale * t).tanh(),
            TimeFamily::GaussT { amp, center, width } => {
                let z = (t - center) / width;
                amp * (-z * z).exp()
            }
        }
    }

    fn d_lambda(&self, lambda: f64, t: f64) -> f64 {
        match *self {
            TimeFamily::Constant(_)
            | TimeFamily::ArctanT { .. }
            | TimeFamily::TanhT { .. }
            | TimeFamily::GaussT { .. } => 0.0,
            TimeFamily::AffineLambda { slope, .. } => slope,
            TimeFamily::SinLambda { amp } => amp * lambda.cos(),
            TimeFamily::CosLambda { amp } => -amp * lambda.sin(),
            TimeFamily::ArctanTSinLambda { amp, scale } => amp * (scale * t).atan() * lambda.cos(),
            TimeFamily::ArctanTCosLambda { amp, scale } => -amp * (scale * t).atan() * lambda.sin(),
        }
    }
}

/// One registered family restricted to a time window `[t_lo, t_hi)`.
#[derive(Debug, Clone, Copy)]
struct TimeTerm {
    t_lo: f64,
    t_hi: f64,
    family: TimeFamily,
}

impl TimeTerm {
    /// Window membership; the infinite endpoints stand for the asymptotic
    /// limits, so `t = +-inf` belongs exactly to windows reaching them.
    fn contains(&self, t: f64) -> bool {
        if t == f64::INFINITY {
            return self.t_hi == f64::INFINITY;
        }
        if t == f64::NEG_INFINITY {
            return self.t_lo == f64::NEG_INFINITY;
        }
        self.t_lo <= t && t < self.t_hi
    }
}

type EntryTable = Vec<((usize, usize), Vec<TimeTerm>)>;

fn assemble_entries(dim: usize, entries: &EntryTable, lambda: f64, t: f64, dlam: bool) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    for &((i, j), ref terms) in entries {
        let value: f64 = terms
            .iter()
            .filter(|term| term.contains(t))
            .map(|term| {
                if dlam {
                    term.family.d_lambda(lambda, t)
                } else {
                    term.family.eval(lambda, t)
                }
            })
            .sum();
        m[(i, j)] = value;
        m[(j, i)] = value;
    }
    m
}

fn custom_ham_problem(
    s: &Section,
    truncation: Option<f64>,
    grid: Option<usize>,
) -> CliResult<HamiltonianProblem> {
    let dim = s.usize("dim")?.ok_or_else(|| {
        CliError::Invalid(
            "[ham] needs either preset = \"...\" or a custom family (dim, lambda_min, \
             lambda_max, entry_<i>_<j> keys)"
                .into(),
        )
    })?;
    if dim < 2 || dim % 2 != 0 {
        return Err(s.key_err("dim", "phase-space dimension must be even and at least 2"));
    }
    let lambda_min = s
        .f64("lambda_min")?
        .ok_or_else(|| s.key_err("lambda_min", "required for a custom family"))?;
    let lambda_max = s
        .f64("lambda_max")?
        .ok_or_else(|| s.key_err("lambda_max", "required for a custom family"))?;
    if !(lambda_min.is_finite() && lambda_max.is_finite() && lambda_min < lambda_max) {
        return Err(CliError::Invalid(format!(
            "parameter interval [{lambda_min}, {lambda_max}] must be finite and increasing"
        )));
    }

    let involution_signs = match s.get("involution") {
        None => None,
        Some(v) => {
            let arr = v
                .as_array()
                .ok_or_else(|| s.key_err("involution", "expected an array of +1/-1 signs"))?;
            let signs = arr
                .iter()
                .map(|e| match e.as_integer() {
                    Some(1) => Ok(1i8),
                    Some(-1) => Ok(-1i8),
                    _ => Err(s.key_err("involution", "entries must be +1 or -1")),
                })
                .collect::<CliResult<Vec<i8>>>()?;
            if signs.len() != dim {
                return Err(s.key_err(
                    "involution",
                    &format!("needs exactly dim = {dim} entries, got {}", signs.len()),
                ));
            }
            Some(signs)
        }
    };

    let mut entries: EntryTable = Vec::new();
    if let Some(table) = s.table {
        for (key, value) in table {
            let Some(indices) = key.strip_prefix("entry_") else {
                continue;
            };
            let parts: Vec<&str> = indices.split('_').collect();
            let pair: Option<(usize, usize)> = match parts[..] {
                [a, b] => a.parse().ok().zip(b.parse().ok()),
                _ => None,
            };
            let Some((i, j)) = pair else {
                return Err(s.key_err(key, "entry keys look like entry_<i>_<j> with 1-based indices"));
            };
            if i == 0 || j == 0 || i > dim || j > dim {
                return Err(s.key_err(key, &format!("indices must lie in 1..={dim}")));
            }
            if i > j {
                return Err(s.key_err(
                    key,
                    "give only the upper triangle (i <= j); the matrix is symmetric",
                ));
            }
            let terms = parse_time_terms(s, key, value)?;
            entries.push(((i - 1, j - 1), terms));
        }
    }
    if entries.is_empty() {
        return Err(CliError::Invalid(
            "a custom [ham] family needs at least one entry_<i>_<j> key".into(),
        ));
    }
    entries.sort_by_key(|&(ij, _)| ij);

    let shared = Arc::new(entries);
    let a: TimeMatrixFn = {
        let entries = shared.clone();
        Arc::new(move |lambda, t| assemble_entries(dim, &entries, lambda, t, false))
    };
    let a_derivative: TimeMatrixFn = {
        let entries = shared.clone();
        Arc::new(move |lambda, t| assemble_entries(dim, &entries, lambda, t, true))
    };
    let limits: LimitFn = {
        let entries = shared;
        Arc::new(move |lambda| {
            (
                assemble_entries(dim, &entries, lambda, f64::NEG_INFINITY, false),
                assemble_entries(dim, &entries, lambda, f64::INFINITY, false),
            )
        })
    };

    Ok(HamiltonianProblem {
        dim,
        a,
        a_derivative: Some(a_derivative),
        limits,
        truncation: truncation.unwrap_or(ham::DEFAULT_TRUNCATION),
        grid: grid.unwrap_or(ham::DEFAULT_GRID),
        lambda_range: (lambda_min, lambda_max),
        involution_signs,
    })
}

/// Parse one `entry_<i>_<j>` value: an array of pieces
/// `[t_lo, t_hi, "family", params...]`.
fn parse_time_terms(s: &Section, key: &str, value: &Value) -> CliResult<Vec<TimeTerm>> {
    let pieces = value
        .as_array()
        .ok_or_else(|| s.key_err(key, "expected an array of [t_lo, t_hi, \"family\", params...] pieces"))?;
    if pieces.is_empty() {
        return Err(s.key_err(key, "needs at least one piece"));
    }
    pieces
        .iter()
        .map(|piece| {
            let arr = piece.as_array().ok_or_else(|| {
                s.key_err(key, "each piece is an array [t_lo, t_hi, \"family\", params...]")
            })?;
            if arr.len() < 3 {
                return Err(s.key_err(key, "each piece needs t_lo, t_hi and a family name"));
            }
            let t_lo = value_f64(&arr[0]).map_err(|m| s.key_err(key, &m))?;
            let t_hi = value_f64(&arr[1]).map_err(|m| s.key_err(key, &m))?;
            if t_lo.is_nan() || t_hi.is_nan() || !(t_lo < t_hi) {
                return Err(s.key_err(key, "piece windows need t_lo < t_hi"));
            }
            let name = arr[2]
                .as_str()
                .ok_or_else(|| s.key_err(key, "the third piece element is the family name"))?;
            let params: Vec<f64> = arr[3..]
                .iter()
                .map(value_f64)
                .collect::<Result<_, _>>()
                .map_err(|m| s.key_err(key, &m))?;
            if params.iter().any(|p| !p.is_finite()) {
                return Err(s.key_err(key, "family parameters must be finite"));
            }
            let family = TimeFamily::parse(name, &params).map_err(|m| s.key_err(key, &m))?;
            Ok(TimeTerm { t_lo, t_hi, family })
        })
        .collect()
}

// ------------------------------------------------------------------ //
// [selftest]
// ------------------------------------------------------------------ //

pub fn selftest_run(
    cfg: &FileConfig,
    seed_flag: Option<u64>,
    flow: FlowOptions,
) -> CliResult<SelftestOptions> {
    let s = cfg.section("selftest");
    s.check_keys(
        &["seed", "agreement_cases", "property_cases", "max_dim"],
        |_| false,
    )?;
    let mut opts = SelftestOptions {
        flow,
        ..SelftestOptions::default()
    };
    if let Some(seed) = seed_flag {
        opts.seed = seed;
    } else if let Some(seed) = s.u64("seed")? {
        opts.seed = seed;
    }
    if let Some(n) = s.usize("agreement_cases")? {
        opts.agreement_cases = n;
    }
    if let Some(n) = s.usize("property_cases")? {
        opts.property_cases = n;
    }
    if let Some(n) = s.usize("max_dim")? {
        opts.max_dim = n;
    }
    Ok(opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> FileConfig {
        FileConfig::parse(text).expect("valid config")
    }

    #[test]
    fn unknown_sections_and_keys_are_rejected() {
        assert!(FileConfig::parse("[sflow]\nx = 1\n").is_err());
        let c = cfg("[engine]\nzero_tol_rel = 1e-9\n");
        assert!(engine_options(&c).is_ok());
        let c = cfg("[engine]\ntypo = 1\n");
        assert!(matches!(engine_options(&c), Err(CliError::Invalid(_))));
        let c = cfg("[pde]\nmodez = 3\n");
        assert!(pde_run(&c, Some("indefinite-cubic"), None).is_err());
    }

    #[test]
    fn tolerance_overrides_must_be_positive() {
        let c = cfg("[engine]\nkernel_tol_rel = -1e-6\n");
        assert!(matches!(engine_options(&c), Err(CliError::Invalid(_))));
        let c = cfg("[engine]\ngap_factor = 0.0\n");
        assert!(matches!(engine_options(&c), Err(CliError::Invalid(_))));
    }

    #[test]
    fn integers_are_accepted_where_floats_are_expected() {
        let c = cfg("[ham]\npreset = \"pejsachowicz-loop\"\ntruncation = 6\ngrid = 120\n");
        let run = ham_run(&c, None, None, None).unwrap();
        assert_eq!(run.problem.truncation, 6.0);
        assert_eq!(run.problem.grid, 120);
    }

    #[test]
    fn flags_override_config_values() {
        let c = cfg("[pde]\npreset = \"even-quartic\"\nmodes = 8\n");
        let run = pde_run(&c, None, Some(16)).unwrap();
        assert_eq!(run.problem.modes, 16);
        assert!(run.problem.even_in_v);

        let c = cfg("[selftest]\nseed = 5\n");
        let opts = selftest_run(&c, Some(9), FlowOptions::default()).unwrap();
        assert_eq!(opts.seed, 9);
        let opts = selftest_run(&c, None, FlowOptions::default()).unwrap();
        assert_eq!(opts.seed, 5);
    }

    #[test]
    fn custom_pde_families_come_from_the_registry() {
        let c = cfg(
            "[pde]\nmodes = 4\ns1 = [\"affine-lambda\", 0.0, 1.0]\ns2 = [\"constant\", 0.0]\n\
             s3 = [\"polynomial\", -1.0, 0, 1]\n",
        );
        let run = pde_run(&c, None, None).unwrap();
        assert_eq!(run.problem.modes, 4);
        assert!(run.problem.nonlinearity.is_none());
        assert_eq!(run.problem.s[0].eval(1.5, 0.3), 1.5);
        assert_eq!(run.problem.s[2].eval(1.5, 0.3), -1.5);

        let c = cfg("[pde]\nmodes = 4\ns1 = [\"sine\", 1.0]\ns2 = [\"constant\", 0.0]\ns3 = [\"constant\", 0.0]\n");
        assert!(matches!(pde_run(&c, None, None), Err(CliError::Invalid(_))));
    }

    #[test]
    fn preset_rejects_conflicting_custom_keys() {
        let c = cfg("[ham]\npreset = \"pejsachowicz-loop\"\ndim = 4\n");
        assert!(matches!(ham_run(&c, None, None, None), Err(CliError::Invalid(_))));
    }

    #[test]
    fn custom_ham_family_assembles_symmetrically() {
        let c = cfg(
            "[ham]\ndim = 2\ntruncation = 5.0\ngrid = 40\nlambda_min = -1.0\nlambda_max = 1.0\n\
             entry_1_2 = [[-inf, 0.0, \"constant\", 1.0], [0.0, inf, \"arctan-t-cos-lambda\", 1.0, 1.0]]\n\
             entry_1_1 = [[0.0, inf, \"arctan-t-sin-lambda\", -1.0, 1.0]]\n\
             entry_2_2 = [[0.0, inf, \"arctan-t-sin-lambda\", 1.0, 1.0]]\n",
        );
        let run = ham_run(&c, None, None, None).unwrap();
        let p = &run.problem;
        p.validate().unwrap();
        let m = (p.a)(0.25, 1.5);
        assert_eq!(m[(0, 1)], m[(1, 0)]);
        assert!((m[(0, 1)] - 1.5f64.atan() * 0.25f64.cos()).abs() < 1e-15);
        assert!((m[(0, 0)] + 1.5f64.atan() * 0.25f64.sin()).abs() < 1e-15);
        // Negative times fall back to the constant piece.
        let m = (p.a)(0.25, -2.0);
        assert_eq!(m[(0, 0)], 0.0);
        assert_eq!(m[(0, 1)], 1.0);
        // Limits evaluate the same pieces at t = +-inf.
        let (am, ap) = (p.limits)(0.25);
        assert_eq!(am[(0, 1)], 1.0);
        assert!((ap[(0, 1)] - std::f64::consts::FRAC_PI_2 * 0.25f64.cos()).abs() < 1e-15);
        // The analytic parameter derivative matches the families.
        let d = (p.a_derivative.as_ref().unwrap())(0.25, 1.5);
        assert!((d[(0, 0)] + 1.5f64.atan() * 0.25f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn custom_ham_family_requires_entries_and_valid_windows() {
        let c = cfg("[ham]\ndim = 2\nlambda_min = 0.0\nlambda_max = 1.0\n");
        assert!(matches!(ham_run(&c, None, None, None), Err(CliError::Invalid(_))));

        let c = cfg(
            "[ham]\ndim = 2\nlambda_min = 0.0\nlambda_max = 1.0\n\
             entry_1_1 = [[1.0, 0.0, \"constant\", 1.0]]\n",
        );
        assert!(matches!(ham_run(&c, None, None, None), Err(CliError::Invalid(_))));

        let c = cfg(
            "[ham]\ndim = 2\nlambda_min = 0.0\nlambda_max = 1.0\n\
             entry_2_1 = [[-inf, inf, \"constant\", 1.0]]\n",
        );
        assert!(matches!(ham_run(&c, None, None, None), Err(CliError::Invalid(_))));
    }
}
