//! Sine-Galerkin discretization of a two-component elliptic system on the
//! interval (0, pi) with Dirichlet boundary conditions.
//!
//! The system couples a forward and a backward component,
//!
//! ```text
//!     -u''(x) = dF/du (lambda, x, u, v),
//!     +v''(x) = dF/dv (lambda, x, u, v),        u(0) = u(pi) = v(0) = v(pi) = 0,
//! ```
//!
//! which is the critical-point equation of the strongly indefinite energy
//!
//! ```text
//!     Phi(u, v) = 1/2 int u'^2 - 1/2 int v'^2 - int F(lambda, x, u, v).
//! ```
//!
//! Working in the sine basis orthonormalized in the H^1_0 inner product,
//! `psi_k = sqrt(2/pi) sin(kx) / k`, the Hessian of `Phi` at the trivial
//! solution becomes an explicit symmetric matrix path in the parameter:
//! its u-block is `I - [a]`, its v-block `-I - [b]`, where `[q]` denotes
//! the basis representation of multiplication by the corresponding second
//! derivative of `F` at zero. Eigenvalues cluster at +-1, so conditioning
//! is flat in the number of modes.
//!
//! When `F` is even in `v` the energy is invariant under `(u, v) -> (u, -v)`
//! and the Hessian path commutes with the involution `diag(I, -I)`; the
//! fixed block is then a classical Dirichlet problem for `u` alone, whose
//! Morse index is computed by [`dirichlet_morse_index`].
//!
//! Coefficients are chosen from a small registry of named families
//! (constant, affine in lambda, polynomial in x and lambda) so problems can
//! be specified in configuration files without an expression language.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::equivariance::Involution;
use crate::linalg;
use crate::quadrature;
use crate::sflcore::{
    equivariant_spectral_flow, Crossing, EquivariantFlow, FlowEngine, FlowOptions, OperatorPath,
    Verdict,
};
use crate::{Error, Result};

/// Residual threshold for accepting a Newton solution.
pub const NEWTON_TOL: f64 = 1e-10;
/// Coefficient norm below which a converged solution counts as trivial.
pub const NOISE_FLOOR: f64 = 1e-6;
/// Initial amplitudes for kernel-direction Newton seeds.
pub const AMPLITUDE_SWEEP: [f64; 3] = [1e-3, 1e-2, 1e-1];

/// A named family of scalar coefficient functions `(lambda, x) -> real`.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientFamily {
    /// Constant in both variables.
    Constant(f64),
    /// `offset + slope * lambda`, independent of `x`.
    AffineLambda { offset: f64, slope: f64 },
    /// `sum of coef * x^xpow * lambda^lpow` terms.
    Polynomial { terms: Vec<PolyTerm> },
}

/// One monomial `coef * x^xpow * lambda^lpow`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyTerm {
    pub coef: f64,
    pub xpow: u32,
    pub lpow: u32,
}

impl CoefficientFamily {
    pub fn zero() -> Self {
        CoefficientFamily::Constant(0.0)
    }

    pub fn eval(&self, lambda: f64, x: f64) -> f64 {
        match self {
            CoefficientFamily::Constant(c) => *c,
            CoefficientFamily::AffineLambda { offset, slope } => offset + slope * lambda,
            CoefficientFamily::Polynomial { terms } => terms
                .iter()
                .map(|t| t.coef * x.powi(t.xpow as i32) * lambda.powi(t.lpow as i32))
                .sum(),
        }
    }

    /// Whether the family does not depend on `x` (enables exact assembly).
    pub fn is_x_independent(&self) -> bool {
        match self {
            CoefficientFamily::Constant(_) | CoefficientFamily::AffineLambda { .. } => true,
            CoefficientFamily::Polynomial { terms } => {
                terms.iter().all(|t| t.xpow == 0 || t.coef == 0.0)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            CoefficientFamily::Constant(c) => *c == 0.0,
            CoefficientFamily::AffineLambda { offset, slope } => *offset == 0.0 && *slope == 0.0,
            CoefficientFamily::Polynomial { terms } => terms.iter().all(|t| t.coef == 0.0),
        }
    }

    /// The parameter derivative, again as a family.
    pub fn d_dlambda(&self) -> CoefficientFamily {
        match self {
            CoefficientFamily::Constant(_) => CoefficientFamily::Constant(0.0),
            CoefficientFamily::AffineLambda { slope, .. } => CoefficientFamily::Constant(*slope),
            CoefficientFamily::Polynomial { terms } => CoefficientFamily::Polynomial {
                terms: terms
                    .iter()
                    .filter(|t| t.lpow > 0)
                    .map(|t| PolyTerm {
                        coef: t.coef * t.lpow as f64,
                        xpow: t.xpow,
                        lpow: t.lpow - 1,
                    })
                    .collect(),
            },
        }
    }
}

/// The gradient nonlinearities available to the Newton branch search; each
/// is the full gradient of an energy density `F(lambda, u, v)` (including
/// its quadratic part).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    /// `F = (lambda/2)(u^2 - v^2) + u^3 v + v^3 u`: indefinite quadratic
    /// part with a cubic coupling that is odd in `v`.
    IndefiniteCubic,
    /// `F = (lambda/2)(u^2 - v^2) - (u^4 + v^4)/4`: same quadratic part with
    /// a quartic self-interaction, even in both components.
    EvenQuartic,
}

impl Nonlinearity {
    /// `(dF/du, dF/dv)` at `(lambda, u, v)`.
    pub fn gradient(&self, lambda: f64, u: f64, v: f64) -> (f64, f64) {
        match self {
            Nonlinearity::IndefiniteCubic => (
                lambda * u + 3.0 * u * u * v + v * v * v,
                -lambda * v + u * u * u + 3.0 * v * v * u,
            ),
            Nonlinearity::EvenQuartic => (lambda * u - u * u * u, -lambda * v - v * v * v),
        }
    }

    /// Second derivatives `(F_uu, F_uv, F_vv)` at `(lambda, u, v)`.
    pub fn hessian(&self, lambda: f64, u: f64, v: f64) -> (f64, f64, f64) {
        match self {
            Nonlinearity::IndefiniteCubic => (
                lambda + 6.0 * u * v,
                3.0 * (u * u + v * v),
                -lambda + 6.0 * u * v,
            ),
            Nonlinearity::EvenQuartic => (lambda - 3.0 * u * u, 0.0, -lambda - 3.0 * v * v),
        }
    }

    /// Whether the underlying energy is even in `v`.
    pub fn is_even_in_v(&self) -> bool {
        matches!(self, Nonlinearity::EvenQuartic)
    }

    /// The Hessian of `F` at `(u, v) = 0` as coefficient families
    /// `(F_uu, F_uv, F_vv)`; both built-in energies have quadratic part
    /// `(lambda/2)(u^2 - v^2)`.
    pub fn linearization(&self) -> [CoefficientFamily; 3] {
        [
            CoefficientFamily::AffineLambda { offset: 0.0, slope: 1.0 },
            CoefficientFamily::zero(),
            CoefficientFamily::AffineLambda { offset: 0.0, slope: -1.0 },
        ]
    }
}

/// A two-component elliptic problem on (0, pi), discretized with `modes`
/// sine modes per component.
#[derive(Debug, Clone)]
pub struct PdeProblem {
    /// `(F_uu, F_uv, F_vv)` of the energy density at the trivial solution.
    pub s: [CoefficientFamily; 3],
    /// Gradient of the energy density, for the nonlinear branch search.
    pub nonlinearity: Option<Nonlinearity>,
    /// Sine modes per component (the path dimension is `2 * modes`).
    pub modes: usize,
    pub lambda_range: (f64, f64),
    /// Asserts that the energy is even in `v`, attaching the involution
    /// `diag(I, -I)` to the assembled path.
    pub even_in_v: bool,
}

impl PdeProblem {
    /// The indefinite cubic-coupling example over `lambda in [0, 2]`.
    pub fn indefinite_cubic(modes: usize) -> PdeProblem {
        PdeProblem {
            s: Nonlinearity::IndefiniteCubic.linearization(),
            nonlinearity: Some(Nonlinearity::IndefiniteCubic),
            modes,
            lambda_range: (0.0, 2.0),
            even_in_v: false,
        }
    }

    /// The even quartic modification over `lambda in [0, 2]`.
    pub fn even_quartic(modes: usize) -> PdeProblem {
        PdeProblem {
            s: Nonlinearity::EvenQuartic.linearization(),
            nonlinearity: Some(Nonlinearity::EvenQuartic),
            modes,
            lambda_range: (0.0, 2.0),
            even_in_v: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.modes == 0 {
            return Err(Error::InvalidInput("mode count must be at least 1".into()));
        }
        let (l0, l1) = self.lambda_range;
        if !l0.is_finite() || !l1.is_finite() || l0 >= l1 {
            return Err(Error::InvalidInput(format!(
                "parameter interval [{l0}, {l1}] must be finite and increasing"
            )));
        }
        if self.even_in_v {
            if !self.s[1].is_zero() {
                return Err(Error::InvalidInput(
                    "an energy even in v must have a diagonal Hessian at zero \
                     (no u-v cross term)"
                        .into(),
                ));
            }
            if let Some(nl) = self.nonlinearity {
                if !nl.is_even_in_v() {
                    return Err(Error::InvalidInput(
                        "nonlinearity is not even in v".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Cosine moments `(1/pi) int_0^pi q(lambda, x) cos(m x) dx` for
/// `m = 0..=max_m`; products of two sine modes reduce to differences of
/// these, so one moment vector assembles a whole multiplication block.
fn cosine_moments(family: &CoefficientFamily, lambda: f64, max_m: usize) -> Vec<f64> {
    (0..=max_m)
        .map(|m| {
            // Two 8-point panels per period of cos(mx) keep the quadrature
            // error at rounding level for smooth coefficients.
            let panels = m.max(8);
            quadrature::gauss_legendre_panels(
                |x| family.eval(lambda, x) * (m as f64 * x).cos(),
                0.0,
                PI,
                panels,
            ) / PI
        })
        .collect()
}

/// The basis representation of multiplication by `q` in the L^2-orthonormal
/// sine basis: entries `int_0^pi q phi_j phi_k dx` for `j, k = 1..=n`.
fn multiplication_block(family: &CoefficientFamily, lambda: f64, n: usize) -> DMatrix<f64> {
    if family.is_x_independent() {
        return DMatrix::identity(n, n) * family.eval(lambda, 0.0);
    }
    let moments = cosine_moments(family, lambda, 2 * n);
    DMatrix::from_fn(n, n, |j, k| {
        let (j, k) = (j + 1, k + 1);
        moments[j.abs_diff(k)] - moments[j + k]
    })
}

/// Assemble one Hessian sample: u-block `I - [a]/(jk)`, v-block
/// `-I - [b]/(jk)`, cross blocks `-[c]/(jk)`, in the H^1_0-orthonormal
/// basis (the `1/(jk)` factors convert the L^2 blocks).
fn assemble_sample(s: &[CoefficientFamily; 3], lambda: f64, n: usize, identity: f64) -> DMatrix<f64> {
    let a = multiplication_block(&s[0], lambda, n);
    let c = multiplication_block(&s[1], lambda, n);
    let b = multiplication_block(&s[2], lambda, n);
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for j in 0..n {
        for k in 0..n {
            let scale = 1.0 / ((j + 1) as f64 * (k + 1) as f64);
            m[(j, k)] = -a[(j, k)] * scale;
            m[(n + j, n + k)] = -b[(j, k)] * scale;
            m[(j, n + k)] = -c[(j, k)] * scale;
            m[(n + k, j)] = m[(j, n + k)];
        }
        m[(j, j)] += identity;
        m[(n + j, n + j)] -= identity;
    }
    m
}

/// Assemble the Hessian path of the problem over its parameter range, with
/// analytic parameter derivative; the `diag(I, -I)` involution is attached
/// when the energy is even in `v`.
pub fn assemble_hessian_path(p: &PdeProblem) -> Result<OperatorPath> {
    p.validate()?;
    let n = p.modes;
    let s = p.s.clone();
    let sd = [s[0].d_dlambda(), s[1].d_dlambda(), s[2].d_dlambda()];
    let (l0, l1) = p.lambda_range;
    let mut path = OperatorPath::new(l0, l1, move |lam| assemble_sample(&s, lam, n, 1.0))?
        .with_derivative(move |lam| assemble_sample(&sd, lam, n, 0.0));
    if p.even_in_v {
        let mut signs = vec![1i8; n];
        signs.extend(std::iter::repeat(-1i8).take(n));
        path = path.with_involution(Involution::from_signs(&signs)?)?;
    }
    Ok(path)
}

/// Morse index of the Dirichlet form `int u'^2 - int a_lambda u^2` on
/// (0, pi) in the first `n` sine modes: the number of negative eigenvalues
/// of `I - [a]/(jk)`.
pub fn dirichlet_morse_index(
    a: &CoefficientFamily,
    lambda: f64,
    n: usize,
) -> Result<usize> {
    if n == 0 {
        return Err(Error::InvalidInput("mode count must be at least 1".into()));
    }
    let block = multiplication_block(a, lambda, n);
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        for k in 0..n {
            m[(j, k)] = -block[(j, k)] / ((j + 1) as f64 * (k + 1) as f64);
        }
        m[(j, j)] += 1.0;
    }
    linalg::morse_index(&m, linalg::default_zero_tol(&m))
}

/// A nontrivial solution located by the branch search.
#[derive(Debug, Clone, Copy)]
pub struct BranchPoint {
    pub lambda: f64,
    /// H^1_0 norm of the solution (2-norm of its coefficient vector).
    pub norm: f64,
    /// Final gradient residual.
    pub residual: f64,
}

/// Outcome of a Newton branch search over a parameter window.
#[derive(Debug, Clone)]
pub struct BranchSearch {
    /// Converged nontrivial solutions, one (the largest) per grid parameter
    /// where any was found, ascending in lambda.
    pub points: Vec<BranchPoint>,
    /// Newton runs attempted.
    pub attempts: usize,
    /// Newton runs that converged (to any solution).
    pub converged: usize,
    /// Newton runs that converged to the trivial solution.
    pub trivial: usize,
}

/// Discretized gradient and Hessian of the energy on a fixed quadrature
/// grid, in H^1_0-orthonormal coordinates.
struct GalerkinSystem {
    n: usize,
    nonlinearity: Nonlinearity,
    /// `psi[(k, q)] = psi_{k+1}(x_q)`.
    psi: DMatrix<f64>,
    weights: Vec<f64>,
}

impl GalerkinSystem {
    fn new(n: usize, nonlinearity: Nonlinearity) -> GalerkinSystem {
        // Cubic terms of an n-mode expansion reach frequency 3n; the
        // projection integrand reaches 4n. Two 8-point panels per period
        // of the highest harmonic keep the projection at rounding accuracy.
        let panels = 4 * n.max(2);
        let (nodes, weights) = quadrature::panel_nodes(0.0, PI, panels);
        let norm = (2.0 / PI).sqrt();
        let psi = DMatrix::from_fn(n, nodes.len(), |k, q| {
            let k1 = (k + 1) as f64;
            norm * (k1 * nodes[q]).sin() / k1
        });
        GalerkinSystem {
            n,
            nonlinearity,
            psi,
            weights,
        }
    }

    fn values(&self, coeff: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let cu = coeff.rows(0, self.n);
        let cv = coeff.rows(self.n, self.n);
        let u = self.psi.transpose() * cu;
        let v = self.psi.transpose() * cv;
        (u, v)
    }

    /// Gradient of the energy: `R_u = c_u - P[F_u]`, `R_v = -c_v - P[F_v]`
    /// where `P` projects onto the basis with quadrature weights.
    fn residual(&self, lambda: f64, coeff: &DVector<f64>) -> DVector<f64> {
        let (u, v) = self.values(coeff);
        let q = u.len();
        let mut gu = DVector::zeros(q);
        let mut gv = DVector::zeros(q);
        for i in 0..q {
            let (du, dv) = self.nonlinearity.gradient(lambda, u[i], v[i]);
            gu[i] = self.weights[i] * du;
            gv[i] = self.weights[i] * dv;
        }
        let pu = &self.psi * gu;
        let pv = &self.psi * gv;
        let mut r = DVector::zeros(2 * self.n);
        for k in 0..self.n {
            r[k] = coeff[k] - pu[k];
            r[self.n + k] = -coeff[self.n + k] - pv[k];
        }
        r
    }

    /// Hessian of the energy at `coeff` (the Jacobian of [`Self::residual`]).
    fn jacobian(&self, lambda: f64, coeff: &DVector<f64>) -> DMatrix<f64> {
        let (u, v) = self.values(coeff);
        let q = u.len();
        let mut wuu = DMatrix::zeros(self.n, q);
        let mut wuv = DMatrix::zeros(self.n, q);
        let mut wvv = DMatrix::zeros(self.n, q);
        for i in 0..q {
            let (fuu, fuv, fvv) = self.nonlinearity.hessian(lambda, u[i], v[i]);
            let w = self.weights[i];
            for k in 0..self.n {
                let p = self.psi[(k, i)];
                wuu[(k, i)] = w * fuu * p;
                wuv[(k, i)] = w * fuv * p;
                wvv[(k, i)] = w * fvv * p;
            }
        }
        let muu = &wuu * self.psi.transpose();
        let muv = &wuv * self.psi.transpose();
        let mvv = &wvv * self.psi.transpose();
        let mut j = DMatrix::zeros(2 * self.n, 2 * self.n);
        for a in 0..self.n {
            for b in 0..self.n {
                j[(a, b)] = -muu[(a, b)];
                j[(a, self.n + b)] = -muv[(a, b)];
                j[(self.n + a, b)] = -muv[(b, a)];
                j[(self.n + a, self.n + b)] = -mvv[(a, b)];
            }
            j[(a, a)] += 1.0;
            j[(self.n + a, self.n + a)] -= 1.0;
        }
        j
    }

    /// Damped Newton iteration from `seed`; returns the solution when the
    /// residual drops below the tolerance.
    fn newton(&self, lambda: f64, seed: &DVector<f64>) -> Option<DVector<f64>> {
        let mut c = seed.clone();
        let mut r = self.residual(lambda, &c);
        for _ in 0..60 {
            let rn = r.norm();
            if rn <= NEWTON_TOL * (1.0 + c.norm()) {
                return Some(c);
            }
            let j = self.jacobian(lambda, &c);
            let step = j.lu().solve(&r)?;
            let mut alpha = 1.0;
            loop {
                let trial = &c - &step * alpha;
                let rt = self.residual(lambda, &trial);
                if rt.norm() <= (1.0 - 0.5 * alpha) * rn {
                    c = trial;
                    r = rt;
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-6 {
                    return None;
                }
            }
        }
        let rn = r.norm();
        (rn <= NEWTON_TOL * (1.0 + c.norm())).then_some(c)
    }
}

/// Search for nontrivial critical points on a parameter grid around
/// `lambda_star`, seeding Newton with scaled kernel directions of the
/// Hessian at `lambda_star` and continuing in amplitude away from the
/// center (converged solutions re-seed the next grid parameter, with a
/// square-root amplitude prediction).
pub fn newton_branch_search(
    p: &PdeProblem,
    lambda_star: f64,
    radius: f64,
    grid: usize,
) -> Result<BranchSearch> {
    p.validate()?;
    let nonlinearity = p.nonlinearity.ok_or_else(|| {
        Error::InvalidInput("branch search requires a nonlinearity".into())
    })?;
    if radius <= 0.0 || grid == 0 {
        return Err(Error::InvalidInput(
            "branch search needs a positive radius and at least one grid point".into(),
        ));
    }
    let n = p.modes;
    let hessian_star = assemble_sample(&p.s, lambda_star, n, 1.0);
    let ktol = 1e-6 * (1.0 + linalg::inf_norm(&hessian_star));
    let dec = linalg::eig_sym(&hessian_star, linalg::SYM_TOL * (1.0 + linalg::inf_norm(&hessian_star)))?;
    let mut kernel_dirs: Vec<DVector<f64>> = (0..2 * n)
        .filter(|&j| dec.eigenvalues[j].abs() <= ktol)
        .map(|j| dec.eigenvectors.column(j).into_owned())
        .collect();
    if kernel_dirs.is_empty() {
        // No kernel at the center: seed with the most nearly singular
        // direction anyway (the search then simply reports emptiness).
        let j = (0..2 * n)
            .min_by(|&a, &b| {
                dec.eigenvalues[a]
                    .abs()
                    .partial_cmp(&dec.eigenvalues[b].abs())
                    .expect("finite eigenvalues")
            })
            .expect("nonempty spectrum");
        kernel_dirs.push(dec.eigenvectors.column(j).into_owned());
    }

    let system = GalerkinSystem::new(n, nonlinearity);
    let mut search = BranchSearch {
        points: Vec::new(),
        attempts: 0,
        converged: 0,
        trivial: 0,
    };

    // Symmetric grid, marched outward on each side of the center so that
    // solutions found close to the center continue the branch outward. A
    // bootstrap ladder of offsets well inside the first grid step lets the
    // small-amplitude seeds latch onto the branch where it is still tiny;
    // ladder solutions only re-seed the march and are not reported.
    let base = radius / grid as f64;
    let ladder = [base / 32.0, base / 8.0, base / 2.0];
    let offsets: Vec<(f64, bool)> = ladder
        .iter()
        .map(|&o| (o, false))
        .chain((1..=grid).map(|i| (base * i as f64, true)))
        .collect();
    for side in [-1.0, 1.0] {
        let mut previous: Option<(f64, DVector<f64>)> = None;
        for &(off, record) in &offsets {
            let lambda = lambda_star + side * off;
            let mut seeds: Vec<DVector<f64>> = Vec::new();
            if let Some((prev_off, sol)) = &previous {
                seeds.push(sol.clone());
                seeds.push(sol * (off / prev_off).sqrt());
            }
            for dir in &kernel_dirs {
                for amp in AMPLITUDE_SWEEP {
                    seeds.push(dir * amp);
                }
            }
            let mut best: Option<DVector<f64>> = None;
            for seed in seeds {
                search.attempts += 1;
                if let Some(sol) = system.newton(lambda, &seed) {
                    search.converged += 1;
                    if sol.norm() <= NOISE_FLOOR {
                        search.trivial += 1;
                    } else if best.as_ref().is_none_or(|b| sol.norm() > b.norm()) {
                        best = Some(sol);
                    }
                }
            }
            if let Some(sol) = best {
                if record {
                    search.points.push(BranchPoint {
                        lambda,
                        norm: sol.norm(),
                        residual: system.residual(lambda, &sol).norm(),
                    });
                }
                previous = Some((off, sol));
            }
        }
    }
    search
        .points
        .sort_by(|a, b| a.lambda.partial_cmp(&b.lambda).expect("finite lambdas"));
    Ok(search)
}

/// Bifurcation analysis of the assembled Hessian path.
#[derive(Debug, Clone)]
pub struct PdeReport {
    pub modes: usize,
    pub lambda_range: (f64, f64),
    /// Spectral flow of the full path (partition method).
    pub flow: i64,
    /// All localized crossings with their form data.
    pub crossings: Vec<Crossing>,
    /// Equivariant flow when the energy is even in `v`.
    pub equivariant: Option<EquivariantFlow>,
    /// Morse indices of the fixed (u-) block at the endpoints, when even.
    pub fixed_morse: Option<(usize, usize)>,
    pub endpoint_margins: (f64, f64),
    pub verdict: Verdict,
    /// Which mechanism produced the verdict.
    pub mechanism: String,
}

/// Assemble the Hessian path and decide bifurcation across the parameter
/// window: endpoint invertibility is required; a nonzero equivariant flow
/// (even case) or nonzero total flow certifies bifurcation.
pub fn bifurcation_report(p: &PdeProblem, opts: &FlowOptions) -> Result<PdeReport> {
    let path = assemble_hessian_path(p)?;
    let engine = FlowEngine::new(&path, opts.clone());
    let endpoint_margins = engine.endpoint_invertibility()?;
    let partition = engine.partition_flow()?;
    let crossings = engine.find_crossings()?;

    let (equivariant, fixed_morse) = if p.even_in_v {
        let eq = equivariant_spectral_flow(&path, opts)?;
        let (l0, l1) = p.lambda_range;
        let m0 = dirichlet_morse_index(&p.s[0], l0, p.modes)?;
        let m1 = dirichlet_morse_index(&p.s[0], l1, p.modes)?;
        if eq.fixed != m0 as i64 - m1 as i64 {
            return Err(Error::PathwayDisagreement(format!(
                "fixed-block flow {} does not equal the Dirichlet Morse-index \
                 difference {} - {}",
                eq.fixed, m0, m1
            )));
        }
        (Some(eq), Some((m0, m1)))
    } else {
        (None, None)
    };

    let (verdict, mechanism) = match (&equivariant, &fixed_morse) {
        (Some(eq), Some((m0, m1))) if !eq.flow.is_zero() => {
            let mech = if m0 != m1 {
                format!(
                    "Morse index of the symmetric block jumps {m0} -> {m1}; \
                     equivariant flow {} is nonzero",
                    eq.flow
                )
            } else {
                format!("equivariant flow {} is nonzero", eq.flow)
            };
            (Verdict::BifurcationCertified, mech)
        }
        (Some(_), _) if partition.flow != 0 => (
            Verdict::BifurcationCertified,
            format!("total spectral flow {} is nonzero", partition.flow),
        ),
        (None, _) if partition.flow != 0 => (
            Verdict::BifurcationCertified,
            format!("total spectral flow {} is nonzero", partition.flow),
        ),
        _ => (
            Verdict::Inconclusive,
            "all computed flows vanish; zero flow never certifies absence of \
             bifurcation"
                .to_string(),
        ),
    };

    Ok(PdeReport {
        modes: p.modes,
        lambda_range: p.lambda_range,
        flow: partition.flow,
        crossings,
        equivariant,
        fixed_morse,
        endpoint_margins,
        verdict,
        mechanism,
    })
}
