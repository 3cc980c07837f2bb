//! Randomized self-test of the spectral-flow engine.
//!
//! Runs the defining properties of the (equivariant) spectral flow on
//! seeded random matrix paths and reports violations. The checks mirror the
//! axioms the invariant satisfies:
//!
//! * **method agreement** — the partition count, the crossing-form sum
//!   (when every crossing is regular) and the endpoint Morse difference
//!   return the same integer;
//! * **normalization** — paths of invertible operators have zero flow;
//! * **additivity** — block-diagonal paths add blockwise;
//! * **concatenation** — joining paths at a common junction adds the flows;
//! * **reversal** — running a path backwards negates the flow;
//! * **homotopy invariance** — perturbations vanishing at both endpoints do
//!   not change the flow;
//! * **closed loops** — loops (equal endpoint operators) have zero flow;
//! * **forgetful consistency** — the total coordinate of the equivariant
//!   flow equals the plain flow.
//!
//! Every case is generated from a caller-supplied seed, so a run is
//! reproducible and its summary is deterministic.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sflcore::{
    equivariant_spectral_flow, spectral_flow_crossings, spectral_flow_morse,
    spectral_flow_partition, FlowOptions, OperatorPath,
};
use crate::{Error, Result};

/// Controls for [`run_selftest`].
#[derive(Debug, Clone)]
pub struct SelftestOptions {
    pub seed: u64,
    /// Number of random paths for the three-method agreement check.
    pub agreement_cases: usize,
    /// Cases per structural property.
    pub property_cases: usize,
    /// Largest matrix dimension drawn for the agreement check.
    pub max_dim: usize,
    pub flow: FlowOptions,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        SelftestOptions {
            seed: 42,
            agreement_cases: 500,
            property_cases: 40,
            max_dim: 50,
            flow: FlowOptions::default(),
        }
    }
}

/// Tally of one property across its random cases.
#[derive(Debug, Clone)]
pub struct PropertyOutcome {
    pub name: &'static str,
    pub cases: usize,
    pub violations: usize,
    /// Cases where a précondition failed benignly (for example a
    /// non-regular crossing, which the crossing method must refuse).
    pub skipped: usize,
    /// Description of the first violation, when any.
    pub first_failure: Option<String>,
}

impl PropertyOutcome {
    fn new(name: &'static str) -> Self {
        PropertyOutcome {
            name,
            cases: 0,
            violations: 0,
            skipped: 0,
            first_failure: None,
        }
    }

    fn case(&mut self) {
        self.cases += 1;
    }

    fn skip(&mut self) {
        self.skipped += 1;
    }

    fn violation(&mut self, detail: String) {
        self.violations += 1;
        if self.first_failure.is_none() {
            self.first_failure = Some(detail);
        }
    }

    fn check(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        if !ok {
            self.violation(detail());
        }
    }
}

/// Full result of the property suite.
#[derive(Debug, Clone)]
pub struct SelftestReport {
    pub seed: u64,
    pub outcomes: Vec<PropertyOutcome>,
    pub passed: bool,
}

impl SelftestReport {
    pub fn total_cases(&self) -> usize {
        self.outcomes.iter().map(|o| o.cases).sum()
    }

    pub fn total_violations(&self) -> usize {
        self.outcomes.iter().map(|o| o.violations).sum()
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for o in &self.outcomes {
            write!(
                f,
                "property {}: {} cases, {} violations",
                o.name, o.cases, o.violations
            )?;
            if o.skipped > 0 {
                write!(f, ", {} skipped", o.skipped)?;
            }
            writeln!(f)?;
            if let Some(detail) = &o.first_failure {
                writeln!(f, "  first failure: {detail}")?;
            }
        }
        writeln!(
            f,
            "selftest: seed {}, {} properties, {} cases, {} violations -- {}",
            self.seed,
            self.outcomes.len(),
            self.total_cases(),
            self.total_violations(),
            if self.passed { "ok" } else { "FAILED" }
        )
    }
}

// -------------------------------------------------------------------- //
// Random ingredients
// -------------------------------------------------------------------- //

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.gen_range(-scale..scale);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Random sign pattern guaranteed to contain both signs.
fn random_mixed_signs(rng: &mut ChaCha8Rng, n: usize) -> Vec<i8> {
    loop {
        let signs: Vec<i8> = (0..n).map(|_| if rng.gen() { 1 } else { -1 }).collect();
        if signs.contains(&1) && signs.contains(&-1) {
            return signs;
        }
    }
}

/// Zero the entries coupling coordinates of opposite sign, making the matrix
/// commute with the sign involution.
fn make_equivariant(m: &mut DMatrix<f64>, signs: &[i8]) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if signs[i] != signs[j] {
                m[(i, j)] = 0.0;
            }
        }
    }
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (na, nb) = (a.nrows(), b.nrows());
    let mut m = DMatrix::zeros(na + nb, na + nb);
    m.view_mut((0, 0), (na, na)).copy_from(a);
    m.view_mut((na, na), (nb, nb)).copy_from(b);
    m
}

/// Smooth quadratic path `A + lambda B + lambda^2 C` on `[0, 1]` with its
/// analytic derivative, optionally commuting with a sign involution.
fn quadratic_path(
    mut a: DMatrix<f64>,
    mut b: DMatrix<f64>,
    mut c: DMatrix<f64>,
    signs: Option<&[i8]>,
) -> Result<OperatorPath> {
    if let Some(signs) = signs {
        make_equivariant(&mut a, signs);
        make_equivariant(&mut b, signs);
        make_equivariant(&mut c, signs);
    }
    let (sa, sb, sc) = (a.clone(), b.clone(), c.clone());
    let mut path = OperatorPath::new(0.0, 1.0, move |lam: f64| &sa + &sb * lam + &sc * (lam * lam))?
        .with_derivative(move |lam: f64| &b + &c * (2.0 * lam));
    if let Some(signs) = signs {
        path = path.with_involution(crate::equivariance::Involution::from_signs(signs)?)?;
    }
    Ok(path)
}

fn random_quadratic(
    rng: &mut ChaCha8Rng,
    n: usize,
    signs: Option<&[i8]>,
) -> Result<OperatorPath> {
    let a = random_symmetric(rng, n, 1.0);
    let b = random_symmetric(rng, n, 1.0);
    let c = random_symmetric(rng, n, 1.0);
    quadratic_path(a, b, c, signs)
}

/// An endpoint Morse difference can legitimately refuse a random path whose
/// endpoint spectrum grazes zero; such cases are skipped, not violations.
fn is_endpoint_ambiguity(e: &Error) -> bool {
    matches!(e, Error::NearKernelAmbiguity { .. } | Error::BoundaryEigenvalue { .. })
}

// -------------------------------------------------------------------- //
// Properties
// -------------------------------------------------------------------- //

fn method_agreement(rng: &mut ChaCha8Rng, opts: &SelftestOptions) -> PropertyOutcome {
    let mut out = PropertyOutcome::new("method_agreement");
    for case in 0..opts.agreement_cases {
        out.case();
        let n = rng.gen_range(2..=opts.max_dim.max(2));
        let path = match random_quadratic(rng, n, None) {
            Ok(p) => p,
            Err(e) => {
                out.violation(format!("case {case}: path construction failed: {e}"));
                continue;
            }
        };
        let partition = match spectral_flow_partition(&path, &opts.flow) {
            Ok(p) => p.flow,
            Err(e) => {
                out.violation(format!("case {case} (n = {n}): partition failed: {e}"));
                continue;
            }
        };
        match spectral_flow_morse(&path, &opts.flow) {
            Ok(m) => out.check(m == partition, || {
                format!("case {case} (n = {n}): morse {m} != partition {partition}")
            }),
            Err(e) if is_endpoint_ambiguity(&e) => out.skip(),
            Err(e) => out.violation(format!("case {case} (n = {n}): morse failed: {e}")),
        }
        match spectral_flow_crossings(&path, &opts.flow) {
            Ok((c, _)) => out.check(c == partition, || {
                format!("case {case} (n = {n}): crossings {c} != partition {partition}")
            }),
            Err(Error::NonRegularCrossing { .. }) => out.skip(),
            Err(e) => out.violation(format!("case {case} (n = {n}): crossings failed: {e}")),
        }
    }
    out
}

fn normalization(rng: &mut ChaCha8Rng, opts: &SelftestOptions) -> PropertyOutcome {
    let mut out = PropertyOutcome::new("normalization");
    for case in 0..opts.property_cases {
        out.case();
        let n = rng.gen_range(2..=16);
        let signs = random_mixed_signs(rng, n);
        // Diagonal part bounded away from zero plus a perturbation smaller
        // than the spectral margin: every sampled operator is invertible.
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            let mag = rng.gen_range(1.0..2.0);
            a[(i, i)] = if rng.gen() { mag } else { -mag };
        }
        let mut c = random_symmetric(rng, n, 1.0);
        make_equivariant(&mut c, &signs);
        let fro = c.norm().max(1e-12);
        c *= 0.9 / fro;
        let b = c.clone() * -1.0; // A + lambda(1 - lambda) C, rewritten as a quadratic
        let run = || -> Result<(i64, crate::repring::RepRingElement)> {
            let path = quadratic_path(a.clone(), c.clone(), b.clone(), Some(&signs))?;
            let plain = spectral_flow_partition(&path, &opts.flow)?.flow;
            let eq = equivariant_spectral_flow(&path, &opts.flow)?;
            Ok((plain, eq.flow))
        };
        match run() {
            Ok((plain, eq)) => out.check(plain == 0 && eq.is_zero(), || {
                format!("case {case} (n = {n}): invertible path has flow {plain}, equivariant {eq}")
            }),
            Err(e) => out.violation(format!("case {case} (n = {n}): {e}")),
        }
    }
    out
}

fn additivity(rng: &mut ChaCha8Rng, opts: &SelftestOptions) -> PropertyOutcome {
    let mut out = PropertyOutcome::new("additivity");
    for case in 0..opts.property_cases {
        out.case();
        let n1 = rng.gen_range(2..=8);
        let n2 = rng.gen_range(2..=8);
        let s1 = random_mixed_signs(rng, n1);
        let s2 = random_mixed_signs(rng, n2);
        let parts: Vec<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> = [n1, n2]
            .iter()
            .map(|&n| {
                (
                    random_symmetric(rng, n, 1.0),
                    random_symmetric(rng, n, 1.0),
                    random_symmetric(rng, n, 1.0),
                )
            })
            .collect();
        let run = || -> Result<bool> {
            let p1 = quadratic_path(parts[0].0.clone(), parts[0].1.clone(), parts[0].2.clone(), Some(&s1))?;
            let p2 = quadratic_path(parts[1].0.clone(), parts[1].1.clone(), parts[1].2.clone(), Some(&s2))?;
            let e1 = equivariant_spectral_flow(&p1, &opts.flow)?;
            let e2 = equivariant_spectral_flow(&p2, &opts.flow)?;
            let a = block_diag(&parts[0].0, &parts[1].0);
            let b = block_diag(&parts[0].1, &parts[1].1);
            let c = block_diag(&parts[0].2, &parts[1].2);
            let signs: Vec<i8> = s1.iter().chain(s2.iter()).copied().collect();
            let sum_path = quadratic_path(a, b, c, Some(&signs))?;
            let esum = equivariant_spectral_flow(&sum_path, &opts.flow)?;
            Ok(esum.flow == e1.flow + e2.flow)
        };
        match run() {
            Ok(ok) => out.check(ok, || {
                format!("case {case} ({n1} + {n2}): block-diagonal flow is not the blockwise sum")
            }),
            Err(e) => out.violation(format!("case {case} ({n1} + {n2}): {e}")),
        }
    }
    out
}

fn concatenation(rng: &mut ChaCha8Rng, opts: &SelftestOptions) -> PropertyOutcome {
    let mut out = PropertyOutcome::new("concatenation");
    for case in 0..opts.property_cases {
        out.case();
        let n = rng.gen_range(2..=12);
        let a = random_symmetric(rng, n, 1.0);
        let b = random_symmetric(rng, n, 1.0);
        let c = random_symmetric(rng, n, 1.0);
        let run = || -> Result<(i64, i64, i64)> {
            let (a1, b1) = (a.clone(), b.clone());
            let first = OperatorPath::new(0.0, 1.0, move |lam: f64| &a1 * (1.0 - lam) + &b1 * lam)?;
            let (b2, c2) = (b.clone(), c.clone());
            let second = OperatorPath::new(0.0, 1.0, move |lam: f64| &b2 * (1.0 - lam) + &c2 * lam)?;
            let (a3, b3, c3) = (a.clone(), b.clone(), c.clone());
            let joined = OperatorPath::new(0.0, 2.0, move |lam: f64| {
                if lam <= 1.0 {
                    &a3 * (1.0 - lam) + &b3 * lam
                } else {
                    &b3 * (2.0 - lam) + &c3 * (lam - 1.0)
                }
            })?;
            Ok((
                spectral_flow_partition(&first, &opts.flow)?.flow,
                spectral_flow_partition(&second, &opts.flow)?.flow,
                spectral_flow_partition(&joined, &opts.flow)?.flow,
            ))
        };
        match run() {
            Ok((f1, f2, fj)) => out.check(fj == f1 + f2, || {
                format!("case {case} (n = {n}): joined flow {fj} != {f1} + {f2}")
            }),
            Err(e) => out.violation(format!("case {case} (n = {n}): {e}")),
        }
    }
    out
}

fn reversal(rng: &mut ChaCha8Rng, opts: &SelftestOptions) -> PropertyOutcome {
    let mut out = PropertyOutcome::new("reversal");
    for case in 0..opts.property_cases {
        out.case();
        let n = rng.gen_range(2..=12);
        let a = random_symmetric(rng, n, 1.0);
        let b = random_symmetric(rng, n, 1.0);
        let c = random_symmetric(rng, n, 1.0);
        let run = || -> Result<(i64, i64)> {
            let forward = quadratic_path(a.clone(), b.clone(), c.clone(), None)?;
            let (ra, rb, rc) = (a.clone(), b.clone(), c.clone());
            let backward = OperatorPath::new(0.0, 1.0, move |lam: f64| {
                let mu = 1.0 - lam;
                &ra + &rb * mu + &rc * (mu * mu)
            })?;
            Ok((
                spectral_flow_partition(&forward, &opts.flow)?.flow,
                spectral_flow_partition(&backward, &opts.flow)?.flow,
            ))
        };
        match run() {
            Ok((fwd, bwd)) => out.check(bwd == -fwd, || {
                format!("case {case} (n = {n}): reversed flow {bwd} != -({fwd})")
            }),
            Err(e) => out.violation(format!("case {case} (n = {n}): {e}")),
        }
    }
    out
}

fn homotopy_invariance(rng: &mut ChaCha8Rng, opts: &SelftestOptions) -> PropertyOutcome {
    let mut out = PropertyOutcome::new("homotopy_invariance");
    for case in 0..opts.property_cases {
        out.case();
        let n = rng.gen_range(2..=12);
        let signs = random_mixed_signs(rng, n);
        let a = random_symmetric(rng, n, 1.0);
        let b = random_symmetric(rng, n, 1.0);
        let c = random_symmetric(rng, n, 1.0);
        let mut bump = random_symmetric(rng, n, 1.0);
        make_equivariant(&mut bump, &signs);
        // Deform by lambda (1 - lambda) M, which vanishes at both endpoints:
        // the quadratic coefficients pick up +M and -M.
        let run = || -> Result<bool> {
            let base = quadratic_path(a.clone(), b.clone(), c.clone(), Some(&signs))?;
            let deformed = quadratic_path(
                a.clone(),
                b.clone() + bump.clone(),
                c.clone() - bump.clone(),
                Some(&signs),
            )?;
            let e0 = equivariant_spectral_flow(&base, &opts.flow)?;
            let e1 = equivariant_spectral_flow(&deformed, &opts.flow)?;
            Ok(e0.flow == e1.flow && e0.unsplit == e1.unsplit)
        };
        match run() {
            Ok(ok) => out.check(ok, || {
                format!(
                    "case {case} (n = {n}): flow changed under a deformation vanishing at the endpoints"
                )
            }),
            Err(e) => out.violation(format!("case {case} (n = {n}): {e}")),
        }
    }
    out
}

fn closed_loops_vanish(rng: &mut ChaCha8Rng, opts: &SelftestOptions) -> PropertyOutcome {
    let mut out = PropertyOutcome::new("closed_loop_vanishing");
    for case in 0..opts.property_cases {
        out.case();
        let n = rng.gen_range(2..=12);
        let signs = random_mixed_signs(rng, n);
        let mut a = random_symmetric(rng, n, 1.5);
        let mut m1 = random_symmetric(rng, n, 1.0);
        let mut m2 = random_symmetric(rng, n, 1.0);
        make_equivariant(&mut a, &signs);
        make_equivariant(&mut m1, &signs);
        make_equivariant(&mut m2, &signs);
        let run = || -> Result<(i64, crate::repring::RepRingElement)> {
            let (la, l1, l2) = (a.clone(), m1.clone(), m2.clone());
            let loop_path = OperatorPath::new(0.0, 1.0, move |lam: f64| {
                let phase = std::f64::consts::TAU * lam;
                &la + &l1 * phase.sin() + &l2 * (1.0 - phase.cos())
            })?
            .with_involution(crate::equivariance::Involution::from_signs(&signs)?)?;
            let plain = spectral_flow_partition(&loop_path, &opts.flow)?.flow;
            let eq = equivariant_spectral_flow(&loop_path, &opts.flow)?;
            Ok((plain, eq.flow))
        };
        match run() {
            Ok((plain, eq)) => out.check(plain == 0 && eq.is_zero(), || {
                format!("case {case} (n = {n}): closed loop has flow {plain}, equivariant {eq}")
            }),
            Err(e) => out.violation(format!("case {case} (n = {n}): {e}")),
        }
    }
    out
}

fn forgetful_consistency(rng: &mut ChaCha8Rng, opts: &SelftestOptions) -> PropertyOutcome {
    let mut out = PropertyOutcome::new("forgetful_consistency");
    for case in 0..opts.property_cases {
        out.case();
        let n = rng.gen_range(2..=16);
        let signs = random_mixed_signs(rng, n);
        let mut run = || -> Result<(i64, i64)> {
            let path = random_quadratic(rng, n, Some(&signs))?;
            let eq = equivariant_spectral_flow(&path, &opts.flow)?;
            let plain = spectral_flow_partition(&path, &opts.flow)?.flow;
            Ok((eq.flow.forgetful(), plain))
        };
        match run() {
            Ok((total, plain)) => out.check(total == plain, || {
                format!("case {case} (n = {n}): forgetful total {total} != plain flow {plain}")
            }),
            Err(e) => out.violation(format!("case {case} (n = {n}): {e}")),
        }
    }
    out
}

// -------------------------------------------------------------------- //

/// Run the full property suite with the given seed and sizes.
pub fn run_selftest(opts: &SelftestOptions) -> Result<SelftestReport> {
    if opts.agreement_cases == 0 || opts.property_cases == 0 {
        return Err(Error::InvalidInput(
            "selftest needs at least one case per property".into(),
        ));
    }
    if opts.max_dim < 2 {
        return Err(Error::InvalidInput(format!(
            "selftest max dimension must be at least 2, got {}",
            opts.max_dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let outcomes = vec![
        method_agreement(&mut rng, opts),
        normalization(&mut rng, opts),
        additivity(&mut rng, opts),
        concatenation(&mut rng, opts),
        reversal(&mut rng, opts),
        homotopy_invariance(&mut rng, opts),
        closed_loops_vanish(&mut rng, opts),
        forgetful_consistency(&mut rng, opts),
    ];
    let passed = outcomes.iter().all(|o| o.violations == 0);
    Ok(SelftestReport {
        seed: opts.seed,
        outcomes,
        passed,
    })
}

// -------------------------------------------------------------------- //

#[cfg(test)]
mod tests {
    use super::*;

    fn small_opts(seed: u64) -> SelftestOptions {
        SelftestOptions {
            seed,
            agreement_cases: 12,
            property_cases: 5,
            max_dim: 10,
            ..SelftestOptions::default()
        }
    }

    #[test]
    fn small_suite_passes_with_zero_violations() {
        let report = run_selftest(&small_opts(7)).unwrap();
        assert!(report.passed, "{report}");
        assert_eq!(report.total_violations(), 0);
        assert_eq!(report.outcomes.len(), 8);
        assert_eq!(report.total_cases(), 12 + 7 * 5);
    }

    #[test]
    fn summary_is_deterministic_for_a_fixed_seed() {
        let a = run_selftest(&small_opts(3)).unwrap().to_string();
        let b = run_selftest(&small_opts(3)).unwrap().to_string();
        assert_eq!(a, b);
        assert!(a.contains("selftest: seed 3, 8 properties"));
        assert!(a.trim_end().ends_with("ok"));
    }

    #[test]
    fn invalid_sizes_are_rejected() {
        let opts = SelftestOptions {
            agreement_cases: 0,
            ..SelftestOptions::default()
        };
        assert!(run_selftest(&opts).is_err());
        let opts = SelftestOptions {
            max_dim: 1,
            ..SelftestOptions::default()
        };
        assert!(run_selftest(&opts).is_err());
    }
}
