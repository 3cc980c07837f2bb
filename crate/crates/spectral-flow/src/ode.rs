//! Explicit Dormand–Prince 5(4) integrator with continuous (dense) output.
//!
//! The Hamiltonian module integrates linear systems u' = J A(t) u forward
//! and backward over long windows and later needs the solution at arbitrary
//! interior times (crossing-form quadrature, kernel reconstruction), so each
//! accepted step stores the standard fourth-order continuous extension.
//! A per-step callback supports frame re-orthonormalization; the callback
//! may modify the state, which invalidates the first-same-as-last stage and
//! is handled by recomputing it.

use nalgebra::DVector;

use crate::{Error, Result};

// Dormand–Prince coefficients.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Embedded fourth-order weights.
const E1: f64 = 5179.0 / 57600.0;
const E3: f64 = 7571.0 / 16695.0;
const E4: f64 = 393.0 / 640.0;
const E5: f64 = -92097.0 / 339200.0;
const E6: f64 = 187.0 / 2100.0;
const E7: f64 = 1.0 / 40.0;
// Dense-output weights for the fifth stage polynomial.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step's continuous extension.
#[derive(Debug, Clone)]
pub struct DenseSegment {
    pub t0: f64,
    /// Signed step size; the segment covers `t0 ..= t0 + h`.
    pub h: f64,
    rcont: [DVector<f64>; 5],
}

impl DenseSegment {
    /// Evaluate the continuous extension at `t` (clamped to the segment).
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let theta = if self.h == 0.0 {
            0.0
        } else {
            ((t - self.t0) / self.h).clamp(0.0, 1.0)
        };
        let th1 = 1.0 - theta;
        // r1 + theta (r2 + th1 (r3 + theta (r4 + th1 r5)))
        let mut acc = self.rcont[3].clone() + &self.rcont[4] * th1;
        acc = self.rcont[2].clone() + acc * theta;
        acc = self.rcont[1].clone() + acc * th1;
        self.rcont[0].clone() + acc * theta
    }
}

/// A dense solution trajectory over an integration window (either time
/// direction).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t_start: f64,
    pub t_end: f64,
    segments: Vec<DenseSegment>,
}

impl Trajectory {
    /// Evaluate at `t`; times outside the window clamp to the endpoints.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let dir = if self.t_end >= self.t_start { 1.0 } else { -1.0 };
        let key = (t - self.t_start) * dir;
        // Last segment whose start lies at or before t.
        let idx = self
            .segments
            .partition_point(|seg| (seg.t0 - self.t_start) * dir <= key)
            .saturating_sub(1);
        self.segments[idx].eval(t)
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }
}

/// Integration controls.
#[derive(Debug, Clone)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Store dense output (disable for speed when only the endpoint is used).
    pub dense: bool,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-10,
            atol: 1e-13,
            max_steps: 1_000_000,
            dense: true,
        }
    }
}

/// Integrate `y' = f(t, y)` from `t0` to `t1` (forward or backward).
///
/// `on_accept(step_index, t, y)` runs after each accepted step and may modify
/// `y` in place (used for frame re-orthonormalization).
pub fn integrate<F, C>(
    mut f: F,
    t0: f64,
    t1: f64,
    y0: DVector<f64>,
    opts: &OdeOptions,
    mut on_accept: Option<C>,
) -> Result<(DVector<f64>, Trajectory)>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
    C: FnMut(usize, f64, &mut DVector<f64>) -> bool,
{
    let n = y0.len();
    let span = t1 - t0;
    if span == 0.0 {
        let traj = Trajectory {
            t_start: t0,
            t_end: t1,
            segments: vec![DenseSegment {
                t0,
                h: 0.0,
                rcont: [
                    y0.clone(),
                    DVector::zeros(n),
                    DVector::zeros(n),
                    DVector::zeros(n),
                    DVector::zeros(n),
                ],
            }],
        };
        return Ok((y0, traj));
    }
    let dir = span.signum();
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    let mut h = dir * (span.abs() * 1e-4).min(1e-2).max(1e-8);
    let mut segments = Vec::new();
    let mut accepted = 0usize;

    for _ in 0..opts.max_steps {
        if (t - t1) * dir >= 0.0 {
            let traj = Trajectory {
                t_start: t0,
                t_end: t1,
                segments,
            };
            return Ok((y, traj));
        }
        // Do not overshoot the endpoint.
        if (t + h - t1) * dir > 0.0 {
            h = t1 - t;
        }

        let k2 = f(t + C2 * h, &(&y + &k1 * (A21 * h)));
        let k3 = f(t + C3 * h, &(&y + &k1 * (A31 * h) + &k2 * (A32 * h)));
        let k4 = f(
            t + C4 * h,
            &(&y + &k1 * (A41 * h) + &k2 * (A42 * h) + &k3 * (A43 * h)),
        );
        let k5 = f(
            t + C5 * h,
            &(&y + &k1 * (A51 * h) + &k2 * (A52 * h) + &k3 * (A53 * h) + &k4 * (A54 * h)),
        );
        let k6 = f(
            t + h,
            &(&y
                + &k1 * (A61 * h)
                + &k2 * (A62 * h)
                + &k3 * (A63 * h)
                + &k4 * (A64 * h)
                + &k5 * (A65 * h)),
        );
        let y_next =
            &y + &k1 * (B1 * h) + &k3 * (B3 * h) + &k4 * (B4 * h) + &k5 * (B5 * h) + &k6 * (B6 * h);
        let k7 = f(t + h, &y_next);
        let y4 = &y
            + &k1 * (E1 * h)
            + &k3 * (E3 * h)
            + &k4 * (E4 * h)
            + &k5 * (E5 * h)
            + &k6 * (E6 * h)
            + &k7 * (E7 * h);

        let mut err_sq = 0.0f64;
        for i in 0..n {
            let scale = opts.atol + opts.rtol * y[i].abs().max(y_next[i].abs());
            let e = (y_next[i] - y4[i]) / scale;
            err_sq += e * e;
        }
        let err = (err_sq / n as f64).sqrt();

        if err <= 1.0 {
            if opts.dense {
                let ydiff = &y_next - &y;
                let bspl = &k1 * h - &ydiff;
                let rcont4 = &ydiff - &k7 * h - &bspl;
                let rcont5 = (&k1 * D1 + &k3 * D3 + &k4 * D4 + &k5 * D5 + &k6 * D6 + &k7 * D7) * h;
                segments.push(DenseSegment {
                    t0: t,
                    h,
                    rcont: [y.clone(), ydiff, bspl, rcont4, rcont5],
                });
            }
            t += h;
            y = y_next;
            k1 = k7; // first-same-as-last
            accepted += 1;
            if let Some(cb) = on_accept.as_mut() {
                if cb(accepted, t, &mut y) {
                    // State was modified; the cached stage is stale.
                    k1 = f(t, &y);
                }
            }
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
        if h.abs() < 1e-14 * (1.0 + t.abs()) {
            return Err(Error::Numerical(format!(
                "step size underflow at t = {t} during integration"
            )));
        }
    }
    Err(Error::Numerical(format!(
        "integration exceeded {} steps on [{t0}, {t1}]",
        opts.max_steps
    )))
}

/// Convenience: integrate without a callback.
pub fn integrate_plain<F>(
    f: F,
    t0: f64,
    t1: f64,
    y0: DVector<f64>,
    opts: &OdeOptions,
) -> Result<(DVector<f64>, Trajectory)>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    integrate(
        f,
        t0,
        t1,
        y0,
        opts,
        None::<fn(usize, f64, &mut DVector<f64>) -> bool>,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn scalar_endpoint_and_dense_accuracy() {
        let opts = OdeOptions::default();
        let (y_end, traj) =
            integrate_plain(|t, _y| dvector![t.cos()], 0.0, 10.0, dvector![0.0], &opts).unwrap();
        assert!((y_end[0] - 10.0f64.sin()).abs() < 1e-9);
        for i in 0..=100 {
            let t = 0.1 * i as f64;
            let v = traj.eval(t)[0];
            assert!((v - t.sin()).abs() < 1e-8, "t = {t}: {v}");
        }
    }

    #[test]
    fn backward_integration_matches_rotation() {
        let omega = 1.3f64;
        let rhs = move |_t: f64, y: &DVector<f64>| dvector![-omega * y[1], omega * y[0]];
        let opts = OdeOptions::default();
        let y0 = dvector![1.0, 0.0];
        let (y_end, traj) = integrate_plain(rhs, 2.0, -3.0, y0, &opts).unwrap();
        // Solution is rotation by omega * (t - 2) applied to (1, 0).
        let angle = omega * (-3.0 - 2.0);
        assert!((y_end[0] - angle.cos()).abs() < 1e-9);
        assert!((y_end[1] - angle.sin()).abs() < 1e-9);
        let mid = traj.eval(-0.5);
        let mid_angle = omega * (-0.5 - 2.0);
        assert!((mid[0] - mid_angle.cos()).abs() < 1e-8);
        assert!((mid[1] - mid_angle.sin()).abs() < 1e-8);
    }

    #[test]
    fn callback_modification_keeps_integrating_consistently() {
        // Integrate a growing linear system and renormalize every 10 steps;
        // the direction of the state must match the un-normalized run.
        let rhs = |_t: f64, y: &DVector<f64>| dvector![y[0], -0.5 * y[1]];
        let opts = OdeOptions::default();
        let y0 = dvector![1.0, 1.0];
        let (raw, _) = integrate_plain(rhs, 0.0, 5.0, y0.clone(), &opts).unwrap();
        let mut scale_log = 0.0f64;
        let cb = |step: usize, _t: f64, y: &mut DVector<f64>| {
            if step % 10 == 0 {
                let norm = y.norm();
                scale_log += norm.ln();
                *y /= norm;
                true
            } else {
                false
            }
        };
        let (normed, _) = integrate(rhs, 0.0, 5.0, y0, &opts, Some(cb)).unwrap();
        let rebuilt = &normed * scale_log.exp();
        assert!((rebuilt - &raw).norm() < 1e-6 * raw.norm());
    }

    #[test]
    fn dense_output_is_fifth_order_accurate_between_nodes() {
        // A stiff-free nonlinear problem with known solution:
        // y' = y (1 - y), logistic; y(0) = 0.1.
        let rhs = |_t: f64, y: &DVector<f64>| dvector![y[0] * (1.0 - y[0])];
        let opts = OdeOptions {
            rtol: 1e-10,
            atol: 1e-13,
            ..Default::default()
        };
        let (_, traj) = integrate_plain(rhs, 0.0, 8.0, dvector![0.1], &opts).unwrap();
        for i in 1..40 {
            let t = 0.2 * i as f64;
            let exact = 0.1 * t.exp() / (1.0 + 0.1 * (t.exp() - 1.0));
            let got = traj.eval(t)[0];
            assert!((got - exact).abs() < 1e-9, "t = {t}: {got} vs {exact}");
        }
    }
}
