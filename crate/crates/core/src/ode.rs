//! Dormand–Prince 5(4) integrator with continuous (dense) output.

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            atol: 1e-12,
            rtol: 1e-10,
            max_steps: 200_000,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        if !(self.atol > 0.0 && self.rtol > 0.0 && self.max_steps > 0) {
            return Err(Error::InvalidArgument(format!(
                "tolerances must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// How an integration ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Reached the requested end point.
    Completed,
    /// A caller-supplied stop condition fired.
    Stopped,
    /// The solution left the chart where the right-hand side is defined.
    ChartExit,
}

/// Step schedule: adaptive error control, or replay of a given mesh.
#[derive(Debug, Clone, Copy)]
pub enum Schedule<'a> {
    Adaptive(Tolerances),
    Mesh(&'a [f64]),
}

/// Piecewise quartic interpolant produced by the integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSolution {
    dim: usize,
    knots: Vec<f64>,
    steps: Vec<f64>,
    /// Five coefficient vectors per step, each of length `dim`.
    coef: Vec<f64>,
    end_state: Vec<f64>,
    termination: Termination,
}

impl DenseSolution {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t_start(&self) -> f64 {
        self.knots[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    pub fn termination(&self) -> Termination {
        self.termination
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn segments(&self) -> usize {
        self.knots.len() - 1
    }

    /// Signed step sizes, suitable for replay through [`Schedule::Mesh`].
    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn end_state(&self) -> &[f64] {
        &self.end_state
    }

    pub fn start_state(&self) -> Vec<f64> {
        if self.segments() == 0 {
            return self.end_state.clone();
        }
        self.coef[..self.dim].to_vec()
    }

    /// Whether `t` lies in the covered interval.
    pub fn covers(&self, t: f64) -> bool {
        let (a, b) = (self.t_start(), self.t_end());
        t >= a.min(b) && t <= a.max(b)
    }

    fn locate(&self, t: f64) -> usize {
        let forward = self.t_end() >= self.t_start();
        let m = self.segments();
        let i = self
            .knots
            .partition_point(|k| if forward { *k <= t } else { *k >= t });
        i.saturating_sub(1).min(m - 1)
    }

    /// Interpolated state on segment `i` at local fraction `theta` in `[0, 1]`.
    pub fn eval_segment_into(&self, i: usize, theta: f64, out: &mut [f64]) {
        let d = self.dim;
        let r = &self.coef[5 * d * i..5 * d * (i + 1)];
        let th1 = 1.0 - theta;
        for j in 0..d {
            out[j] = r[j]
                + theta
                    * (r[d + j]
                        + th1 * (r[2 * d + j] + theta * (r[3 * d + j] + th1 * r[4 * d + j])));
        }
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        if self.segments() == 0 {
            out.copy_from_slice(&self.end_state);
            return;
        }
        let i = self.locate(t);
        let (a, b) = (self.knots[i], self.knots[i + 1]);
        self.eval_segment_into(i, (t - a) / (b - a), out);
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }

    /// Exact step endpoint `k` (not interpolated).
    pub fn knot_state(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if k == self.segments() {
            out.copy_from_slice(&self.end_state);
        } else {
            self.eval_segment_into(k, 0.0, &mut out);
        }
        out
    }
}

fn weighted_rms(v: &[f64], y0: &[f64], y1: &[f64], tol: &Tolerances) -> f64 {
    let s: f64 = v
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sk = tol.atol + tol.rtol * a.abs().max(b.abs());
            (e / sk) * (e / sk)
        })
        .sum();
    (s / v.len() as f64).sqrt()
}

fn is_domain(e: &Error) -> bool {
    matches!(e, Error::Domain(_))
}

struct Stepper<F> {
    f: F,
    dim: usize,
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
}

impl<F> Stepper<F>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    /// One trial step from `(t, y)` with `k[0] = f(t, y)`; fills `y1` and
    /// `k[1..7]` and returns the local error vector in `err`.
    fn step(&mut self, t: f64, y: &[f64], h: f64, y1: &mut [f64], err: &mut [f64]) -> Result<()> {
        let d = self.dim;
        for s in 1..7 {
            for j in 0..d {
                let mut acc = 0.0;
                for (r, a) in A[s][..s].iter().enumerate() {
                    acc += a * self.k[r][j];
                }
                self.ytmp[j] = y[j] + h * acc;
            }
            (self.f)(t + C[s] * h, &self.ytmp, &mut self.k[s])?;
            if s == 6 {
                y1.copy_from_slice(&self.ytmp);
            }
        }
        for j in 0..d {
            let mut acc = 0.0;
            for s in 0..7 {
                acc += E[s] * self.k[s][j];
            }
            err[j] = h * acc;
        }
        Ok(())
    }

    fn push_dense(&self, y0: &[f64], y1: &[f64], h: f64, coef: &mut Vec<f64>) {
        let d = self.dim;
        let start = coef.len();
        coef.resize(start + 5 * d, 0.0);
        let r = &mut coef[start..];
        for j in 0..d {
            let dy = y1[j] - y0[j];
            let r3 = h * self.k[0][j] - dy;
            let r4 = dy - h * self.k[6][j] - r3;
            let mut r5 = 0.0;
            for s in 0..7 {
                r5 += D[s] * self.k[s][j];
            }
            r[j] = y0[j];
            r[d + j] = dy;
            r[2 * d + j] = r3;
            r[3 * d + j] = r4;
            r[4 * d + j] = h * r5;
        }
    }
}

/// Integrates `y' = f(t, y)` from `t0` towards `t1` (either direction).
///
/// Errors of kind [`Error::Domain`] raised by `f` mark the chart boundary:
/// the step is retried with a smaller size, and integration ends with
/// [`Termination::ChartExit`] once the step underflows. `stop` is checked
/// after every accepted step. A [`Schedule::Mesh`] takes exactly the given
/// steps, and `t1` is then ignored.
pub fn integrate<F, S>(
    f: F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    schedule: Schedule<'_>,
    mut stop: S,
) -> Result<DenseSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    S: FnMut(f64, &[f64]) -> bool,
{
    let dim = y0.len();
    let mut st = Stepper {
        f,
        dim,
        k: std::array::from_fn(|_| vec![0.0; dim]),
        ytmp: vec![0.0; dim],
    };
    let mut sol = DenseSolution {
        dim,
        knots: vec![t0],
        steps: Vec::new(),
        coef: Vec::new(),
        end_state: y0.to_vec(),
        termination: Termination::Completed,
    };
    if t1 == t0 {
        return Ok(sol);
    }
    let dir = (t1 - t0).signum();
    (st.f)(t0, y0, &mut st.k[0])?;
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut y1 = vec![0.0; dim];
    let mut err = vec![0.0; dim];

    match schedule {
        Schedule::Mesh(steps) => {
            for &h in steps {
                match st.step(t, &y, h, &mut y1, &mut err) {
                    Ok(()) => {}
                    Err(e) if is_domain(&e) => {
                        sol.termination = Termination::ChartExit;
                        break;
                    }
                    Err(e) => return Err(e),
                }
                st.push_dense(&y, &y1, h, &mut sol.coef);
                t += h;
                sol.knots.push(t);
                sol.steps.push(h);
                std::mem::swap(&mut y, &mut y1);
                let k6 = std::mem::take(&mut st.k[6]);
                st.k[0].copy_from_slice(&k6);
                st.k[6] = k6;
                if stop(t, &y) {
                    sol.termination = Termination::Stopped;
                    break;
                }
            }
            sol.end_state = y;
            Ok(sol)
        }
        Schedule::Adaptive(tol) => {
            tol.validate()?;
            let span = (t1 - t0).abs();
            let mut h = dir * initial_step(&mut st, t0, &y, &tol).min(span);
            let h_min = 1e-14 * t0.abs().max(t1.abs()).max(1.0);
            let mut steps = 0usize;
            let mut last_reject = false;
            loop {
                if (t1 - t) * dir <= 0.0 {
                    break;
                }
                let last = (t + h - t1) * dir >= 0.0;
                if last {
                    h = t1 - t;
                }
                steps += 1;
                if steps > tol.max_steps {
                    return Err(Error::StepFailure {
                        lambda: t,
                        reason: format!("exceeded {} steps", tol.max_steps),
                    });
                }
                let norm = match st.step(t, &y, h, &mut y1, &mut err) {
                    Ok(()) => weighted_rms(&err, &y, &y1, &tol),
                    Err(e) if is_domain(&e) => {
                        h *= 0.25;
                        if h.abs() < h_min {
                            sol.termination = Termination::ChartExit;
                            break;
                        }
                        last_reject = true;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                if !norm.is_finite() || norm > 1.0 {
                    let fac = if norm.is_finite() {
                        (0.9 * norm.powf(-0.2)).clamp(0.1, 0.9)
                    } else {
                        0.1
                    };
                    h *= fac;
                    last_reject = true;
                    if h.abs() < h_min {
                        return Err(Error::StepFailure {
                            lambda: t,
                            reason: "step size underflow".into(),
                        });
                    }
                    continue;
                }
                st.push_dense(&y, &y1, h, &mut sol.coef);
                t = if last { t1 } else { t + h };
                sol.knots.push(t);
                sol.steps.push(h);
                std::mem::swap(&mut y, &mut y1);
                let k6 = std::mem::take(&mut st.k[6]);
                st.k[0].copy_from_slice(&k6);
                st.k[6] = k6;
                if stop(t, &y) {
                    sol.termination = Termination::Stopped;
                    break;
                }
                let mut fac = 0.9 * norm.max(1e-10).powf(-0.2);
                fac = fac.clamp(0.2, 5.0);
                if last_reject {
                    fac = fac.min(1.0);
                }
                last_reject = false;
                h *= fac;
            }
            sol.end_state = y;
            Ok(sol)
        }
    }
}

fn initial_step<F>(st: &mut Stepper<F>, t0: f64, y0: &[f64], tol: &Tolerances) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let d0 = weighted_rms(y0, y0, y0, tol);
    let d1 = weighted_rms(&st.k[0], y0, y0, tol);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let y1: Vec<f64> = y0.iter().zip(&st.k[0]).map(|(y, k)| y + h0 * k).collect();
    let mut f1 = vec![0.0; y0.len()];
    if (st.f)(t0 + h0, &y1, &mut f1).is_err() {
        return h0;
    }
    let diff: Vec<f64> = f1.iter().zip(&st.k[0]).map(|(a, b)| a - b).collect();
    let d2 = weighted_rms(&diff, y0, y0, tol) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator(_: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        dy[0] = y[1];
        dy[1] = -y[0];
        Ok(())
    }

    #[test]
    fn harmonic_oscillator_accuracy() {
        let sol = integrate(
            oscillator,
            0.0,
            &[1.0, 0.0],
            10.0,
            Schedule::Adaptive(Tolerances::default()),
            |_, _| false,
        )
        .unwrap();
        assert_eq!(sol.termination(), Termination::Completed);
        assert_eq!(sol.t_end(), 10.0);
        let y = sol.end_state();
        assert!((y[0] - 10f64.cos()).abs() < 1e-9);
        assert!((y[1] + 10f64.sin()).abs() < 1e-9);
    }

    #[test]
    fn dense_output_is_accurate_between_steps() {
        let sol = integrate(
            oscillator,
            0.0,
            &[1.0, 0.0],
            6.0,
            Schedule::Adaptive(Tolerances::default()),
            |_, _| false,
        )
        .unwrap();
        for i in 0..600 {
            let t = i as f64 * 0.01 + 0.0037;
            let y = sol.eval(t);
            assert!((y[0] - t.cos()).abs() < 1e-8, "t = {t}");
        }
        // continuity at knots
        for k in 1..sol.segments() {
            let mut a = [0.0; 2];
            sol.eval_segment_into(k - 1, 1.0, &mut a);
            let b = sol.knot_state(k);
            assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_integration() {
        let sol = integrate(
            oscillator,
            0.0,
            &[1.0, 0.0],
            -3.0,
            Schedule::Adaptive(Tolerances::default()),
            |_, _| false,
        )
        .unwrap();
        assert_eq!(sol.t_end(), -3.0);
        assert!((sol.eval(-1.5)[0] - 1.5f64.cos()).abs() < 1e-9);
        assert!((sol.end_state()[1] - 3f64.sin()).abs() < 1e-9);
    }

    #[test]
    fn mesh_replay_reproduces_adaptive_run() {
        let a = integrate(
            oscillator,
            0.0,
            &[1.0, 0.0],
            4.0,
            Schedule::Adaptive(Tolerances::default()),
            |_, _| false,
        )
        .unwrap();
        let steps = a.steps().to_vec();
        let b = integrate(oscillator, 0.0, &[1.0, 0.0], 4.0, Schedule::Mesh(&steps), |_, _| false)
            .unwrap();
        assert_eq!(a.end_state(), b.end_state());
        assert_eq!(a.segments(), b.segments());
    }

    #[test]
    fn fixed_step_order_is_five() {
        let err = |n: usize| {
            let steps = vec![2.0 / n as f64; n];
            let s = integrate(oscillator, 0.0, &[1.0, 0.0], 2.0, Schedule::Mesh(&steps), |_, _| {
                false
            })
            .unwrap();
            (s.end_state()[0] - 2f64.cos()).abs()
        };
        let order = (err(40) / err(80)).log2();
        assert!(order > 4.5, "order {order}");
    }

    #[test]
    fn chart_exit_and_stop_condition() {
        // y' = 1 defined only for y < 1
        let f = |_: f64, y: &[f64], dy: &mut [f64]| {
            if y[0] >= 1.0 {
                return Err(Error::Domain("edge".into()));
            }
            dy[0] = 1.0;
            Ok(())
        };
        let sol = integrate(
            f,
            0.0,
            &[0.0],
            5.0,
            Schedule::Adaptive(Tolerances::default()),
            |_, _| false,
        )
        .unwrap();
        assert_eq!(sol.termination(), Termination::ChartExit);
        assert!(sol.t_end() < 1.0 && sol.t_end() > 0.99);

        let sol = integrate(
            oscillator,
            0.0,
            &[1.0, 0.0],
            10.0,
            Schedule::Adaptive(Tolerances::default()),
            |_, y| y[0] < 0.0,
        )
        .unwrap();
        assert_eq!(sol.termination(), Termination::Stopped);
        assert!(sol.t_end() > std::f64::consts::FRAC_PI_2);
        assert!(sol.t_end() < 3.0);
    }

    #[test]
    fn rejects_bad_tolerances() {
        let tol = Tolerances {
            atol: 0.0,
            ..Tolerances::default()
        };
        assert!(integrate(oscillator, 0.0, &[1.0, 0.0], 1.0, Schedule::Adaptive(tol), |_, _| {
            false
        })
        .is_err());
    }
}
