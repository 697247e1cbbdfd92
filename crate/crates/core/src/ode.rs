//! Dormand–Prince 5(4) with dense output.

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
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
pub struct Dopri5Options {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    pub h_max: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Dopri5Options {
    pub fn with_tol(tol: f64) -> Self {
        Self { rtol: tol, atol: tol, ..Self::default() }
    }
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-8, h_init: None, h_max: f64::INFINITY, h_min: 1e-14, max_steps: 1_000_000 }
    }
}

/// Continuous extension over one accepted step.
#[derive(Debug, Clone)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    rcont: [Vec<f64>; 5],
}

impl DenseStep {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    /// State at time `t` within the step.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        (0..r1.len())
            .map(|i| r1[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i]))))
            .collect()
    }

    pub fn start(&self) -> &[f64] {
        &self.rcont[0]
    }

    pub fn end(&self) -> Vec<f64> {
        self.rcont[0].iter().zip(&self.rcont[1]).map(|(a, b)| a + b).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Finished,
    /// The observer asked to stop.
    Stopped,
    /// The step size fell below `h_min` while steps kept failing.
    Underflow,
}

#[derive(Debug, Clone)]
pub struct Summary {
    pub t: f64,
    pub y: Vec<f64>,
    pub status: Status,
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
    /// Last error seen before an underflow, if a stage evaluation failed.
    pub last_error: Option<String>,
}

fn error_norm(y0: &[f64], y1: &[f64], err: &[f64], opts: &Dopri5Options) -> f64 {
    let mut s = 0.0;
    for i in 0..y0.len() {
        let sc = opts.atol + opts.rtol * y0[i].abs().max(y1[i].abs());
        s += (err[i] / sc).powi(2);
    }
    (s / y0.len().max(1) as f64).sqrt()
}

/// Integrates `y' = f(t, y)` from `t0` to `t_end > t0`.
///
/// A step is rejected and retried with a smaller size when a stage
/// evaluation returns an error or when `admissible` refuses the new state.
/// `observer` sees every accepted step and may stop the integration.
pub fn dopri5<F, V, O>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    opts: &Dopri5Options,
    mut admissible: V,
    mut observer: O,
) -> Result<Summary>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    V: FnMut(&[f64]) -> bool,
    O: FnMut(&DenseStep) -> Result<Control>,
{
    if !(t_end > t0) {
        return Err(Error::Integration { time: t0, reason: format!("end time {t_end} does not exceed start") });
    }
    let n = y0.len();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut evaluations = 1;
    f(t, &y, &mut k[0])?;

    let mut h = match opts.h_init {
        Some(h) => h,
        None => {
            let sc: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
            let d0 = (y.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n as f64).sqrt();
            let d1 = (k[0].iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n as f64).sqrt();
            let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
            let y1: Vec<f64> = y.iter().zip(&k[0]).map(|(a, b)| a + h0 * b).collect();
            let mut f1 = vec![0.0; n];
            evaluations += 1;
            let h1 = match f(t + h0, &y1, &mut f1) {
                Ok(()) => {
                    let d2 = (f1
                        .iter()
                        .zip(&k[0])
                        .zip(&sc)
                        .map(|((a, b), s)| ((a - b) / s).powi(2))
                        .sum::<f64>()
                        / n as f64)
                        .sqrt()
                        / h0;
                    let m = d1.max(d2);
                    if m <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / m).powf(0.2) }
                }
                Err(_) => h0,
            };
            (100.0 * h0).min(h1)
        }
    }
    .min(opts.h_max)
    .min(t_end - t0);

    let mut accepted = 0;
    let mut rejected = 0;
    let mut last_error = None;
    let mut ytmp = vec![0.0; n];
    let mut y1 = vec![0.0; n];
    let mut err = vec![0.0; n];

    while t < t_end {
        if accepted + rejected >= opts.max_steps {
            return Err(Error::Integration { time: t, reason: "maximum number of steps exceeded".into() });
        }
        if h < opts.h_min {
            return Ok(Summary { t, y, status: Status::Underflow, accepted, rejected, evaluations, last_error });
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        let mut stage_failed = false;
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..s {
                    acc += A[s][j] * k[j][i];
                }
                ytmp[i] = y[i] + h * acc;
            }
            if s == 6 {
                y1.copy_from_slice(&ytmp);
            }
            evaluations += 1;
            if let Err(e) = f(t + C[s] * h, &ytmp, &mut k[s]) {
                last_error = Some(e.to_string());
                stage_failed = true;
                break;
            }
        }
        if stage_failed || !y1.iter().all(|v| v.is_finite()) || !admissible(&y1) {
            rejected += 1;
            h *= 0.25;
            continue;
        }
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..7 {
                acc += E[j] * k[j][i];
            }
            err[i] = h * acc;
        }
        let en = error_norm(&y, &y1, &err, opts);
        if en > 1.0 || !en.is_finite() {
            rejected += 1;
            h *= (0.9 * en.powf(-0.2)).clamp(0.2, 1.0);
            continue;
        }
        let mut r5 = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..7 {
                acc += D[j] * k[j][i];
            }
            r5[i] = h * acc;
        }
        let r2: Vec<f64> = (0..n).map(|i| y1[i] - y[i]).collect();
        let r3: Vec<f64> = (0..n).map(|i| h * k[0][i] - r2[i]).collect();
        let r4: Vec<f64> = (0..n).map(|i| r2[i] - h * k[6][i] - r3[i]).collect();
        let step = DenseStep { t0: t, h, rcont: [y.clone(), r2, r3, r4, r5] };
        t = if last { t_end } else { t + h };
        y.copy_from_slice(&y1);
        let k6 = k[6].clone();
        k[0] = k6;
        accepted += 1;
        if observer(&step)? == Control::Stop {
            return Ok(Summary { t, y, status: Status::Stopped, accepted, rejected, evaluations, last_error });
        }
        let fac = if en == 0.0 { 10.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 10.0) };
        h = (h * fac).min(opts.h_max);
    }
    Ok(Summary { t, y, status: Status::Finished, accepted, rejected, evaluations, last_error })
}

/// One fixed step of the fifth-order Dormand–Prince solution; `h` may be negative.
pub fn dopri5_fixed_step<F>(mut f: F, t: f64, y: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 6];
    let mut ytmp = vec![0.0; n];
    f(t, y, &mut k[0]);
    for s in 1..6 {
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..s {
                acc += A[s][j] * k[j][i];
            }
            ytmp[i] = y[i] + h * acc;
        }
        f(t + C[s] * h, &ytmp, &mut k[s]);
    }
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..6 {
                acc += A[6][j] * k[j][i];
            }
            y[i] + h * acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_with_dense_output() {
        let opts = Dopri5Options::with_tol(1e-10);
        let mut samples = Vec::new();
        let s = dopri5(
            |_, y, dy| {
                dy[0] = -y[0];
                Ok(())
            },
            0.0,
            &[1.0],
            2.0,
            &opts,
            |_| true,
            |step| {
                let tm = step.t0 + 0.37 * step.h;
                samples.push((tm, step.eval(tm)[0]));
                Ok(Control::Continue)
            },
        )
        .unwrap();
        assert_eq!(s.status, Status::Finished);
        assert!((s.y[0] - (-2.0f64).exp()).abs() < 1e-9);
        for (t, v) in samples {
            assert!((v - (-t).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn harmonic_oscillator_order() {
        let run = |tol: f64| {
            let s = dopri5(
                |_, y, dy| {
                    dy[0] = y[1];
                    dy[1] = -y[0];
                    Ok(())
                },
                0.0,
                &[1.0, 0.0],
                10.0,
                &Dopri5Options::with_tol(tol),
                |_| true,
                |_| Ok(Control::Continue),
            )
            .unwrap();
            ((s.y[0] - 10f64.cos()).powi(2) + (s.y[1] + 10f64.sin()).powi(2)).sqrt()
        };
        let e1 = run(1e-6);
        let e2 = run(1e-9);
        assert!(e1 < 1e-4 && e2 < 1e-7 && e2 < e1);
    }

    #[test]
    fn rejects_inadmissible_states() {
        // y' = -1 from y = 1: the state leaves y > 0 at t = 1
        let s = dopri5(
            |_, _, dy| {
                dy[0] = -1.0;
                Ok(())
            },
            0.0,
            &[1.0],
            2.0,
            &Dopri5Options::with_tol(1e-8),
            |y| y[0] > 1e-9,
            |_| Ok(Control::Continue),
        )
        .unwrap();
        assert_eq!(s.status, Status::Underflow);
        assert!((s.t - 1.0).abs() < 1e-6);
    }

    #[test]
    fn fixed_step_is_fifth_order() {
        let err = |n: usize| {
            let h = 1.0 / n as f64;
            let mut y = vec![1.0];
            for k in 0..n {
                y = dopri5_fixed_step(|t, y, dy| dy[0] = t * y[0], k as f64 * h, &y, h);
            }
            (y[0] - 0.5f64.exp()).abs()
        };
        let e1 = err(8);
        let e2 = err(16);
        assert!(e1 / e2 > 25.0, "{e1} {e2}");
        // backward steps undo forward steps
        let y = dopri5_fixed_step(|_, y, dy| dy[0] = -y[0], 0.0, &[1.0], 0.1);
        let back = dopri5_fixed_step(|_, y, dy| dy[0] = -y[0], 0.1, &y, -0.1);
        assert!((back[0] - 1.0).abs() < 1e-9);
    }
}
