//! Second-order IMEX Runge-Kutta (Ascher-Ruuth-Spiteri (2,2,2)) for
//! `y' = A y + N(t, y)` with `A` block diagonal, plus an embedded IMEX-Euler
//! solution for step control.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Block-diagonal matrix with blocks of size 1 or 2.
#[derive(Debug, Clone)]
pub struct BlockLinear {
    /// `(offset, size, row-major entries)`.
    blocks: Vec<(usize, usize, [f64; 4])>,
    dim: usize,
}

impl BlockLinear {
    pub fn new() -> Self {
        BlockLinear { blocks: Vec::new(), dim: 0 }
    }

    pub fn push(&mut self, m: &nalgebra::DMatrix<f64>) {
        let size = m.nrows();
        assert!(size == 1 || size == 2);
        let mut e = [0.0; 4];
        for i in 0..size {
            for j in 0..size {
                e[i * size + j] = m[(i, j)];
            }
        }
        self.blocks.push((self.dim, size, e));
        self.dim += size;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(o, s, e) in &self.blocks {
            if s == 1 {
                out[o] = e[0] * y[o];
            } else {
                out[o] = e[0] * y[o] + e[1] * y[o + 1];
                out[o + 1] = e[2] * y[o] + e[3] * y[o + 1];
            }
        }
        out
    }

    /// Solve `(I - c A) x = r`.
    pub fn solve_shifted(&self, c: f64, r: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for &(o, s, e) in &self.blocks {
            if s == 1 {
                x[o] = r[o] / (1.0 - c * e[0]);
            } else {
                let (m00, m01, m10, m11) = (1.0 - c * e[0], -c * e[1], -c * e[2], 1.0 - c * e[3]);
                let det = m00 * m11 - m01 * m10;
                x[o] = (m11 * r[o] - m01 * r[o + 1]) / det;
                x[o + 1] = (m00 * r[o + 1] - m10 * r[o]) / det;
            }
        }
        x
    }

    /// `exp(t A) y`, block by block.
    pub fn exp_apply(&self, t: f64, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(o, s, e) in &self.blocks {
            if s == 1 {
                out[o] = (t * e[0]).exp() * y[o];
            } else {
                let m = nalgebra::Matrix2::new(e[0], e[1], e[2], e[3]) * t;
                let v = m.exp() * nalgebra::Vector2::new(y[o], y[o + 1]);
                out[o] = v[0];
                out[o + 1] = v[1];
            }
        }
        out
    }
}

impl Default for BlockLinear {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepControl {
    Fixed { dt: f64 },
    Adaptive { rtol: f64, atol: f64, dt_init: f64, dt_min: f64, dt_max: f64 },
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl::Adaptive { rtol: 1e-8, atol: 1e-12, dt_init: 1e-3, dt_min: 1e-10, dt_max: 0.05 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub dt_min: f64,
    pub dt_max: f64,
}

/// What the observer wants after a sample.
pub enum Observe {
    Continue,
    Halt,
}

const GAMMA: f64 = 1.0 - std::f64::consts::FRAC_1_SQRT_2;

/// Integrate from `t0` to the last sample time, calling `observe(t, y, dt)`
/// at `t0` and at each sample time.
pub fn integrate<N, O>(
    a: &BlockLinear,
    mut nonlinear: N,
    y0: Vec<f64>,
    t0: f64,
    samples: &[f64],
    control: StepControl,
    mut observe: O,
) -> Result<StepStats>
where
    N: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    O: FnMut(f64, &[f64], f64) -> Result<Observe>,
{
    let delta = 1.0 - 1.0 / (2.0 * GAMMA);
    let mut stats = StepStats { dt_min: f64::INFINITY, dt_max: 0.0, ..Default::default() };
    let mut y = y0;
    let mut t = t0;
    let (mut dt, adaptive) = match control {
        StepControl::Fixed { dt } => (dt, None),
        StepControl::Adaptive { rtol, atol, dt_init, dt_min, dt_max } => (dt_init, Some((rtol, atol, dt_min, dt_max))),
    };
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
    }
    if let Observe::Halt = observe(t, &y, dt)? {
        return Ok(stats);
    }
    let mut err_prev: f64 = 1.0;
    for &target in samples.iter().filter(|&&s| s > t0) {
        while t < target - 1e-12 * (1.0 + target.abs()) {
            let h = dt.min(target - t);
            let n0 = nonlinear(t, &y)?;
            // Stage 1 at t + gamma h.
            let r1: Vec<f64> = (0..y.len()).map(|i| y[i] + h * GAMMA * n0[i]).collect();
            let y1 = a.solve_shifted(h * GAMMA, &r1);
            let n1 = nonlinear(t + GAMMA * h, &y1)?;
            let ay1 = a.apply(&y1);
            let r2: Vec<f64> = (0..y.len())
                .map(|i| y[i] + h * (1.0 - GAMMA) * ay1[i] + h * (delta * n0[i] + (1.0 - delta) * n1[i]))
                .collect();
            let y_new = a.solve_shifted(h * GAMMA, &r2);
            if y_new.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite state at tau = {t:.6}")));
            }
            match adaptive {
                None => {
                    t += h;
                    y = y_new;
                    stats.accepted += 1;
                    stats.dt_min = stats.dt_min.min(h);
                    stats.dt_max = stats.dt_max.max(h);
                }
                Some((rtol, atol, dt_min, dt_max)) => {
                    let re: Vec<f64> = (0..y.len()).map(|i| y[i] + h * n0[i]).collect();
                    let y_low = a.solve_shifted(h, &re);
                    // Filter the raw difference through the implicit factor so
                    // that strongly damped modes do not dictate the step, and
                    // measure it against the size of the whole state.
                    let diff: Vec<f64> = (0..y.len()).map(|i| y_new[i] - y_low[i]).collect();
                    let filtered = a.solve_shifted(h * GAMMA, &diff);
                    let scale = atol + rtol * y.iter().chain(&y_new).fold(0.0f64, |m, v| m.max(v.abs()));
                    let err = filtered.iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale;
                    if err <= 1.0 {
                        t += h;
                        y = y_new;
                        stats.accepted += 1;
                        stats.dt_min = stats.dt_min.min(h);
                        stats.dt_max = stats.dt_max.max(h);
                        let e = err.max(1e-10);
                        let fac = 0.9 * e.powf(-0.35) * err_prev.powf(0.2);
                        // Only grow from the full step, not from a step cut to hit a sample.
                        if h >= dt * 0.999 {
                            dt = (dt * fac.clamp(0.2, 5.0)).min(dt_max);
                        }
                        err_prev = e;
                    } else {
                        stats.rejected += 1;
                        dt = h * (0.9 * err.powf(-0.5)).clamp(0.1, 0.9);
                        if dt < dt_min {
                            return Err(Error::StepUnderflow { tau: t, dt });
                        }
                    }
                }
            }
        }
        t = target;
        if let Observe::Halt = observe(t, &y, dt)? {
            break;
        }
    }
    Ok(stats)
}
