//! Ancient and immortal solutions of `(d/dtau - L) X = E(X) + Q(X) + G` with
//! prescribed leading modes, built from per-mode Duhamel integrals and a
//! Picard iteration.
//!
//! Everything works in the modal coordinates of a [`SpectralDecomposition`]:
//! each coordinate obeys `x' = lambda x + g`. Modes above the decay exponent
//! `theta` are integrated from the anchor time towards infinity, the others
//! from infinity towards the anchor, with the infinite part of the integral
//! replaced by an exponential tail whose size is bounded explicitly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{rate_fit, FlowContext, FlowTrace};
use crate::geometry::{AxisymTensor, Background};
use crate::spectral::{ModeClass, Sign, SpectralDecomposition};

/// Largest admissible truncated tail of a Duhamel integral.
pub const TAIL_TOL: f64 = 1e-10;
/// Smallest admissible distance between `theta` and the spectrum.
pub const CLEARANCE: f64 = 1e-6;
const MAX_PICARD: usize = 60;
/// Picard stops once the increment is this small relative to the solution.
pub const PICARD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `tau in (-inf, T]`.
    Ancient,
    /// `tau in [T, inf)`.
    Immortal,
}

/// Modal coordinates sampled on an increasing time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalTrajectory {
    pub taus: Vec<f64>,
    /// `coords[k][i]`: coordinate of mode `i` at `taus[k]`.
    pub coords: Vec<Vec<f64>>,
}

impl ModalTrajectory {
    pub fn from_flow(trace: &FlowTrace) -> Self {
        ModalTrajectory {
            taus: trace.samples.iter().map(|s| s.tau).collect(),
            coords: trace.samples.iter().map(|s| s.modal.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn norm_at(&self, k: usize) -> f64 {
        self.coords[k].iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn tensor_at(&self, decomp: &SpectralDecomposition, k: usize) -> AxisymTensor {
        decomp.from_modal(&self.coords[k])
    }

    /// Index of the sample at `tau`, if there is one within `1e-9`.
    pub fn index_of(&self, tau: f64) -> Option<usize> {
        self.taus.iter().position(|t| (t - tau).abs() < 1e-9)
    }

    fn difference(&self, other: &ModalTrajectory) -> Result<Vec<Vec<f64>>> {
        if self.taus.len() != other.taus.len() || self.taus.iter().zip(&other.taus).any(|(a, b)| (a - b).abs() > 1e-9) {
            return Err(Error::InvalidParameter("trajectories live on different time grids".into()));
        }
        Ok(self.coords.iter().zip(&other.coords).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect())
    }
}

/// `(e^{c d} - 1) / c`.
fn phi(c: f64, d: f64) -> f64 {
    if (c * d).abs() < 1e-5 {
        d * (1.0 + c * d / 2.0 + (c * d).powi(2) / 6.0)
    } else {
        (c * d).exp_m1() / c
    }
}

/// `int_0^d t e^{c t} dt`.
fn psi(c: f64, d: f64) -> f64 {
    if (c * d).abs() < 1e-3 {
        let x = c * d;
        d * d * (0.5 + x / 3.0 + x * x / 8.0 + x * x * x / 30.0)
    } else {
        (d * (c * d).exp() - phi(c, d)) / c
    }
}

/// `int_0^d e^{c t} g(t) dt` with `g` interpolated exponentially between
/// same-signed samples and linearly otherwise.
fn interval_integral(c: f64, d: f64, g0: f64, g1: f64) -> f64 {
    if g0 == 0.0 && g1 == 0.0 {
        return 0.0;
    }
    if g0 * g1 > 0.0 {
        let rho = (g1 / g0).ln() / d;
        g0 * phi(c + rho, d)
    } else {
        g0 * phi(c, d) + (g1 - g0) / d * psi(c, d)
    }
}

/// Rate used to continue the source off the grid: the one seen on the
/// boundary interval when admissible, `mu` otherwise.
fn tail_rate(g0: f64, g1: f64, d: f64, mu: f64, admissible: impl Fn(f64) -> bool) -> f64 {
    if g0 * g1 > 0.0 {
        let r = (g1 / g0).ln() / d;
        if admissible(r) {
            return r;
        }
    }
    mu
}

/// Whether mode `lambda` is integrated from the anchor (true) or from
/// infinity (false).
fn from_anchor(direction: Direction, lambda: f64, theta: f64) -> bool {
    match direction {
        Direction::Ancient => lambda > theta,
        Direction::Immortal => lambda < theta,
    }
}

#[derive(Debug, Clone)]
pub struct DuhamelOutput {
    pub x: Vec<Vec<f64>>,
    /// Bound on the part of the infinite integrals that lies off the grid.
    pub tail_bound: f64,
}

/// Solve `x_i' = lambda_i x_i + g_i` per mode on `taus` with the splitting of
/// the inhomogeneous existence lemmas. `mu` is the exponential rate of the
/// source (`|g| <= G e^{mu tau}`), used for the tails.
pub fn duhamel_solve(
    eigs: &[f64],
    direction: Direction,
    theta: f64,
    mu: f64,
    taus: &[f64],
    g: &[Vec<f64>],
) -> Result<DuhamelOutput> {
    let n = taus.len();
    if n < 2 || g.len() != n {
        return Err(Error::InvalidParameter("Duhamel solve needs a grid of at least two times".into()));
    }
    if let Some(l) = eigs.iter().find(|l| (*l - theta).abs() < CLEARANCE) {
        return Err(Error::SpectralClearance(format!("theta = {theta} is within {CLEARANCE:e} of eigenvalue {l}")));
    }
    match direction {
        Direction::Ancient if !(mu > theta) => {
            return Err(Error::InvalidParameter(format!("ancient solve needs mu > theta, got {mu} <= {theta}")))
        }
        Direction::Immortal if !(mu < theta) => {
            return Err(Error::InvalidParameter(format!("immortal solve needs mu < theta, got {mu} >= {theta}")))
        }
        _ => {}
    }
    let modes = eigs.len();
    let mut x = vec![vec![0.0; modes]; n];
    let mut tail_bound: f64 = 0.0;
    for (i, &lam) in eigs.iter().enumerate() {
        let gi = |k: usize| g[k][i];
        let anchored = from_anchor(direction, lam, theta);
        // Forward sweep when the start of the grid carries the boundary value.
        let forward = match direction {
            Direction::Ancient => !anchored,
            Direction::Immortal => anchored,
        };
        let budget = (0..n).map(|k| gi(k).abs() * (-mu * taus[k]).exp()).fold(0.0, f64::max);
        if forward {
            let mut v = 0.0;
            if !anchored {
                // Tail over (-inf, tau_0] with the source continued at rate mu.
                tail_bound = tail_bound.max(budget * (mu * taus[0]).exp() / (mu - lam));
                v = gi(0) / (tail_rate(gi(0), gi(1), taus[1] - taus[0], mu, |r| r > lam) - lam);
            }
            x[0][i] = v;
            for k in 0..n - 1 {
                let d = taus[k + 1] - taus[k];
                v = (lam * d).exp() * (v + interval_integral(-lam, d, gi(k), gi(k + 1)));
                x[k + 1][i] = v;
            }
        } else {
            let mut v = 0.0;
            if !anchored {
                // Tail over [tau_N, inf).
                tail_bound = tail_bound.max(budget * (mu * taus[n - 1]).exp() / (lam - mu));
                v = -gi(n - 1) / (lam - tail_rate(gi(n - 2), gi(n - 1), taus[n - 1] - taus[n - 2], mu, |r| r < lam));
            }
            x[n - 1][i] = v;
            for k in (0..n - 1).rev() {
                let d = taus[k + 1] - taus[k];
                v = (-lam * d).exp() * v - interval_integral(-lam, d, gi(k), gi(k + 1));
                x[k][i] = v;
            }
        }
    }
    if tail_bound > TAIL_TOL {
        return Err(Error::Tail(format!("truncated tail bounded only by {tail_bound:.3e} > {TAIL_TOL:e}")));
    }
    Ok(DuhamelOutput { x, tail_bound })
}

/// `sup_k |x_{k+1} - x_{k-1} - Simpson(lambda x + g)| / (2 dtau)` over modes:
/// an independent check that a trajectory solves `x' = lambda x + g`.
pub fn duhamel_residual(eigs: &[f64], taus: &[f64], x: &[Vec<f64>], g: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 1..taus.len().saturating_sub(1) {
        let (d0, d1) = (taus[k] - taus[k - 1], taus[k + 1] - taus[k]);
        if (d0 - d1).abs() > 1e-12 * d0.max(d1) {
            continue;
        }
        let mut r2 = 0.0;
        for (i, &lam) in eigs.iter().enumerate() {
            let f = |j: usize| lam * x[j][i] + g[j][i];
            let r = x[k + 1][i] - x[k - 1][i] - d0 / 3.0 * (f(k - 1) + 4.0 * f(k) + f(k + 1));
            r2 += r * r;
        }
        worst = worst.max(r2.sqrt() / (2.0 * d0));
    }
    worst
}

/// `E_tau(X) + Q_tau(X)` in modal coordinates.
pub trait Nonlinearity: Sync {
    fn eval(&self, tau: f64, x: &[f64]) -> Result<Vec<f64>>;
    /// Constant in `|N(X) - N(Y)| <= C0 (|X| + |Y|) |X - Y|`.
    fn c0(&self) -> f64;
}

/// The quadratic and higher part of the rescaled Ricci-DeTurck flow.
pub struct RdtfNonlinearity<'a> {
    bg: &'a Background,
    ctx: &'a FlowContext,
    c0: f64,
}

impl<'a> RdtfNonlinearity<'a> {
    /// Measures `C0` over `samples` random pairs in a ball of radius `radius`
    /// and inflates it by two.
    pub fn new(bg: &'a Background, ctx: &'a FlowContext, radius: f64, samples: usize, seed: u64) -> Result<Self> {
        let mut nl = RdtfNonlinearity { bg, ctx, c0: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes = &ctx.decomp.modes;
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let v: Vec<f64> = modes.iter().map(|m| rng.gen_range(-1.0..1.0) / (1.0 + m.eigenvalue.abs()).powi(2)).collect();
            let s = radius * rng.gen_range(0.1..1.0) / v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.into_iter().map(|a| a * s).collect()
        };
        let mut c: f64 = 0.0;
        for _ in 0..samples {
            let (x, y) = (draw(&mut rng), draw(&mut rng));
            let (qx, qy) = (nl.eval(0.0, &x)?, nl.eval(0.0, &y)?);
            let num = qx.iter().zip(&qy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nd = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            c = c.max(num / ((nx + ny) * nd));
        }
        nl.c0 = 2.0 * c;
        Ok(nl)
    }
}

impl Nonlinearity for RdtfNonlinearity<'_> {
    fn eval(&self, _tau: f64, x: &[f64]) -> Result<Vec<f64>> {
        let h = self.ctx.decomp.from_modal(x);
        let mut q = self.bg.rdtf_rhs(&h)?;
        q.axpy(-1.0, &self.ctx.op.apply_tensor(&h));
        Ok(self.ctx.decomp.modal_coords(self.bg, &q))
    }

    fn c0(&self) -> f64 {
        self.c0
    }
}

/// One application of the existence theorem: solve for `Z` with
/// `Z = Z_hom + D_theta[G + N(base + Z) - N(base)]`.
pub struct ConstructionProblem<'a> {
    pub eigenvalues: Vec<f64>,
    pub direction: Direction,
    pub theta: f64,
    /// Rate of the source, for the tails.
    pub mu: f64,
    pub taus: Vec<f64>,
    /// A solution of the homogeneous equation on the grid, usually the
    /// prescribed modes `a e^{lambda tau} Y`.
    pub homogeneous: Vec<Vec<f64>>,
    /// Samples of `G` on the grid.
    pub forcing: Option<Vec<Vec<f64>>>,
    pub base: Option<Vec<Vec<f64>>>,
    pub nonlinearity: Option<&'a dyn Nonlinearity>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstructedSolution {
    pub direction: Direction,
    pub trajectory: ModalTrajectory,
    pub iterations: usize,
    /// Weighted sup norms of the successive Picard increments.
    pub increments: Vec<f64>,
    /// Ratios of successive increments.
    pub contraction: Vec<f64>,
    /// Simpson residual of the final trajectory.
    pub residual: f64,
    pub tail_bound: f64,
    pub theta: f64,
    pub anchor: f64,
    /// Value of the smallness gate (passes when at most 1/4).
    pub gate: f64,
    /// `C` with `|X_tau| <= C e^{rate tau}` on the grid.
    pub decay_constant: f64,
    pub decay_rate: f64,
}

fn weighted_sup(taus: &[f64], theta: f64, x: &[Vec<f64>]) -> f64 {
    taus.iter()
        .zip(x)
        .map(|(t, v)| (-theta * t).exp() * v.iter().map(|a| a * a).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Run the Picard iteration of `problem`.
pub fn picard_solve(problem: &ConstructionProblem) -> Result<ConstructedSolution> {
    let p = problem;
    let n = p.taus.len();
    let zero = vec![vec![0.0; p.eigenvalues.len()]; n];
    let base = p.base.as_ref().unwrap_or(&zero);
    let forcing = p.forcing.as_ref().unwrap_or(&zero);
    let source = |z: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
        let Some(nl) = p.nonlinearity else { return Ok(forcing.clone()) };
        (0..n)
            .map(|k| {
                let full: Vec<f64> = base[k].iter().zip(&z[k]).map(|(a, b)| a + b).collect();
                let mut s = nl.eval(p.taus[k], &full)?;
                if p.base.is_some() {
                    let b = nl.eval(p.taus[k], &base[k])?;
                    s.iter_mut().zip(&b).for_each(|(x, y)| *x -= y);
                }
                s.iter_mut().zip(&forcing[k]).for_each(|(x, g)| *x += g);
                Ok(s)
            })
            .collect()
    };
    let mut z = p.homogeneous.clone();
    let mut increments = Vec::new();
    let mut tail_bound: f64 = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut scale = f64::MIN_POSITIVE;
    while !converged && iterations < MAX_PICARD {
        iterations += 1;
        let s = source(&z)?;
        let d = duhamel_solve(&p.eigenvalues, p.direction, p.theta, p.mu, &p.taus, &s)?;
        tail_bound = tail_bound.max(d.tail_bound);
        let next: Vec<Vec<f64>> = p.homogeneous.iter().zip(&d.x).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect();
        let inc: Vec<Vec<f64>> = next.iter().zip(&z).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect();
        let size = weighted_sup(&p.taus, p.theta, &inc);
        let plain = inc.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        scale = scale.max(next.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())));
        increments.push(size);
        z = next;
        // Without a nonlinearity one pass is exact.
        converged = p.nonlinearity.is_none() || plain <= PICARD_TOL * scale || size == 0.0;
    }
    if !converged {
        return Err(Error::Contraction(format!("Picard iteration did not settle in {MAX_PICARD} steps")));
    }
    let contraction = increments.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 }).collect();
    let s = source(&z)?;
    let residual = duhamel_residual(&p.eigenvalues, &p.taus, &z, &s);
    let coords: Vec<Vec<f64>> = base.iter().zip(&z).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect();
    Ok(ConstructedSolution {
        direction: p.direction,
        trajectory: ModalTrajectory { taus: p.taus.clone(), coords },
        iterations,
        increments,
        contraction,
        residual,
        tail_bound,
        theta: p.theta,
        anchor: match p.direction {
            Direction::Ancient => *p.taus.last().unwrap(),
            Direction::Immortal => p.taus[0],
        },
        gate: 0.0,
        decay_constant: 0.0,
        decay_rate: p.theta,
    })
}

/// A point of `(lo, hi)` away from the spectrum: the middle of the widest
/// spectral gap inside the interval.
pub fn choose_theta(eigs: &[f64], lo: f64, hi: f64) -> Result<f64> {
    let mut cuts: Vec<f64> = eigs.iter().cloned().filter(|l| *l > lo && *l < hi).collect();
    cuts.push(lo);
    cuts.push(hi);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (a, b) = cuts
        .windows(2)
        .map(|w| (w[0], w[1]))
        .max_by(|x, y| (x.1 - x.0).partial_cmp(&(y.1 - y.0)).unwrap())
        .unwrap();
    if b - a < 2.0 * CLEARANCE {
        return Err(Error::SpectralClearance(format!("no admissible decay exponent in ({lo}, {hi})")));
    }
    Ok(0.5 * (a + b))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildOptions {
    /// Initial anchor time `T`; moved away from zero until the gate holds.
    pub anchor: f64,
    pub step: f64,
    /// Length of the grid; `None` picks one from the tail certificate.
    pub horizon: Option<f64>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { anchor: 0.0, step: 0.01, horizon: None }
    }
}

fn grid(direction: Direction, anchor: f64, horizon: f64, step: f64) -> Vec<f64> {
    let m = (horizon / step).round().max(2.0) as usize;
    let d = horizon / m as f64;
    match direction {
        Direction::Ancient => (0..=m).map(|k| anchor - horizon + k as f64 * d).collect(),
        Direction::Immortal => (0..=m).map(|k| anchor + k as f64 * d).collect(),
    }
}

/// Build `S(a)` by prescribing the listed modes one at a time, each time
/// solving around the previous solution.
///
/// Ancient direction: modes must be essential with positive eigenvalue and
/// are added from the smallest eigenvalue upward. Immortal: essential with
/// negative eigenvalue, added from the one closest to zero downward.
pub fn build_s_general(
    decomp: &SpectralDecomposition,
    nonlinearity: Option<&dyn Nonlinearity>,
    direction: Direction,
    prescribed: &[(usize, f64)],
    opts: &BuildOptions,
) -> Result<ConstructedSolution> {
    let eigs: Vec<f64> = decomp.modes.iter().map(|m| m.eigenvalue).collect();
    for &(i, _) in prescribed {
        let m = decomp.modes.get(i).ok_or_else(|| Error::InvalidParameter(format!("no mode with index {i}")))?;
        let ok = m.class == Some(ModeClass::Essential)
            && match direction {
                Direction::Ancient => m.sign == Sign::Unstable,
                Direction::Immortal => m.sign == Sign::Stable,
            };
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "mode {i} (eigenvalue {:.4}, {:?}) cannot be prescribed for an {:?} solution",
                m.eigenvalue, m.class, direction
            )));
        }
    }
    let mut order: Vec<(usize, f64)> = prescribed.to_vec();
    order.sort_by(|x, y| {
        let (a, b) = (eigs[x.0], eigs[y.0]);
        match direction {
            Direction::Ancient => a.partial_cmp(&b).unwrap(),
            Direction::Immortal => b.partial_cmp(&a).unwrap(),
        }
    });
    // Group equal eigenvalues: they enter together.
    let mut groups: Vec<Vec<(usize, f64)>> = Vec::new();
    for p in order {
        match groups.last_mut() {
            Some(g) if (eigs[g[0].0] - eigs[p.0]).abs() < 1e-8 => g.push(p),
            _ => groups.push(vec![p]),
        }
    }
    let lam_lead = groups.first().map(|g| eigs[g[0].0]);
    let horizon = match (opts.horizon, lam_lead) {
        (Some(h), _) => h,
        // Long enough for the leading mode to fall to 1e-7 of its size.
        (None, Some(l)) => (16.0 / l.abs()).clamp(4.0, 40.0),
        (None, None) => 4.0,
    };

    let c0 = nonlinearity.map_or(0.0, |n| n.c0());
    let mut anchor = opts.anchor;
    let mut h = horizon;
    // Each failure of the gate moves the anchor one unit further out, each
    // uncertified tail lengthens the grid; both restart the sequence.
    'restart: for _ in 0..80 {
        let taus = grid(direction, anchor, h, opts.step);
        let mut base: Option<Vec<Vec<f64>>> = None;
        let mut last: Option<ConstructedSolution> = None;
        let mut base_rate: Option<f64> = None;
        for g in &groups {
            let lam = eigs[g[0].0];
            let amp = g.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt();
            // Corrections decay like e^{(lambda + theta') tau}.
            let theta_p = match (direction, base_rate) {
                (Direction::Ancient, Some(d)) => d.min(lam),
                (Direction::Immortal, Some(d)) => d.max(lam),
                (_, None) => lam,
            };
            let (lo, hi) = match direction {
                Direction::Ancient => (lam, lam + theta_p),
                Direction::Immortal => (lam + theta_p, lam),
            };
            let theta = choose_theta(&eigs, lo, hi)?;
            let mu = theta + lam;
            let c1 = eigs.iter().map(|l| 1.0 / (mu - l).abs()).fold(0.0, f64::max);
            let base_amp = base.as_ref().map_or(0.0, |b| {
                b.iter().zip(&taus).map(|(v, t)| (-lam * t).exp() * v.iter().map(|a| a * a).sum::<f64>().sqrt()).fold(0.0, f64::max)
            });
            let big_a = amp + base_amp;
            let gate = 16.0 * c0 * c0 * c1 * c1 * big_a * big_a * (2.0 * lam * anchor).exp();
            if gate > 0.25 {
                anchor += match direction {
                    Direction::Ancient => -1.0,
                    Direction::Immortal => 1.0,
                };
                continue 'restart;
            }
            let homogeneous: Vec<Vec<f64>> = taus
                .iter()
                .map(|t| {
                    let mut v = vec![0.0; eigs.len()];
                    for &(i, a) in g {
                        v[i] = a * (lam * t).exp();
                    }
                    v
                })
                .collect();
            let problem = ConstructionProblem {
                eigenvalues: eigs.clone(),
                direction,
                theta,
                mu,
                taus: taus.clone(),
                homogeneous,
                forcing: None,
                base: base.clone(),
                nonlinearity,
            };
            match picard_solve(&problem) {
                Ok(mut sol) => {
                    sol.gate = gate;
                    base = Some(sol.trajectory.coords.clone());
                    last = Some(sol);
                }
                Err(Error::Tail(_)) if h < 80.0 => {
                    h *= 1.5;
                    continue 'restart;
                }
                Err(e) => return Err(e),
            }
            base_rate = Some(lam);
        }
        let mut sol = last.unwrap_or_else(|| {
            // a = 0: the shrinker itself.
            ConstructedSolution {
                direction,
                trajectory: ModalTrajectory { taus: taus.clone(), coords: vec![vec![0.0; eigs.len()]; taus.len()] },
                iterations: 0,
                increments: Vec::new(),
                contraction: Vec::new(),
                residual: 0.0,
                tail_bound: 0.0,
                theta: 0.0,
                anchor,
                gate: 0.0,
                decay_constant: 0.0,
                decay_rate: 0.0,
            }
        });
        sol.anchor = anchor;
        let rate = lam_lead.unwrap_or(0.0);
        sol.decay_rate = rate;
        sol.decay_constant = (0..sol.trajectory.len())
            .map(|k| sol.trajectory.norm_at(k) * (-rate * sol.trajectory.taus[k]).exp())
            .fold(0.0, f64::max);
        return Ok(sol);
    }
    Err(Error::Contraction(format!("smallness gate not met for any anchor up to T = {anchor}")))
}

/// Ancient solution with prescribed essential unstable modes.
pub fn build_s(
    decomp: &SpectralDecomposition,
    nonlinearity: Option<&dyn Nonlinearity>,
    prescribed: &[(usize, f64)],
    opts: &BuildOptions,
) -> Result<ConstructedSolution> {
    build_s_general(decomp, nonlinearity, Direction::Ancient, prescribed, opts)
}

/// Immortal solution with prescribed essential stable modes.
pub fn build_s_forward(
    decomp: &SpectralDecomposition,
    nonlinearity: Option<&dyn Nonlinearity>,
    prescribed: &[(usize, f64)],
    opts: &BuildOptions,
) -> Result<ConstructedSolution> {
    build_s_general(decomp, nonlinearity, Direction::Immortal, prescribed, opts)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrataReport {
    pub mode: usize,
    pub eigenvalue: f64,
    /// `<e^{-lambda tau}(S_a - S_b), Y_j>` at the time closest to the
    /// asymptotic end.
    pub limit_coefficient: f64,
    pub expected: f64,
    /// `|e^{-lambda tau}(S_a - S_b) - (a_j - b_j) Y_j|` along the grid.
    pub taus: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Fitted exponent of the residual towards the asymptotic end, positive
    /// for ancient and negative for immortal decay.
    pub delta_prime: f64,
    /// The residual sits at round-off, so `delta_prime` is only a bound.
    pub floor_limited: bool,
}

/// Compare two solutions on stratum `j`.
pub fn strata_verify(
    decomp: &SpectralDecomposition,
    s_a: &ConstructedSolution,
    s_b: &ConstructedSolution,
    j: usize,
    expected: f64,
) -> Result<StrataReport> {
    let diff = s_a.trajectory.difference(&s_b.trajectory)?;
    let lam = decomp.modes[j].eigenvalue;
    let taus = &s_a.trajectory.taus;
    let mut residuals = Vec::with_capacity(taus.len());
    let mut coeffs = Vec::with_capacity(taus.len());
    for (t, w) in taus.iter().zip(&diff) {
        let s = (-lam * t).exp();
        let c = w[j] * s;
        let r2: f64 = w.iter().enumerate().map(|(i, v)| if i == j { (v * s - expected).powi(2) } else { (v * s).powi(2) }).sum();
        coeffs.push(c);
        residuals.push(r2.sqrt());
    }
    let n = taus.len();
    // The asymptotic end and a window of a quarter of the grid next to it.
    let (end, window): (usize, Vec<usize>) = match s_a.direction {
        Direction::Ancient => (0, (0..n / 4).collect()),
        Direction::Immortal => (n - 1, (n - n / 4..n).collect()),
    };
    let floor = 1e-12 * expected.abs().max(f64::MIN_POSITIVE);
    let floor_limited = window.iter().all(|&k| residuals[k] <= floor);
    let delta_prime = if floor_limited {
        match s_a.direction {
            Direction::Ancient => f64::INFINITY,
            Direction::Immortal => f64::NEG_INFINITY,
        }
    } else {
        let (t, v): (Vec<f64>, Vec<f64>) =
            window.iter().filter(|&&k| residuals[k] > floor).map(|&k| (taus[k], residuals[k])).unzip();
        rate_fit(&t, &v)?.exponent
    };
    Ok(StrataReport {
        mode: j,
        eigenvalue: lam,
        limit_coefficient: coeffs[end],
        expected,
        taus: taus.clone(),
        residuals,
        delta_prime,
        floor_limited,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DominantMode {
    /// Fitted exponent of `|h1 - h2|`.
    pub lambda: f64,
    /// The eigenvalue of the mode carrying the difference.
    pub eigenvalue: f64,
    pub mode: usize,
    /// Normalised limit `e^{-lambda tau} w` at the asymptotic end, in modal
    /// coordinates.
    pub phi: Vec<f64>,
    /// `|<phi, Y_mode>|`, one for a pure eigentensor.
    pub alignment: f64,
    pub r2: f64,
}

/// Leading mode of the difference of two solutions towards the asymptotic
/// end (`tau -> -inf` for ancient, `+inf` for immortal), fitted over the
/// quarter of the common samples nearest that end.
pub fn dominant_mode_extract(
    decomp: &SpectralDecomposition,
    t1: &ModalTrajectory,
    t2: &ModalTrajectory,
    direction: Direction,
) -> Result<DominantMode> {
    let diff = t1.difference(t2)?;
    let n = diff.len();
    let w = (n / 4).max(10);
    if n < 10 {
        return Err(Error::InsufficientSamples(format!("{n} samples, need at least 10")));
    }
    let idx: Vec<usize> = match direction {
        Direction::Ancient => (0..w.min(n)).collect(),
        Direction::Immortal => (n - w.min(n)..n).collect(),
    };
    let norms: Vec<f64> = idx.iter().map(|&k| diff[k].iter().map(|a| a * a).sum::<f64>().sqrt()).collect();
    let taus: Vec<f64> = idx.iter().map(|&k| t1.taus[k]).collect();
    let fit = rate_fit(&taus, &norms)?;
    let end = match direction {
        Direction::Ancient => 0,
        Direction::Immortal => n - 1,
    };
    let v = &diff[end];
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let phi: Vec<f64> = v.iter().map(|a| a / nv).collect();
    let (mode, alignment) = phi
        .iter()
        .enumerate()
        .map(|(i, a)| (i, a.abs()))
        .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
        .unwrap();
    Ok(DominantMode { lambda: fit.exponent, eigenvalue: decomp.modes[mode].eigenvalue, mode, phi, alignment, r2: fit.r2 })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FastDecayLevel {
    /// Target rate: the solution should be `O(e^{-lambda tau})`.
    pub lambda: f64,
    pub start: f64,
    /// Fitted exponent of `|X|` over the level's window.
    pub achieved: f64,
    pub tail_bound: f64,
}

/// For a source decaying faster than every exponential, solve on nested
/// horizons with decay exponents `-lambda` and report the achieved rates.
/// Only the listed, finitely many, rates are certified.
pub fn fast_decay_solve(
    eigs: &[f64],
    forcing: &dyn Fn(f64) -> Vec<f64>,
    lambdas: &[f64],
    start: f64,
    length: f64,
    step: f64,
) -> Result<Vec<FastDecayLevel>> {
    let mut out = Vec::new();
    let mut t0 = start;
    for &lam in lambdas {
        let theta = choose_theta(eigs, -lam - 1.0, -lam)?;
        let taus = grid(Direction::Immortal, t0, length, step);
        let g: Vec<Vec<f64>> = taus.iter().map(|t| forcing(*t)).collect();
        let d = duhamel_solve(eigs, Direction::Immortal, theta, theta - 1.0, &taus, &g)?;
        // Scaled so that squares of deep-tail values do not underflow.
        let norms: Vec<f64> = d
            .x
            .iter()
            .map(|v| {
                let m = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                if m == 0.0 {
                    return 0.0;
                }
                m * v.iter().map(|a| (a / m).powi(2)).sum::<f64>().sqrt()
            })
            .collect();
        let fit = rate_fit(&taus, &norms)?;
        out.push(FastDecayLevel { lambda: lam, start: t0, achieved: fit.exponent, tail_bound: d.tail_bound });
        t0 += length / 2.0;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_integral_is_exact_for_exponentials_and_lines() {
        let (c, d) = (-0.7, 0.3);
        let exact_exp = |r: f64| ((c + r) * d).exp_m1() / (c + r);
        assert!((interval_integral(c, d, 1.0, (0.4 * d).exp()) - exact_exp(0.4)).abs() < 1e-15);
        // g(t) = 1 - 4t crosses zero on the interval.
        let g1 = 1.0 - 4.0 * d;
        let exact = phi(c, d) - 4.0 * psi(c, d);
        assert!((interval_integral(c, d, 1.0, g1) - exact).abs() < 1e-15);
        assert!((psi(1e-9, 2.0) - 2.0).abs() < 1e-8);
    }

    #[test]
    fn theta_avoids_the_spectrum() {
        let t = choose_theta(&[1.0, 0.25, -1.0], 1.0, 2.0).unwrap();
        assert!((t - 1.5).abs() < 1e-12);
        // Gaps in (-2, 0.5) are 1, 1.25 and 0.25 wide.
        let t = choose_theta(&[1.0, 0.25, -1.0], -2.0, 0.5).unwrap();
        assert!((t + 0.375).abs() < 1e-12);
        assert!(choose_theta(&[0.0], -1e-7, 1e-7).is_err());
    }

    #[test]
    fn clearance_is_enforced() {
        let taus = [0.0, 0.1];
        let g = vec![vec![0.0], vec![0.0]];
        assert!(matches!(
            duhamel_solve(&[0.5], Direction::Immortal, 0.5, -1.0, &taus, &g),
            Err(Error::SpectralClearance(_))
        ));
    }
}
