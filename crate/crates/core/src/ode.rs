//! Fixed-step (euler, midpoint) and adaptive Dormand-Prince integration of
//! `dy/dt = v(y, t)`, with exact evaluation counting.
//!
//! NFE rules: euler uses `steps`, midpoint `2 * steps`. dopri5 evaluates the
//! field once at the start and six times per attempted step (accepted or
//! rejected); the seventh stage of an accepted step is reused as the first
//! stage of the next, so `nfe = 1 + 6 * attempts`.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::field::VectorField;
use crate::linalg::Matrix;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Euler,
    Midpoint,
    Dopri5,
}

impl SolverKind {
    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Euler => "euler",
            SolverKind::Midpoint => "midpoint",
            SolverKind::Dopri5 => "dopri5",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: SolverKind,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_tol")]
    pub rtol: f64,
    #[serde(default = "default_tol")]
    pub atol: f64,
    #[serde(default)]
    pub record_full: bool,
    /// Cap on dopri5 step attempts.
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
}

fn default_steps() -> usize {
    1
}
fn default_tol() -> f64 {
    1e-5
}
fn default_max_attempts() -> usize {
    100_000
}

impl SolverConfig {
    pub fn euler(steps: usize) -> Self {
        Self::fixed(SolverKind::Euler, steps)
    }

    pub fn midpoint(steps: usize) -> Self {
        Self::fixed(SolverKind::Midpoint, steps)
    }

    pub fn dopri5(rtol: f64, atol: f64) -> Self {
        Self {
            kind: SolverKind::Dopri5,
            steps: 1,
            rtol,
            atol,
            record_full: false,
            max_attempts: default_max_attempts(),
        }
    }

    fn fixed(kind: SolverKind, steps: usize) -> Self {
        Self {
            kind,
            steps,
            rtol: default_tol(),
            atol: default_tol(),
            record_full: false,
            max_attempts: default_max_attempts(),
        }
    }

    pub fn recording(mut self) -> Self {
        self.record_full = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SolverKind::Euler | SolverKind::Midpoint if self.steps == 0 => {
                Err(Error::InvalidParameter("steps must be >= 1".into()))
            }
            SolverKind::Dopri5 if !(self.rtol > 0.0 && self.atol > 0.0) => Err(Error::InvalidParameter(format!(
                "tolerances must be positive (rtol = {}, atol = {})",
                self.rtol, self.atol
            ))),
            SolverKind::Dopri5 if self.max_attempts == 0 => {
                Err(Error::InvalidParameter("max_attempts must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for SolverConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            SolverKind::Dopri5 => write!(f, "dopri5(rtol={}, atol={})", self.rtol, self.atol),
            kind => write!(f, "{kind}({})", self.steps),
        }
    }
}

/// NFE of a fixed-step configuration.
pub fn nfe_of(cfg: &SolverConfig) -> Result<usize> {
    cfg.validate()?;
    match cfg.kind {
        SolverKind::Euler => Ok(cfg.steps),
        SolverKind::Midpoint => Ok(2 * cfg.steps),
        SolverKind::Dopri5 => Err(Error::InvalidParameter("dopri5 NFE is only known after solving".into())),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub nfe: usize,
    pub solver: SolverKind,
    /// Rejected dopri5 attempts (0 for fixed-step solvers).
    pub rejected: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.states.first().map_or(0, Vec::len);
        write!(w, "t")?;
        for j in 0..d {
            write!(w, ",dim{j}")?;
        }
        writeln!(w)?;
        for (t, s) in self.times.iter().zip(&self.states) {
            write_row(&mut w, None, *t, s)?;
        }
        Ok(())
    }
}

fn write_row<W: Write>(w: &mut W, id: Option<usize>, t: f64, s: &[f64]) -> std::io::Result<()> {
    if let Some(id) = id {
        write!(w, "{id},")?;
    }
    write!(w, "{t}")?;
    for v in s {
        write!(w, ",{v}")?;
    }
    writeln!(w)
}

/// Long-format export `trajectory,t,dim0,...` of several trajectories.
pub fn write_trajectories_csv<W: Write>(trajectories: &[Trajectory], mut w: W) -> std::io::Result<()> {
    let d = trajectories.first().and_then(|t| t.states.first()).map_or(0, Vec::len);
    write!(w, "trajectory,t")?;
    for j in 0..d {
        write!(w, ",dim{j}")?;
    }
    writeln!(w)?;
    for (id, traj) in trajectories.iter().enumerate() {
        for (t, s) in traj.times.iter().zip(&traj.states) {
            write_row(&mut w, Some(id), *t, s)?;
        }
    }
    Ok(())
}

/// Integrates from `t = 0` to `t = 1` starting at `z`.
pub fn integrate<F: VectorField + ?Sized>(field: &F, z: &[f64], cfg: &SolverConfig) -> Result<Trajectory> {
    integrate_span(field, z, 0.0, 1.0, cfg)
}

/// Integrates from `t0` to `t1` (either direction) starting at `z`.
pub fn integrate_span<F: VectorField + ?Sized>(
    field: &F,
    z: &[f64],
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if z.len() != field.dim() {
        return Err(Error::Dimension(format!("state of length {} for a {}-d field", z.len(), field.dim())));
    }
    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::Integration { t: t0, reason: "non-finite initial state".into() });
    }
    if !(t0.is_finite() && t1.is_finite()) || t0 == t1 {
        return Err(Error::InvalidParameter(format!("invalid time span [{t0}, {t1}]")));
    }
    match cfg.kind {
        SolverKind::Euler | SolverKind::Midpoint => fixed_step(field, z, t0, t1, cfg),
        SolverKind::Dopri5 => dopri5(field, z, t0, t1, cfg),
    }
}

struct Recorder {
    full: bool,
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
}

impl Recorder {
    fn new(full: bool, t0: f64, z: &[f64]) -> Self {
        Self { full, times: vec![t0], states: vec![z.to_vec()] }
    }

    fn push(&mut self, t: f64, y: &[f64], last: bool) {
        if self.full || last {
            self.times.push(t);
            self.states.push(y.to_vec());
        }
    }
}

fn check_state(y: &[f64], t_good: f64) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Integration { t: t_good, reason: "non-finite state".into() })
    }
}

fn axpy(out: &mut [f64], y: &[f64], h: f64, k: &[f64]) {
    for ((o, a), b) in out.iter_mut().zip(y).zip(k) {
        *o = a + h * b;
    }
}

fn fixed_step<F: VectorField + ?Sized>(field: &F, z: &[f64], t0: f64, t1: f64, cfg: &SolverConfig) -> Result<Trajectory> {
    let d = z.len();
    let n = cfg.steps;
    let h = (t1 - t0) / n as f64;
    let mut y = z.to_vec();
    let mut k = vec![0.0; d];
    let mut mid = vec![0.0; d];
    let mut nfe = 0;
    let mut rec = Recorder::new(cfg.record_full, t0, z);
    for i in 0..n {
        let t = t0 + i as f64 * h;
        field.eval(&y, t, &mut k);
        nfe += 1;
        if cfg.kind == SolverKind::Midpoint {
            axpy(&mut mid, &y, 0.5 * h, &k);
            field.eval(&mid, t + 0.5 * h, &mut k);
            nfe += 1;
        }
        for (a, b) in y.iter_mut().zip(&k) {
            *a += h * b;
        }
        check_state(&y, t)?;
        let t_next = if i + 1 == n { t1 } else { t0 + (i + 1) as f64 * h };
        rec.push(t_next, &y, i + 1 == n);
    }
    Ok(Trajectory { times: rec.times, states: rec.states, nfe, solver: cfg.kind, rejected: 0 })
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], cfg: &SolverConfig) -> f64 {
    let sum: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = cfg.atol + cfg.rtol * a.abs().max(b.abs());
            (e / sc) * (e / sc)
        })
        .sum();
    (sum / err.len().max(1) as f64).sqrt()
}

fn dopri5<F: VectorField + ?Sized>(field: &F, z: &[f64], t0: f64, t1: f64, cfg: &SolverConfig) -> Result<Trajectory> {
    let d = z.len();
    let span = t1 - t0;
    let dir = span.signum();
    let mut y = z.to_vec();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; d]; 7];
    let mut stage = vec![0.0; d];
    let mut y_new = vec![0.0; d];
    let mut err = vec![0.0; d];
    let mut rec = Recorder::new(cfg.record_full, t0, z);

    field.eval(&y, t0, &mut k[0]);
    let mut nfe = 1;
    check_state(&k[0], t0)?;

    // Initial step from the size of the state and slope.
    let scale = |v: &[f64]| -> f64 {
        let s: f64 = v
            .iter()
            .zip(&y)
            .map(|(a, b)| {
                let sc = cfg.atol + cfg.rtol * b.abs();
                (a / sc) * (a / sc)
            })
            .sum();
        (s / d.max(1) as f64).sqrt()
    };
    let (d0, d1) = (scale(&y), scale(&k[0]));
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(span.abs());

    let mut t = t0;
    let mut attempts = 0;
    let mut rejected = 0;
    let min_step = 1e-14 * span.abs().max(t0.abs()).max(1.0);
    loop {
        let remaining = (t1 - t) * dir;
        let last = h >= remaining;
        let step = if last { remaining } else { h };
        if attempts >= cfg.max_attempts {
            return Err(Error::Integration { t, reason: format!("exceeded {} step attempts", cfg.max_attempts) });
        }
        if step < min_step {
            return Err(Error::Integration { t, reason: "step size underflow".into() });
        }
        let hs = dir * step;
        attempts += 1;
        for s in 1..7 {
            stage.copy_from_slice(&y);
            for (j, a) in A[s].iter().enumerate().take(s) {
                if *a != 0.0 {
                    for (o, kv) in stage.iter_mut().zip(&k[j]) {
                        *o += hs * a * kv;
                    }
                }
            }
            if s == 6 {
                y_new.copy_from_slice(&stage);
            }
            let t_stage = if C[s] == 1.0 && last { t1 } else { t + C[s] * hs };
            field.eval(&stage, t_stage, &mut k[s]);
            nfe += 1;
        }
        for (i, e) in err.iter_mut().enumerate() {
            *e = hs * (0..7).map(|s| E[s] * k[s][i]).sum::<f64>();
        }
        let finite = y_new.iter().all(|v| v.is_finite()) && k[6].iter().all(|v| v.is_finite());
        let en = if finite { error_norm(&err, &y, &y_new, cfg) } else { f64::INFINITY };
        if en <= 1.0 {
            t = if last { t1 } else { t + hs };
            y.copy_from_slice(&y_new);
            k.swap(0, 6);
            rec.push(t, &y, last);
            if last {
                break;
            }
            let factor = if en == 0.0 { 10.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 10.0) };
            h = step * factor;
        } else {
            rejected += 1;
            let factor = if en.is_finite() { (0.9 * en.powf(-0.2)).clamp(0.2, 1.0) } else { 0.2 };
            h = step * factor;
        }
    }
    Ok(Trajectory { times: rec.times, states: rec.states, nfe, solver: SolverKind::Dopri5, rejected })
}

/// Integrates every row of `noise` and returns the final states.
pub fn integrate_rows<F: VectorField + ?Sized>(field: &F, noise: &Matrix, cfg: &SolverConfig) -> Result<Matrix> {
    let mut out = Matrix::zeros(noise.rows(), noise.cols());
    for (i, z) in noise.iter_rows().enumerate() {
        let traj = integrate(field, z, cfg)?;
        out.row_mut(i).copy_from_slice(traj.final_state());
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureReport {
    /// `1 - <v_i, v_{i+1}>` of unit-normalised field values at consecutive grid times.
    pub series: Vec<f64>,
    pub mean: f64,
    /// Pairs where one of the two field values had zero norm.
    pub skipped: usize,
}

fn unit(v: &mut [f64]) -> bool {
    let n = crate::linalg::norm(v);
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    for x in v.iter_mut() {
        *x /= n;
    }
    true
}

/// Trajectory curvature on a fixed-step grid of `cfg.steps` intervals.
/// Skipped pairs are marked `NaN` in the series and excluded from the mean.
pub fn curvature<F: VectorField + ?Sized>(field: &F, z: &[f64], cfg: &SolverConfig) -> Result<CurvatureReport> {
    if cfg.kind == SolverKind::Dopri5 {
        return Err(Error::InvalidParameter("curvature needs a fixed-step solver".into()));
    }
    if cfg.steps < 2 {
        return Err(Error::InvalidParameter("curvature needs at least 2 steps".into()));
    }
    let traj = integrate(field, z, &cfg.recording())?;
    let mut prev = field.eval_vec(&traj.states[0], traj.times[0]);
    let mut prev_ok = unit(&mut prev);
    let mut cur = vec![0.0; z.len()];
    let mut series = Vec::with_capacity(cfg.steps);
    let mut skipped = 0;
    let (mut sum, mut count) = (0.0, 0usize);
    for (t, y) in traj.times.iter().zip(&traj.states).skip(1) {
        field.eval(y, *t, &mut cur);
        let ok = unit(&mut cur);
        if prev_ok && ok {
            let c = 1.0 - crate::linalg::dot(&prev, &cur);
            series.push(c);
            sum += c;
            count += 1;
        } else {
            series.push(f64::NAN);
            skipped += 1;
        }
        std::mem::swap(&mut prev, &mut cur);
        prev_ok = ok;
    }
    let mean = if count == 0 { f64::NAN } else { sum / count as f64 };
    Ok(CurvatureReport { series, mean, skipped })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchCurvature {
    /// Mean over all non-skipped pairs of all trajectories.
    pub mean: f64,
    pub stderr: f64,
    pub per_trajectory: Vec<f64>,
    pub skipped: usize,
}

pub fn batch_curvature<F: VectorField + ?Sized>(field: &F, noise: &Matrix, cfg: &SolverConfig) -> Result<BatchCurvature> {
    let mut per_trajectory = Vec::with_capacity(noise.rows());
    let mut skipped = 0;
    let (mut sum, mut count) = (0.0, 0usize);
    for z in noise.iter_rows() {
        let r = curvature(field, z, cfg)?;
        skipped += r.skipped;
        for c in r.series.iter().filter(|c| !c.is_nan()) {
            sum += c;
            count += 1;
        }
        per_trajectory.push(r.mean);
    }
    let valid: Vec<f64> = per_trajectory.iter().copied().filter(|m| !m.is_nan()).collect();
    let (_, stderr) = crate::linalg::mean_and_stderr(&valid);
    let mean = if count == 0 { f64::NAN } else { sum / count as f64 };
    Ok(BatchCurvature { mean, stderr, per_trajectory, skipped })
}
