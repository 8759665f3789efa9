//! Closed-loop platoon dynamics.
//!
//! Three coordinate systems are supported: positions/velocities of all
//! vehicles (leader included), spacings `x` with velocity errors
//! `z = v − v_d`, and spacings with the boundary-layer error `y = z − h(x)`.
//! Simulations can run in the position/velocity frame with either controller
//! or in the `(x, y)` frame for the range-`r` controller; every trajectory
//! records `x`, `y`, `z` and the lumped disturbance `w` regardless.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::formation::{self, FormationLaw};
use crate::integrate::{integrate, OdeSystem, StepControl};
use crate::signals::Signal;
use crate::{Error, Result};

/// Masses, formation law, communication range and velocity-tracking gains.
#[derive(Clone, Debug)]
pub struct PlatoonConfig {
    masses: Vec<f64>,
    law: Arc<dyn FormationLaw>,
    range: usize,
    gains: Vec<f64>,
    k_min: f64,
}

impl PlatoonConfig {
    pub fn new(masses: Vec<f64>, law: Arc<dyn FormationLaw>, range: usize, gains: Vec<f64>) -> Result<Self> {
        let n = law.len();
        if masses.len() != n || gains.len() != n {
            return Err(Error::Config(format!(
                "{n} vehicles but {} masses and {} gains",
                masses.len(),
                gains.len()
            )));
        }
        if range == 0 || range > n {
            return Err(Error::Config(format!("communication range {range} must lie in 1..={n}")));
        }
        if let Some(bad) = masses.iter().chain(&gains).find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Config(format!("masses and gains must be positive, got {bad}")));
        }
        let k_min = gains.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self {
            masses,
            law,
            range,
            gains,
            k_min,
        })
    }

    /// Unit masses and the same gain `k` for every vehicle.
    pub fn uniform(law: Arc<dyn FormationLaw>, range: usize, k: f64) -> Result<Self> {
        let n = law.len();
        Self::new(vec![1.0; n], law, range, vec![k; n])
    }

    pub fn with_range(&self, range: usize) -> Result<Self> {
        Self::new(self.masses.clone(), Arc::clone(&self.law), range, self.gains.clone())
    }

    /// Same relative gains `k̄`, rescaled so that `1 / k_min = eps`.
    pub fn with_epsilon(&self, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::Config(format!("ε must be positive, got {eps}")));
        }
        let gains = self.relative_gains().iter().map(|kb| kb / eps).collect();
        Self::new(self.masses.clone(), Arc::clone(&self.law), self.range, gains)
    }

    pub fn n(&self) -> usize {
        self.law.len()
    }

    pub fn law(&self) -> &dyn FormationLaw {
        self.law.as_ref()
    }

    pub fn law_arc(&self) -> Arc<dyn FormationLaw> {
        Arc::clone(&self.law)
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn range(&self) -> usize {
        self.range
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn k_min(&self) -> f64 {
        self.k_min
    }

    /// `k̄_i = k_i / k_min ≥ 1`.
    pub fn relative_gains(&self) -> Vec<f64> {
        self.gains.iter().map(|k| k / self.k_min).collect()
    }

    /// `ε = 1 / k_min`.
    pub fn epsilon(&self) -> f64 {
        1.0 / self.k_min
    }
}

/// One affine piece `v(t) = intercept + slope · t` starting at `start`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub intercept: f64,
    pub slope: f64,
}

impl Segment {
    pub fn value(&self, t: f64) -> f64 {
        self.intercept + self.slope * t
    }
}

/// Piecewise-affine leader velocity. The derivative is right-continuous:
/// at a breakpoint it takes the slope of the segment that starts there.
#[derive(Clone, Debug, PartialEq)]
pub struct LeaderProfile {
    segments: Vec<Segment>,
}

impl LeaderProfile {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        match segments.first() {
            Some(s) if s.start == 0.0 => {}
            _ => return Err(Error::Config("leader profile must start at t = 0".into())),
        }
        if segments.windows(2).any(|w| !(w[1].start > w[0].start)) {
            return Err(Error::Config("leader segments must have increasing start times".into()));
        }
        Ok(Self { segments })
    }

    pub fn constant(v0: f64) -> Self {
        Self {
            segments: vec![Segment {
                start: 0.0,
                intercept: v0,
                slope: 0.0,
            }],
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    fn segment(&self, t: f64) -> &Segment {
        let k = self.segments.partition_point(|s| s.start <= t);
        &self.segments[k.saturating_sub(1)]
    }

    pub fn velocity(&self, t: f64) -> f64 {
        self.segment(t).value(t)
    }

    pub fn acceleration(&self, t: f64) -> f64 {
        self.segment(t).slope
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        self.segments[1..].iter().map(|s| s.start).collect()
    }

    /// Largest jump of the velocity across a breakpoint.
    pub fn max_junction_mismatch(&self) -> f64 {
        self.segments
            .windows(2)
            .map(|w| (w[0].value(w[1].start) - w[1].value(w[1].start)).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_acceleration(&self) -> f64 {
        self.segments.iter().map(|s| s.slope.abs()).fold(0.0, f64::max)
    }
}

/// External specific forces `θ_i / m_i` (m/s²) and the leader profile.
#[derive(Clone, Debug)]
pub struct DisturbanceSpec {
    specific_force: Signal,
    leader: LeaderProfile,
}

impl DisturbanceSpec {
    pub fn new(specific_force: Signal, leader: LeaderProfile) -> Self {
        Self {
            specific_force,
            leader,
        }
    }

    /// Builds `θ_i / m_i` from forces in newtons.
    pub fn from_forces(theta: Signal, masses: &[f64], leader: LeaderProfile) -> Result<Self> {
        if theta.dim() != masses.len() {
            return Err(Error::Dimension {
                expected: masses.len(),
                got: theta.dim(),
            });
        }
        let masses = masses.to_vec();
        let horizon = theta.horizon();
        let specific = Signal::new(masses.len(), horizon, move |t, out| {
            theta.eval_unchecked(t, out);
            for (o, m) in out.iter_mut().zip(&masses) {
                *o /= m;
            }
        });
        Ok(Self::new(specific, leader))
    }

    /// No external forces, constant leader velocity.
    pub fn quiet(n: usize, v0: f64) -> Self {
        Self::new(Signal::zero(n, f64::INFINITY), LeaderProfile::constant(v0))
    }

    pub fn dim(&self) -> usize {
        self.specific_force.dim()
    }

    pub fn leader(&self) -> &LeaderProfile {
        &self.leader
    }

    pub fn specific_force(&self) -> &Signal {
        &self.specific_force
    }

    pub fn specific_force_into(&self, t: f64, out: &mut [f64]) {
        self.specific_force.eval_unchecked(t, out)
    }

    /// `w_i = θ_i / m_i − v̇0`.
    pub fn w_into(&self, t: f64, out: &mut [f64]) {
        self.specific_force.eval_unchecked(t, out);
        let a0 = self.leader.acceleration(t);
        out.iter_mut().for_each(|v| *v -= a0);
    }

    pub fn w(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.w_into(t, &mut out);
        out
    }
}

/// Positions and velocities, index 0 is the leader.
#[derive(Clone, Debug, PartialEq)]
pub struct PvState {
    pub p: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct XzState {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct XyState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl PvState {
    pub fn n(&self) -> usize {
        self.p.len().saturating_sub(1)
    }

    pub fn spacings(&self) -> Vec<f64> {
        self.p.windows(2).map(|w| w[0] - w[1]).collect()
    }

    /// `x_i = p_{i−1} − p_i`, `z_i = v_i − d_i(x) − v_0`.
    pub fn to_xz(&self, law: &dyn FormationLaw) -> Result<XzState> {
        if self.p.len() != law.len() + 1 || self.v.len() != self.p.len() {
            return Err(Error::Dimension {
                expected: law.len() + 1,
                got: self.p.len().min(self.v.len()),
            });
        }
        let x = self.spacings();
        let vd = formation::desired_velocity(law, &x, self.v[0])?;
        let z = self.v[1..].iter().zip(&vd).map(|(v, d)| v - d).collect();
        Ok(XzState { x, z })
    }
}

impl XzState {
    pub fn to_xy(&self, law: &dyn FormationLaw) -> Result<XyState> {
        let h = formation::steady_state_h(law, &self.x)?;
        let y = self.z.iter().zip(&h).map(|(z, h)| z - h).collect();
        Ok(XyState { x: self.x.clone(), y })
    }

    /// Positions from the leader position `p0`, velocities from `v0`.
    pub fn to_pv(&self, law: &dyn FormationLaw, p0: f64, v0: f64) -> Result<PvState> {
        let vd = formation::desired_velocity(law, &self.x, v0)?;
        let mut p = Vec::with_capacity(self.x.len() + 1);
        p.push(p0);
        for xi in &self.x {
            let prev = *p.last().unwrap();
            p.push(prev - xi);
        }
        let mut v = vec![v0];
        v.extend(self.z.iter().zip(&vd).map(|(z, d)| z + d));
        Ok(PvState { p, v })
    }
}

impl XyState {
    pub fn to_xz(&self, law: &dyn FormationLaw) -> Result<XzState> {
        let h = formation::steady_state_h(law, &self.x)?;
        let z = self.y.iter().zip(&h).map(|(y, h)| y + h).collect();
        Ok(XzState { x: self.x.clone(), z })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Controller {
    /// Each vehicle uses the formation terms of its `r` predecessors and the
    /// velocity of the vehicle `r` places ahead.
    RangeR,
    /// Nearest-neighbour formation terms plus the leader velocity.
    StringStable,
}

/// Control per unit mass for spacings `x` and velocities `v` (leader first).
fn control_into(cfg: &PlatoonConfig, controller: Controller, x: &[f64], v: &[f64], out: &mut [f64]) {
    let law = cfg.law();
    let n = cfg.n();
    let r = cfg.range;
    // prefix[i] = Σ_{j<i} d_j
    let mut prefix = vec![0.0; n + 1];
    let mut d = vec![0.0; n];
    for q in 0..n {
        d[q] = law.value(q, x);
        prefix[q + 1] = prefix[q] + d[q];
    }
    for q in 0..n {
        let i = q + 1;
        let (a, b) = law.partials(q, x);
        let feedback = match controller {
            Controller::RangeR => {
                // Σ_{j=0}^{r−1} d_{i−j} over existing vehicles, v_{i−r} with v_k = v0 for k ≤ 0
                let lo = i.saturating_sub(r);
                v[i] - (prefix[i] - prefix[lo]) - v[lo]
            }
            Controller::StringStable => v[i] - d[q] - v[0],
        };
        let mut u = -cfg.gains[q] * feedback + a * (v[i - 1] - v[i]);
        if q + 1 < n {
            u += b * (v[i] - v[i + 1]);
        }
        out[q] = u;
    }
}

fn control(cfg: &PlatoonConfig, controller: Controller, state: &PvState) -> Result<Vec<f64>> {
    let n = cfg.n();
    if state.p.len() != n + 1 || state.v.len() != n + 1 {
        return Err(Error::Dimension {
            expected: n + 1,
            got: state.p.len().min(state.v.len()),
        });
    }
    let x = state.spacings();
    let mut out = vec![0.0; n];
    control_into(cfg, controller, &x, &state.v, &mut out);
    Ok(out)
}

/// `u_i / m_i` of the range-`r` protocol.
pub fn control_range_r(cfg: &PlatoonConfig, state: &PvState) -> Result<Vec<f64>> {
    control(cfg, Controller::RangeR, state)
}

/// `u_i / m_i` of the nearest-neighbour protocol with leader velocity feedback.
pub fn control_string_stable(cfg: &PlatoonConfig, state: &PvState) -> Result<Vec<f64>> {
    control(cfg, Controller::StringStable, state)
}

/// `G`: −1 on the diagonal, +1 on the first subdiagonal.
pub fn matrix_g(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            -1.0
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    })
}

/// `A`: `−k̄_i` on the diagonal and `k̄_i` at column `i − r`.
pub fn matrix_a(cfg: &PlatoonConfig) -> DMatrix<f64> {
    let kb = cfg.relative_gains();
    let r = cfg.range;
    DMatrix::from_fn(cfg.n(), cfg.n(), |i, j| {
        if i == j {
            -kb[i]
        } else if i == j + r {
            kb[i]
        } else {
            0.0
        }
    })
}

/// `F(x) = −ε (∂h/∂x) G` for an explicit `ε`.
pub fn matrix_f_with(law: &dyn FormationLaw, eps: f64, x: &[f64]) -> Result<DMatrix<f64>> {
    let h = formation::steady_state_jacobian(law, x)?;
    Ok(-(h * matrix_g(law.len())) * eps)
}

/// `F(x) = −ε (∂h/∂x) G` with `ε = 1 / k_min`. Lower triangular; the
/// diagonal holds `ε ∂d_{i−1}/∂x_i`.
pub fn matrix_f(cfg: &PlatoonConfig, x: &[f64]) -> Result<DMatrix<f64>> {
    matrix_f_with(cfg.law(), cfg.epsilon(), x)
}

/// Jacobian of the fast subsystem, `J̄(x) = A + F(x)`.
pub fn fast_jacobian(cfg: &PlatoonConfig, x: &[f64]) -> Result<DMatrix<f64>> {
    Ok(matrix_a(cfg) + matrix_f(cfg, x)?)
}

/// Jacobian of `f = −d`.
pub fn spacing_jacobian(law: &dyn FormationLaw, x: &[f64]) -> Result<DMatrix<f64>> {
    let n = law.len();
    if x.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: x.len(),
        });
    }
    let mut j = DMatrix::zeros(n, n);
    for q in 0..n {
        let (a, b) = law.partials(q, x);
        j[(q, q)] = -a;
        if q + 1 < n {
            j[(q, q + 1)] = -b;
        }
    }
    Ok(j)
}

/// Jacobian of `f₁` with `f₁_i = d_{i−1} − d_i`, the spacing field of the
/// nearest-neighbour controller.
pub fn string_jacobian(law: &dyn FormationLaw, x: &[f64]) -> Result<DMatrix<f64>> {
    let mut j = spacing_jacobian(law, x)?;
    for q in 1..law.len() {
        let (a, b) = law.partials(q - 1, x);
        j[(q, q - 1)] += a;
        j[(q, q)] += b;
    }
    Ok(j)
}

fn xy_rhs_into(
    cfg: &PlatoonConfig,
    kb: &[f64],
    w: &[f64],
    x: &[f64],
    y: &[f64],
    dx: &mut [f64],
    dy: &mut [f64],
) {
    let law = cfg.law();
    let n = cfg.n();
    let r = cfg.range;
    let eps = cfg.epsilon();
    for q in 0..n {
        let prev = if q > 0 { y[q - 1] } else { 0.0 };
        dx[q] = -law.value(q, x) - y[q] + prev;
    }
    // (∂h/∂x) ẋ: prefix sums of a_j ẋ_j + b_j ẋ_{j+1}
    let mut hdot = 0.0;
    for q in 0..n {
        let ay = if q >= r { -kb[q] * y[q] + kb[q] * y[q - r] } else { -kb[q] * y[q] };
        dy[q] = ay / eps - hdot + w[q];
        let (a, b) = law.partials(q, x);
        hdot += a * dx[q] + if q + 1 < n { b * dx[q + 1] } else { 0.0 };
    }
}

/// Vector field of the `(x, y)` system in real time:
/// `ẋ = f(x) + G y`, `ẏ = (A y − ε (∂h/∂x)(f(x) + G y) + ε w(t)) / ε`.
pub fn rhs_xy(
    cfg: &PlatoonConfig,
    dist: &DisturbanceSpec,
    t: f64,
    x: &[f64],
    y: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = cfg.n();
    for len in [x.len(), y.len(), dist.dim()] {
        if len != n {
            return Err(Error::Dimension { expected: n, got: len });
        }
    }
    let w = dist.w(t);
    let mut dx = vec![0.0; n];
    let mut dy = vec![0.0; n];
    xy_rhs_into(cfg, &cfg.relative_gains(), &w, x, y, &mut dx, &mut dy);
    Ok((dx, dy))
}

/// Position/velocity closed loop; state `[p_0, …, p_n, v_1, …, v_n]`.
pub struct PvClosedLoop<'a> {
    pub cfg: &'a PlatoonConfig,
    pub dist: &'a DisturbanceSpec,
    pub controller: Controller,
}

impl OdeSystem for PvClosedLoop<'_> {
    fn dim(&self) -> usize {
        2 * self.cfg.n() + 1
    }

    fn rhs(&self, t: f64, s: &[f64], ds: &mut [f64]) {
        let n = self.cfg.n();
        let mut v = Vec::with_capacity(n + 1);
        v.push(self.dist.leader.velocity(t));
        v.extend_from_slice(&s[n + 1..]);
        let x: Vec<f64> = s[..=n].windows(2).map(|w| w[0] - w[1]).collect();
        ds[..=n].copy_from_slice(&v);
        let (_, acc) = ds.split_at_mut(n + 1);
        control_into(self.cfg, self.controller, &x, &v, acc);
        let mut theta = vec![0.0; n];
        self.dist.specific_force_into(t, &mut theta);
        acc.iter_mut().zip(&theta).for_each(|(a, th)| *a += th);
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.dist.leader.breakpoints()
    }
}

/// `(x, y)` system; state `[x, y]`.
pub struct XySystem<'a> {
    cfg: &'a PlatoonConfig,
    dist: &'a DisturbanceSpec,
    kb: Vec<f64>,
}

impl<'a> XySystem<'a> {
    pub fn new(cfg: &'a PlatoonConfig, dist: &'a DisturbanceSpec) -> Self {
        Self {
            cfg,
            dist,
            kb: cfg.relative_gains(),
        }
    }
}

impl OdeSystem for XySystem<'_> {
    fn dim(&self) -> usize {
        2 * self.cfg.n()
    }

    fn rhs(&self, t: f64, s: &[f64], ds: &mut [f64]) {
        let n = self.cfg.n();
        let mut w = vec![0.0; n];
        self.dist.w_into(t, &mut w);
        let (dx, dy) = ds.split_at_mut(n);
        xy_rhs_into(self.cfg, &self.kb, &w, &s[..n], &s[n..], dx, dy);
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.dist.leader.breakpoints()
    }
}

/// `ẋ = f(x) + u(t)` with `y` frozen; `u` defaults to zero.
pub struct FrozenSpacing<'a> {
    pub law: &'a dyn FormationLaw,
    pub input: Option<Signal>,
}

impl OdeSystem for FrozenSpacing<'_> {
    fn dim(&self) -> usize {
        self.law.len()
    }

    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        if let Some(u) = &self.input {
            u.eval_unchecked(t, dx);
        } else {
            dx.fill(0.0);
        }
        for (q, d) in dx.iter_mut().enumerate() {
            *d -= self.law.value(q, x);
        }
    }
}

/// Follower spacings and velocities at `t = 0`; the leader starts at
/// `p_0 = 0` with the profile velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialCondition {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl InitialCondition {
    /// Spacings `x`, every vehicle at the leader velocity.
    pub fn at_leader_speed(x: Vec<f64>, v0: f64) -> Self {
        let v = vec![v0; x.len()];
        Self { x, v }
    }

    fn pv(&self, v0: f64) -> PvState {
        let mut p = vec![0.0];
        for xi in &self.x {
            let prev = *p.last().unwrap();
            p.push(prev - xi);
        }
        let mut v = vec![v0];
        v.extend_from_slice(&self.v);
        PvState { p, v }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Frame {
    Pv,
    Xy,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimOptions {
    pub horizon: f64,
    pub step: StepControl,
    pub output_interval: f64,
}

/// Fixed RK4 step resolving the fast subsystem: `min(10⁻³, ε / 20)`.
pub fn default_step(eps: f64) -> f64 {
    (1e-3f64).min(eps / 20.0)
}

impl SimOptions {
    pub fn for_config(cfg: &PlatoonConfig, horizon: f64) -> Self {
        Self {
            horizon,
            step: StepControl::Fixed(default_step(cfg.epsilon())),
            output_interval: 0.01,
        }
    }
}

/// Sampled platoon trajectory with every coordinate system filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub targets: Vec<f64>,
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub v0: Vec<f64>,
}

impl Trajectory {
    pub fn n(&self) -> usize {
        self.targets.len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn spacing_error(&self, k: usize) -> Vec<f64> {
        self.x[k].iter().zip(&self.targets).map(|(x, e)| x - e).collect()
    }

    /// `max_t max_i |x_i(t) − e_i|`.
    pub fn max_overshoot(&self) -> f64 {
        (0..self.len())
            .flat_map(|k| self.spacing_error(k))
            .fold(0.0, |acc, v| acc.max(v.abs()))
    }

    fn from_states<F>(
        cfg: &PlatoonConfig,
        dist: &DisturbanceSpec,
        times: Vec<f64>,
        states: &[Vec<f64>],
        mut to_xz: F,
    ) -> Result<Self>
    where
        F: FnMut(f64, &[f64]) -> Result<(XzState, Vec<f64>)>,
    {
        let law = cfg.law();
        let mut traj = Trajectory {
            targets: law.targets().to_vec(),
            times: Vec::with_capacity(times.len()),
            x: Vec::with_capacity(times.len()),
            y: Vec::with_capacity(times.len()),
            z: Vec::with_capacity(times.len()),
            w: Vec::with_capacity(times.len()),
            v0: Vec::with_capacity(times.len()),
        };
        for (t, s) in times.into_iter().zip(states) {
            let (xz, y) = to_xz(t, s)?;
            traj.w.push(dist.w(t));
            traj.v0.push(dist.leader.velocity(t));
            traj.times.push(t);
            traj.x.push(xz.x);
            traj.z.push(xz.z);
            traj.y.push(y);
        }
        Ok(traj)
    }

    /// CSV with header `t,x_1..x_n,y_1..y_n,z_1..z_n,w_1..w_n,v0`; numbers
    /// use shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.n();
        let mut header = vec!["t".to_string()];
        for ch in ["x", "y", "z", "w"] {
            header.extend((1..=n).map(|i| format!("{ch}_{i}")));
        }
        header.push("v0".into());
        writeln!(out, "{}", header.join(","))?;
        let mut line = String::new();
        for k in 0..self.len() {
            line.clear();
            line.push_str(&self.times[k].to_string());
            for row in [&self.x[k], &self.y[k], &self.z[k], &self.w[k]] {
                for v in row.iter() {
                    line.push(',');
                    line.push_str(&v.to_string());
                }
            }
            line.push(',');
            line.push_str(&self.v0[k].to_string());
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Simulates the closed loop from `init` over `[0, opts.horizon]`.
pub fn simulate(
    cfg: &PlatoonConfig,
    dist: &DisturbanceSpec,
    init: &InitialCondition,
    controller: Controller,
    frame: Frame,
    opts: &SimOptions,
) -> Result<Trajectory> {
    let n = cfg.n();
    let law = cfg.law();
    if init.x.len() != n || init.v.len() != n || dist.dim() != n {
        return Err(Error::Dimension {
            expected: n,
            got: init.x.len().min(init.v.len()).min(dist.dim()),
        });
    }
    let v0 = dist.leader.velocity(0.0);
    let pv0 = init.pv(v0);
    match frame {
        Frame::Pv => {
            let sys = PvClosedLoop {
                cfg,
                dist,
                controller,
            };
            let mut s0 = pv0.p.clone();
            s0.extend_from_slice(&pv0.v[1..]);
            let sol = integrate(&sys, 0.0, opts.horizon, &s0, opts.step, opts.output_interval)?;
            Trajectory::from_states(cfg, dist, sol.times, &sol.states, |t, s| {
                let mut v = vec![dist.leader.velocity(t)];
                v.extend_from_slice(&s[n + 1..]);
                let pv = PvState { p: s[..=n].to_vec(), v };
                let xz = pv.to_xz(law)?;
                let y = xz.to_xy(law)?.y;
                Ok((xz, y))
            })
        }
        Frame::Xy => {
            if controller != Controller::RangeR {
                return Err(Error::Config(
                    "the (x, y) frame describes the range-r controller only".into(),
                ));
            }
            let xy0 = pv0.to_xz(law)?.to_xy(law)?;
            let sys = XySystem::new(cfg, dist);
            let mut s0 = xy0.x.clone();
            s0.extend_from_slice(&xy0.y);
            let sol = integrate(&sys, 0.0, opts.horizon, &s0, opts.step, opts.output_interval)?;
            Trajectory::from_states(cfg, dist, sol.times, &sol.states, |_, s| {
                let xy = XyState {
                    x: s[..n].to_vec(),
                    y: s[n..].to_vec(),
                };
                let xz = xy.to_xz(law)?;
                Ok((xz, xy.y))
            })
        }
    }
}
