//! Analytic disturbance envelopes and their verification against sampled
//! trajectories.

use std::fmt::Write as _;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::dynamics::{simulate, Controller, DisturbanceSpec, Frame, LeaderProfile, PlatoonConfig, SimOptions, Trajectory};
use crate::formation::{self, FormationLaw};
use crate::scenario::{self, InitialPreset};
use crate::signals::{norm_inf, VectorNorm};
use crate::{Error, Result};

/// `e^{−ηt} x0 + u/η`, or with `refined` the sharper `e^{−ηt} x0 + (1 − e^{−ηt}) u/η`.
pub fn iss_envelope(eta: f64, x0_norm: f64, u_sup: f64, t: f64, refined: bool) -> f64 {
    let decay = (-eta * t).exp();
    let gain = if refined { (1.0 - decay) / eta } else { 1.0 / eta };
    decay * x0_norm + gain * u_sup
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvelopeKind {
    IssBasic,
    IssRefined,
    Thm1X,
    Thm1XRefined,
    Thm1Y,
    Thm2String,
}

impl EnvelopeKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::IssBasic => "iss_basic",
            Self::IssRefined => "iss_refined",
            Self::Thm1X => "x",
            Self::Thm1XRefined => "x_refined",
            Self::Thm1Y => "y",
            Self::Thm2String => "string",
        }
    }

    /// Whether the envelope bounds `y` rather than the spacing error.
    pub fn bounds_y(self) -> bool {
        self == Self::Thm1Y
    }
}

/// Parameters of one envelope.
///
/// `eta1` is the slow rate (for the ISS kinds the only rate, for the string
/// bound the rate `η` of the heterogeneous law); `x0` is the initial norm of
/// the bounded channel (`|x(0) − e|∞` or `|y(0)|_*`); `z0` is used by the
/// string bound only. When `input_sup` is set it replaces the running
/// supremum of the recorded input.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeSpec {
    pub kind: EnvelopeKind,
    pub eta1: f64,
    pub eta2: f64,
    pub eps: f64,
    pub g_norm: f64,
    pub sigma: f64,
    pub x0: f64,
    pub z0: f64,
    pub input_sup: Option<f64>,
}

impl EnvelopeSpec {
    pub fn new(kind: EnvelopeKind, eta1: f64, eta2: f64, eps: f64, g_norm: f64, sigma: f64, x0: f64) -> Result<Self> {
        let spec = Self {
            kind,
            eta1,
            eta2,
            eps,
            g_norm,
            sigma,
            x0,
            z0: 0.0,
            input_sup: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let positive = [("eta1", self.eta1), ("eta2", self.eta2), ("eps", self.eps)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("envelope `{name}` must be positive, got {v}")));
            }
        }
        let nonneg = [("sigma", self.sigma), ("g_norm", self.g_norm), ("x0", self.x0), ("z0", self.z0)];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("envelope `{name}` must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    /// Envelope value at `t` for the running input supremum `w_sup`.
    pub fn value(&self, t: f64, w_sup: f64) -> f64 {
        let w = self.input_sup.unwrap_or(w_sup);
        match self.kind {
            EnvelopeKind::IssBasic => iss_envelope(self.eta1, self.x0, w, t, false),
            EnvelopeKind::IssRefined => iss_envelope(self.eta1, self.x0, w, t, true),
            EnvelopeKind::Thm1X => thm1_x_envelope(self, w, t),
            EnvelopeKind::Thm1XRefined => thm1_x_refined_envelope(self, w, t),
            EnvelopeKind::Thm1Y => thm1_y_envelope(self, w, t),
            EnvelopeKind::Thm2String => thm2_string_bound(self.eta1, self.eps, self.x0, self.z0, w),
        }
    }

    /// Value as `t → ∞` with a constant input bound.
    pub fn asymptote(&self, w_sup: f64) -> f64 {
        self.value(f64::INFINITY, w_sup)
    }
}

/// `e^{−η₁t}|x(0) − e|∞ + ε‖G‖_{∞,*}‖w_t‖_*/(η₁η₂) + σ`.
pub fn thm1_x_envelope(spec: &EnvelopeSpec, w_sup: f64, t: f64) -> f64 {
    (-spec.eta1 * t).exp() * spec.x0 + spec.eps * spec.g_norm * w_sup / (spec.eta1 * spec.eta2) + spec.sigma
}

/// `(1 − e^{−η₁t})(1 − e^{−η₂t/ε}) / (η₁η₂)`.
pub fn refined_gain(eta1: f64, eta2: f64, eps: f64, t: f64) -> f64 {
    (1.0 - (-eta1 * t).exp()) * (1.0 - (-eta2 * t / eps).exp()) / (eta1 * eta2)
}

/// As [`thm1_x_envelope`] with the input gain `1/(η₁η₂)` replaced by
/// [`refined_gain`].
pub fn thm1_x_refined_envelope(spec: &EnvelopeSpec, w_sup: f64, t: f64) -> f64 {
    (-spec.eta1 * t).exp() * spec.x0
        + refined_gain(spec.eta1, spec.eta2, spec.eps, t) * spec.eps * spec.g_norm * w_sup
        + spec.sigma
}

/// `e^{−η₂t/ε}|y(0)|_* + ε‖w_t‖_*/η₂ + σ`.
pub fn thm1_y_envelope(spec: &EnvelopeSpec, w_sup: f64, t: f64) -> f64 {
    (-spec.eta2 * t / spec.eps).exp() * spec.x0 + spec.eps * w_sup / spec.eta2 + spec.sigma
}

/// `√⌈n/r⌉`.
pub fn corollary1_factor(n: usize, r: usize) -> f64 {
    (n.div_ceil(r) as f64).sqrt()
}

/// `c = q̄ ‖G‖_{∞,*} / (η₁η₂)`.
pub fn corollary1_constant(max_weight: f64, g_norm: f64, eta1: f64, eta2: f64) -> f64 {
    max_weight * g_norm / (eta1 * eta2)
}

/// `|x(0) − e|∞ + ε c √⌈n/r⌉ ‖w‖∞ + σ`.
pub fn corollary1_bound(n: usize, r: usize, c_const: f64, eps: f64, sigma: f64, x0_err_inf: f64, w_sup_inf: f64) -> f64 {
    x0_err_inf + eps * c_const * corollary1_factor(n, r) * w_sup_inf + sigma
}

/// `|x(0) − e|∞ + (2/η)(|z(0)|∞ + ε‖w‖∞)`; contains no platoon length.
pub fn thm2_string_bound(eta: f64, eps: f64, x0_err_inf: f64, z0_inf: f64, w_sup_inf: f64) -> f64 {
    x0_err_inf + 2.0 / eta * (z0_inf + eps * w_sup_inf)
}

/// Comparison of a trajectory norm with an envelope on the sample grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub kind: EnvelopeKind,
    pub times: Vec<f64>,
    pub traj_norm: Vec<f64>,
    pub envelope: Vec<f64>,
    /// `max_t (traj_norm − envelope)`; nonpositive iff the bound holds.
    pub max_violation: f64,
    pub first_violation: Option<f64>,
    pub min_margin: f64,
    pub mean_margin: f64,
}

impl BoundReport {
    pub fn holds(&self) -> bool {
        self.max_violation <= 0.0
    }

    pub fn violations(&self) -> usize {
        self.traj_norm.iter().zip(&self.envelope).filter(|(n, e)| n > e).count()
    }

    /// Columns `t,traj_norm,envelope,margin`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,traj_norm,envelope,margin")?;
        for ((t, n), e) in self.times.iter().zip(&self.traj_norm).zip(&self.envelope) {
            writeln!(out, "{t},{n},{e},{}", e - n)?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        writeln!(s, "envelope = {}", self.kind.name()).unwrap();
        writeln!(s, "verdict = {}", if self.holds() { "holds" } else { "violated" }).unwrap();
        writeln!(s, "samples = {}", self.times.len()).unwrap();
        writeln!(s, "violations = {}", self.violations()).unwrap();
        writeln!(s, "max_violation = {}", self.max_violation).unwrap();
        match self.first_violation {
            Some(t) => writeln!(s, "first_violation_t = {t}").unwrap(),
            None => writeln!(s, "first_violation_t = none").unwrap(),
        }
        writeln!(s, "min_margin = {}", self.min_margin).unwrap();
        writeln!(s, "mean_margin = {}", self.mean_margin).unwrap();
        s
    }
}

/// Evaluates `envelope` along `traj`. The bounded channel is `x − e` or `y`
/// (by envelope kind) measured with `state_norm`; the input is the `w`
/// channel measured with `input_norm`, its supremum taken cumulatively over
/// the samples.
pub fn verify_bound(
    traj: &Trajectory,
    envelope: &EnvelopeSpec,
    state_norm: &VectorNorm,
    input_norm: &VectorNorm,
) -> Result<BoundReport> {
    envelope.validate()?;
    let len = traj.len();
    if len == 0 {
        return Err(Error::Empty);
    }
    let state = if envelope.kind.bounds_y() { &traj.y } else { &traj.x };
    if state.len() != len {
        return Err(Error::MissingChannel(if envelope.kind.bounds_y() { "y" } else { "x" }));
    }
    if envelope.input_sup.is_none() && traj.w.len() != len {
        return Err(Error::MissingChannel("w"));
    }
    let mut report = BoundReport {
        kind: envelope.kind,
        times: traj.times.clone(),
        traj_norm: Vec::with_capacity(len),
        envelope: Vec::with_capacity(len),
        max_violation: f64::NEG_INFINITY,
        first_violation: None,
        min_margin: f64::INFINITY,
        mean_margin: 0.0,
    };
    let mut w_sup = 0.0_f64;
    for k in 0..len {
        let t = traj.times[k];
        if envelope.input_sup.is_none() {
            w_sup = w_sup.max(input_norm.apply(&traj.w[k])?);
        }
        let value = if envelope.kind.bounds_y() {
            state_norm.apply(&traj.y[k])?
        } else {
            state_norm.apply(&traj.spacing_error(k))?
        };
        let env = envelope.value(t, w_sup);
        let margin = env - value;
        report.traj_norm.push(value);
        report.envelope.push(env);
        report.max_violation = report.max_violation.max(-margin);
        report.min_margin = report.min_margin.min(margin);
        report.mean_margin += margin / len as f64;
        if margin < 0.0 && report.first_violation.is_none() {
            report.first_violation = Some(t);
        }
    }
    Ok(report)
}

/// Settings of a length sweep with the nearest-neighbour controller.
#[derive(Clone, Debug, PartialEq)]
pub struct StringScenario {
    pub gain: f64,
    pub horizon: f64,
    pub options: Option<SimOptions>,
    pub seed: u64,
    pub preset: InitialPreset,
    /// Input bound used in the length-free bound; the measured supremum
    /// over all lengths when `None`.
    pub w_sup: Option<f64>,
    pub disturbance_scale: f64,
    pub leader: LeaderProfile,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StringStabilityRow {
    pub n: usize,
    pub eta: f64,
    pub max_overshoot: f64,
    pub measured_w_sup: f64,
    pub x0: f64,
    pub z0: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StringStabilityTable {
    pub rows: Vec<StringStabilityRow>,
    /// Bound evaluated with the smallest `η`, the largest initial norms and
    /// the input bound over all rows; it holds for every length in the table.
    pub bound: f64,
    pub eta: f64,
    pub w_sup: f64,
}

impl StringStabilityTable {
    pub fn all_within_bound(&self) -> bool {
        self.rows.iter().all(|r| r.max_overshoot <= self.bound)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "n,eta,max_overshoot_m,measured_w_sup,bound_m")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{}", r.n, r.eta, r.max_overshoot, r.measured_w_sup, self.bound)?;
        }
        Ok(())
    }
}

/// Simulates the nearest-neighbour controller for every length in `n_list`
/// under the scenario's leader profile and seeded disturbances, and compares
/// the largest spacing error with the length-free bound.
pub fn string_stability_experiment<F>(law_for: F, n_list: &[usize], scenario: &StringScenario) -> Result<StringStabilityTable>
where
    F: Fn(usize) -> Result<Arc<dyn FormationLaw>> + Sync,
{
    let rows = n_list
        .par_iter()
        .map(|&n| -> Result<StringStabilityRow> {
            let law = law_for(n)?;
            let eta = formation::check_condition_27(law.as_ref())?;
            let cfg = PlatoonConfig::uniform(Arc::clone(&law), n, scenario.gain)?;
            let draw = scenario::DisturbanceDraw::seeded(scenario.seed, n).scaled(scenario.disturbance_scale);
            let dist = DisturbanceSpec::new(draw.signal(), scenario.leader.clone());
            let v0 = dist.leader().velocity(0.0);
            let init = scenario::initial_condition(scenario.preset, law.targets(), v0, scenario.seed);
            let opts = scenario
                .options
                .unwrap_or_else(|| SimOptions::for_config(&cfg, scenario.horizon));
            let traj = simulate(&cfg, &dist, &init, Controller::StringStable, Frame::Pv, &opts)?;
            let measured_w_sup = traj.w.iter().map(|w| norm_inf(w)).try_fold(0.0_f64, |acc, v| v.map(|v| acc.max(v)))?;
            let x0 = norm_inf(&traj.spacing_error(0))?;
            // z(0) of the nearest-neighbour loop, v_i − d_i − v0
            let d0 = formation::eval_all(law.as_ref(), &init.x)?;
            let z0 = init
                .v
                .iter()
                .zip(&d0)
                .map(|(v, d)| (v - d - v0).abs())
                .fold(0.0, f64::max);
            Ok(StringStabilityRow {
                n,
                eta,
                max_overshoot: traj.max_overshoot(),
                measured_w_sup,
                x0,
                z0,
                eps: cfg.epsilon(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max = |f: fn(&StringStabilityRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    let eta = rows.iter().map(|r| r.eta).fold(f64::INFINITY, f64::min);
    let w_sup = scenario.w_sup.unwrap_or_else(|| max(|r| r.measured_w_sup));
    let bound = thm2_string_bound(eta, max(|r| r.eps), max(|r| r.x0), max(|r| r.z0), w_sup);
    Ok(StringStabilityTable { rows, bound, eta, w_sup })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formation::LinearLaw;
    use crate::integrate::StepControl;

    fn spec(kind: EnvelopeKind, sigma: f64, x0: f64) -> EnvelopeSpec {
        EnvelopeSpec::new(kind, 0.1, 0.6, 0.2, 2.0, sigma, x0).unwrap()
    }

    #[test]
    fn iss_limits() {
        for refined in [false, true] {
            assert_eq!(iss_envelope(0.5, 3.0, 1.0, 0.0, refined), if refined { 3.0 } else { 5.0 });
            assert!((iss_envelope(0.5, 3.0, 1.0, 1e4, refined) - 2.0).abs() < 1e-12);
        }
        assert_eq!(iss_envelope(0.5, 3.0, 0.0, 0.0, false), 3.0);
        for k in 0..200 {
            let t = k as f64 * 0.1;
            assert!(iss_envelope(0.3, 1.0, 2.0, t, true) <= iss_envelope(0.3, 1.0, 2.0, t, false));
        }
    }

    #[test]
    fn theorem1_envelopes() {
        let x = spec(EnvelopeKind::Thm1X, 0.3, 2.0);
        assert_eq!(x.value(0.0, 0.0), 2.3);
        assert!((x.value(0.0, 1.0) - (2.3 + 0.2 * 2.0 / 0.06)).abs() < 1e-12);
        let pure = spec(EnvelopeKind::Thm1X, 0.0, 2.0);
        for t in [0.0, 1.0, 10.0] {
            assert!((pure.value(t, 0.0) - 2.0 * (-0.1 * t).exp()).abs() < 1e-15);
        }
        let refined = spec(EnvelopeKind::Thm1XRefined, 0.3, 2.0);
        assert_eq!(refined.value(0.0, 5.0), 2.3);
        for k in 0..1000 {
            let t = k as f64 * 0.05;
            assert!(refined.value(t, 1.5) <= x.value(t, 1.5));
            assert!(refined_gain(0.1, 0.6, 0.2, t) <= 1.0 / 0.06);
        }

        let y = spec(EnvelopeKind::Thm1Y, 0.3, 4.0);
        assert_eq!(y.value(0.0, 0.0), 4.3);
        assert!((y.asymptote(2.0) - (0.2 * 2.0 / 0.6 + 0.3)).abs() < 1e-12);
        let mut half = y.clone();
        half.eps = 0.1;
        let decay = |s: &EnvelopeSpec, t: f64| (s.value(t, 0.0) - s.sigma) / s.x0;
        assert!((decay(&half, 1.0) - decay(&y, 1.0).powi(2)).abs() < 1e-12);

        assert!(EnvelopeSpec::new(EnvelopeKind::Thm1X, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0).is_err());
        assert!(EnvelopeSpec::new(EnvelopeKind::Thm1X, 1.0, 1.0, 1.0, 1.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn corollary_and_string_bounds() {
        assert_eq!(corollary1_factor(10, 1), 10f64.sqrt());
        assert_eq!(corollary1_factor(10, 3), 2.0);
        assert_eq!(corollary1_factor(10, 10), 1.0);
        assert_eq!(corollary1_factor(7, 7), 1.0);
        assert_eq!(corollary1_bound(10, 3, 5.0, 0.2, 0.1, 1.0, 0.0), 1.1);
        assert!((corollary1_bound(10, 3, 5.0, 0.2, 0.0, 0.0, 1.0) - 2.0).abs() < 1e-15);
        assert_eq!(corollary1_constant(2.0, 3.0, 0.5, 4.0), 3.0);

        assert_eq!(thm2_string_bound(0.1, 0.2, 1.5, 0.0, 0.0), 1.5);
        assert!((thm2_string_bound(0.1, 0.2, 0.0, 0.0, 3.0) - 12.0).abs() < 1e-12);
    }

    fn synthetic(values: &[f64]) -> Trajectory {
        let len = values.len();
        Trajectory {
            targets: vec![0.0],
            times: (0..len).map(|k| k as f64).collect(),
            x: values.iter().map(|v| vec![*v]).collect(),
            y: values.iter().map(|v| vec![*v]).collect(),
            z: vec![vec![0.0]; len],
            w: vec![vec![0.0]; len],
            v0: vec![15.0; len],
        }
    }

    #[test]
    fn verification_boundaries() {
        let env = spec(EnvelopeKind::Thm1X, 0.25, 0.0);
        let quiet = synthetic(&[0.0; 5]);
        let rep = verify_bound(&quiet, &env, &VectorNorm::Inf, &VectorNorm::Inf).unwrap();
        assert!(rep.holds());
        assert_eq!(rep.min_margin, 0.25);

        let decay = spec(EnvelopeKind::Thm1X, 0.0, 2.0);
        let own: Vec<f64> = (0..50).map(|k| decay.value(k as f64, 0.0)).collect();
        let rep = verify_bound(&synthetic(&own), &decay, &VectorNorm::Inf, &VectorNorm::Inf).unwrap();
        assert_eq!(rep.max_violation, 0.0);
        assert!(rep.holds());
        assert_eq!(rep.first_violation, None);

        let mut bumped = own.clone();
        bumped[7] += 1e-3;
        let rep = verify_bound(&synthetic(&bumped), &decay, &VectorNorm::Inf, &VectorNorm::Inf).unwrap();
        assert!(!rep.holds());
        assert_eq!(rep.first_violation, Some(7.0));
        assert_eq!(rep.violations(), 1);

        let mut missing = synthetic(&own);
        missing.w.clear();
        assert!(matches!(
            verify_bound(&missing, &decay, &VectorNorm::Inf, &VectorNorm::Inf),
            Err(Error::MissingChannel("w"))
        ));
        let mut csv = Vec::new();
        rep.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("t,traj_norm,envelope,margin\n0,"));
        assert!(rep.summary().contains("verdict = violated"));
    }

    #[test]
    fn iss_envelope_dominates_frozen_subsystem() {
        use crate::dynamics::FrozenSpacing;
        use crate::integrate::integrate;
        use crate::signals::Signal;
        use crate::formation::TanhAffineLaw;
        let law = TanhAffineLaw::uniform(6, 10.0, 0.5, 0.18, 0.18, 0.1).unwrap();
        let input = Signal::new(6, f64::INFINITY, |t, out| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = 0.4 * ((i as f64 + 1.0) * 0.3 * t).sin();
            }
        });
        let sys = FrozenSpacing {
            law: &law,
            input: Some(input.clone()),
        };
        let x0 = vec![12.0, 8.0, 10.5, 9.0, 11.0, 10.0];
        let sol = integrate(&sys, 0.0, 60.0, &x0, StepControl::Fixed(1e-2), 0.1).unwrap();
        let traj = Trajectory {
            targets: vec![10.0; 6],
            times: sol.times.clone(),
            x: sol.states.clone(),
            y: vec![vec![0.0; 6]; sol.times.len()],
            z: vec![vec![0.0; 6]; sol.times.len()],
            w: sol.times.iter().map(|t| input.eval(*t).unwrap()).collect(),
            v0: vec![0.0; sol.times.len()],
        };
        for kind in [EnvelopeKind::IssBasic, EnvelopeKind::IssRefined] {
            let env = EnvelopeSpec::new(kind, 0.1, 1.0, 1.0, 0.0, 0.0, 2.0).unwrap();
            let rep = verify_bound(&traj, &env, &VectorNorm::Inf, &VectorNorm::Inf).unwrap();
            assert!(rep.holds(), "{kind:?}: {}", rep.max_violation);
        }
    }

    #[test]
    fn quiet_string_sweep_stays_at_rest() {
        let scenario = StringScenario {
            gain: 5.0,
            horizon: 20.0,
            options: Some(SimOptions {
                horizon: 20.0,
                step: StepControl::Fixed(1e-2),
                output_interval: 0.5,
            }),
            seed: 1,
            preset: InitialPreset::Equilibrium,
            w_sup: None,
            disturbance_scale: 0.0,
            leader: LeaderProfile::constant(15.0),
        };
        let law_for = |n: usize| -> Result<Arc<dyn FormationLaw>> {
            let lead = (1..=n).map(|i| 1.0 + 0.1 * i as f64).collect();
            Ok(Arc::new(LinearLaw::new(vec![10.0; n], lead, vec![0.5; n])?))
        };
        let table = string_stability_experiment(law_for, &[3, 5], &scenario).unwrap();
        for row in &table.rows {
            assert!(row.max_overshoot < 1e-9, "{row:?}");
            assert!((row.eta - 0.1).abs() < 1e-12);
        }
    }
}
