//! Experiment orchestration: per-range certification, simulation and bound
//! verification, and the files written for each run.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::bounds::{
    self, verify_bound, BoundReport, EnvelopeKind, EnvelopeSpec, StringStabilityTable,
};
use crate::certificates::{certify, ContractionCertificate};
use crate::config::ExperimentConfig;
use crate::dynamics::{simulate, DisturbanceSpec, InitialCondition, PlatoonConfig, Trajectory};
use crate::integrate::output_grid;
use crate::signals::{norm_inf, VectorNorm, WeightedNormSpec};
use crate::{Error, Result};

/// Fraction of the reference scale used as slack in the Theorem-1 envelopes.
pub const SIGMA_FRACTION: f64 = 0.05;

/// Bisection steps of the `ε*` search.
pub const BISECTION_STEPS: usize = 8;

/// Lower end of the `ε*` search relative to the certified `ε`.
pub const BISECTION_SPAN: f64 = 1e-3;

/// Command-line overrides applied on top of a configuration file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub step: Option<f64>,
    pub horizon: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(seed) = self.seed {
            cfg.scenario.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        if let Some(h) = self.step {
            if !(h > 0.0) {
                return Err(Error::Config(format!("step must be positive, got {h}")));
            }
            cfg.scenario.step = Some(h);
        }
        if let Some(t) = self.horizon {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("horizon must be positive, got {t}")));
            }
            cfg.scenario.horizon = t;
        }
        Ok(())
    }
}

/// Supremum of `|w(t)|` over the output grid of `[0, horizon]`.
pub fn disturbance_sup(dist: &DisturbanceSpec, norm: &VectorNorm, horizon: f64, interval: f64) -> Result<f64> {
    let mut sup = 0.0_f64;
    let mut w = vec![0.0; dist.dim()];
    for t in output_grid(0.0, horizon, interval) {
        dist.w_into(t, &mut w);
        sup = sup.max(norm.apply(&w)?);
    }
    Ok(sup)
}

/// `|x(0) − e|∞` and `|y(0)|_*` of an initial condition.
pub fn initial_norms(cfg: &PlatoonConfig, init: &InitialCondition, v0: f64, spec: &WeightedNormSpec) -> Result<(f64, f64)> {
    let x_err: Vec<f64> = init.x.iter().zip(cfg.law().targets()).map(|(x, e)| x - e).collect();
    let mut v = vec![v0];
    v.extend_from_slice(&init.v);
    let mut p = vec![0.0];
    for xi in &init.x {
        let prev = *p.last().unwrap();
        p.push(prev - xi);
    }
    let y = crate::dynamics::PvState { p, v }.to_xz(cfg.law())?.to_xy(cfg.law())?.y;
    Ok((norm_inf(&x_err)?, spec.norm(&y)?))
}

/// Outcome of the `σ` calibration and `ε*` search.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    /// `max(|x(0) − e|∞, |y(0)|_*, ‖w‖_*)` on the stress scenario.
    pub delta: f64,
    pub sigma: f64,
    /// Certified `ε` at which `σ` was fixed.
    pub eps_hi: f64,
    /// Largest `ε` found for which both envelopes hold on the stress
    /// scenario; `None` if none in the searched range does.
    pub eps_star: Option<f64>,
    /// Every `(ε, holds)` evaluated, in order.
    pub trials: Vec<(f64, bool)>,
}

/// `σ = 0.05 (δ + ε ‖G‖_{∞,*} δ / (η₁η₂))`.
pub fn sigma_for(cert: &ContractionCertificate, delta: f64) -> f64 {
    SIGMA_FRACTION * (delta + cert.eps_certified * cert.g_norm * delta / (cert.eta1 * cert.eta2))
}

/// Theorem-1 envelopes for `cert` with slack `sigma` and the given initial norms.
pub fn theorem1_envelopes(cert: &ContractionCertificate, sigma: f64, x0: f64, y0: f64) -> Result<(EnvelopeSpec, EnvelopeSpec)> {
    let eps = cert.eps_certified;
    let x = EnvelopeSpec::new(EnvelopeKind::Thm1X, cert.eta1, cert.eta2, eps, cert.g_norm, sigma, x0)?;
    let y = EnvelopeSpec::new(EnvelopeKind::Thm1Y, cert.eta1, cert.eta2, eps, cert.g_norm, sigma, y0)?;
    Ok((x, y))
}

/// Both Theorem-1 reports for `traj`, simulated at the certificate's `ε`.
pub fn verify_theorem1(traj: &Trajectory, cert: &ContractionCertificate, sigma: f64) -> Result<(BoundReport, BoundReport)> {
    let spec = cert.norm_spec();
    let star = VectorNorm::Star(spec.clone());
    let x0 = norm_inf(&traj.spacing_error(0))?;
    let y0 = spec.norm(&traj.y[0])?;
    let (ex, ey) = theorem1_envelopes(cert, sigma, x0, y0)?;
    Ok((
        verify_bound(traj, &ex, &VectorNorm::Inf, &star)?,
        verify_bound(traj, &ey, &star, &star)?,
    ))
}

/// Experiment context for one communication range.
pub struct RangeRun<'a> {
    pub cfg: &'a ExperimentConfig,
    pub r: usize,
    pub platoon: PlatoonConfig,
}

impl<'a> RangeRun<'a> {
    pub fn new(cfg: &'a ExperimentConfig, r: usize) -> Result<Self> {
        Ok(Self {
            cfg,
            r,
            platoon: cfg.platoon_config(r)?,
        })
    }

    fn seed(&self) -> u64 {
        self.cfg.scenario.seed
    }

    pub fn certificate(&self) -> Result<ContractionCertificate> {
        certify(&self.platoon)
    }

    pub fn reference_disturbance(&self) -> DisturbanceSpec {
        self.cfg.disturbance(self.seed())
    }

    /// Same phases as the reference draw with every amplitude at the bound.
    pub fn stress_disturbance(&self) -> DisturbanceSpec {
        let draw = self.cfg.disturbance_draw(self.seed());
        let draw = if self.cfg.scenario.disturbance_scale > 0.0 && draw.amplitude.iter().any(|c| *c != 0.0) {
            draw.saturated().scaled(self.cfg.scenario.disturbance_scale)
        } else {
            draw
        };
        DisturbanceSpec::new(draw.signal(), self.cfg.leader())
    }

    pub fn simulate_at(&self, platoon: &PlatoonConfig, dist: &DisturbanceSpec) -> Result<Trajectory> {
        let init = self.cfg.initial_condition(self.seed())?;
        let opts = self.cfg.sim_options(platoon.epsilon());
        simulate(platoon, dist, &init, self.cfg.controller(), self.cfg.frame(), &opts)
    }

    /// Reference trajectory at the configured gains.
    pub fn simulate(&self) -> Result<Trajectory> {
        self.simulate_at(&self.platoon, &self.reference_disturbance())
    }

    /// `δ` on the stress scenario for the weights of `cert`.
    pub fn stress_delta(&self, cert: &ContractionCertificate) -> Result<f64> {
        let spec = cert.norm_spec();
        let dist = self.stress_disturbance();
        let init = self.cfg.initial_condition(self.seed())?;
        let v0 = dist.leader().velocity(0.0);
        let (x0, y0) = initial_norms(&self.platoon, &init, v0, &spec)?;
        let s = &self.cfg.scenario;
        let w = disturbance_sup(&dist, &VectorNorm::Star(spec), s.horizon, s.output_interval)?;
        Ok(x0.max(y0).max(w))
    }

    fn stress_holds(&self, eps: f64, sigma: f64) -> Result<bool> {
        let platoon = self.platoon.with_epsilon(eps)?;
        let cert = certify(&platoon)?;
        let traj = self.simulate_at(&platoon, &self.stress_disturbance())?;
        let (x, y) = verify_theorem1(&traj, &cert, sigma)?;
        Ok(x.holds() && y.holds())
    }

    /// Fixes `σ` from the certificate at `ε_hi = min(ε, ε̄)` and searches the
    /// largest `ε ≤ ε_hi` at which both envelopes hold on the stress scenario.
    pub fn calibrate(&self, cert: &ContractionCertificate) -> Result<Calibration> {
        let delta = self.stress_delta(cert)?;
        let sigma = sigma_for(cert, delta);
        let eps_hi = cert.eps_certified;
        let mut trials = Vec::new();
        let holds_hi = self.stress_holds(eps_hi, sigma)?;
        trials.push((eps_hi, holds_hi));
        let eps_star = if holds_hi {
            Some(eps_hi)
        } else {
            let mut lo = eps_hi * BISECTION_SPAN;
            let ok_lo = self.stress_holds(lo, sigma)?;
            trials.push((lo, ok_lo));
            if ok_lo {
                let mut hi = eps_hi;
                for _ in 0..BISECTION_STEPS {
                    let mid = (lo * hi).sqrt();
                    let ok = self.stress_holds(mid, sigma)?;
                    trials.push((mid, ok));
                    if ok {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Some(lo)
            } else {
                None
            }
        };
        Ok(Calibration {
            delta,
            sigma,
            eps_hi,
            eps_star,
            trials,
        })
    }
}

/// Everything recorded for one communication range.
#[derive(Clone, Debug)]
pub struct RangeOutcome {
    pub r: usize,
    pub n: usize,
    pub certificate: std::result::Result<ContractionCertificate, String>,
    pub trajectory: Option<Trajectory>,
    pub max_overshoot: Option<f64>,
    pub sigma: Option<f64>,
    /// `ε ‖G‖_{∞,*} ‖w‖_* / (η₁η₂) + σ` at the certified `ε` and the reference
    /// disturbance.
    pub envelope_asymptote: Option<f64>,
    pub calibration: Option<Calibration>,
    /// Theorem-1 reports on the reference scenario at `ε*`.
    pub reports: Option<(BoundReport, BoundReport)>,
}

impl RangeOutcome {
    pub fn corollary_factor(&self) -> f64 {
        bounds::corollary1_factor(self.n, self.r)
    }

    pub fn m(&self) -> usize {
        self.n.div_ceil(self.r)
    }
}

/// What to compute for every range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stages {
    pub simulate: bool,
    pub verify: bool,
}

fn run_range(cfg: &ExperimentConfig, r: usize, stages: Stages) -> Result<RangeOutcome> {
    let run = RangeRun::new(cfg, r)?;
    let certificate = run.certificate().map_err(|e| e.to_string());
    let trajectory = if stages.simulate { Some(run.simulate()?) } else { None };
    let mut outcome = RangeOutcome {
        r,
        n: cfg.n(),
        max_overshoot: trajectory.as_ref().map(Trajectory::max_overshoot),
        trajectory,
        certificate,
        sigma: None,
        envelope_asymptote: None,
        calibration: None,
        reports: None,
    };
    let Ok(cert) = &outcome.certificate else {
        return Ok(outcome);
    };
    let delta = run.stress_delta(cert)?;
    let sigma = sigma_for(cert, delta);
    let s = &cfg.scenario;
    let w_ref = disturbance_sup(&run.reference_disturbance(), &VectorNorm::Star(cert.norm_spec()), s.horizon, s.output_interval)?;
    outcome.sigma = Some(sigma);
    outcome.envelope_asymptote =
        Some(cert.eps_certified * cert.g_norm * w_ref / (cert.eta1 * cert.eta2) + sigma);
    if stages.verify {
        let calibration = run.calibrate(cert)?;
        if let Some(eps) = calibration.eps_star {
            let platoon = run.platoon.with_epsilon(eps)?;
            let cert_star = certify(&platoon)?;
            let traj = run.simulate_at(&platoon, &run.reference_disturbance())?;
            outcome.reports = Some(verify_theorem1(&traj, &cert_star, calibration.sigma)?);
        }
        outcome.calibration = Some(calibration);
    }
    Ok(outcome)
}

/// Runs every range of the configuration concurrently.
pub fn run_ranges(cfg: &ExperimentConfig, stages: Stages) -> Result<Vec<RangeOutcome>> {
    cfg.r_list().par_iter().map(|&r| run_range(cfg, r, stages)).collect()
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// `summary.csv` with columns `r,m,eta1,eta2,eps_bar,max_overshoot_m,envelope_asymptote_m`.
pub fn write_summary<W: Write>(outcomes: &[RangeOutcome], mut out: W) -> Result<()> {
    writeln!(out, "r,m,eta1,eta2,eps_bar,max_overshoot_m,envelope_asymptote_m")?;
    for o in outcomes {
        let cert = o.certificate.as_ref().ok();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            o.r,
            o.m(),
            fmt_opt(cert.map(|c| c.eta1)),
            fmt_opt(cert.map(|c| c.eta2)),
            fmt_opt(cert.map(|c| c.eps_bar)),
            fmt_opt(o.max_overshoot),
            fmt_opt(o.envelope_asymptote),
        )?;
    }
    Ok(())
}

fn verification_text(o: &RangeOutcome) -> String {
    let mut s = String::new();
    writeln!(s, "r = {}", o.r).unwrap();
    writeln!(s, "corollary_factor = {}", o.corollary_factor()).unwrap();
    if let Some(c) = &o.calibration {
        writeln!(s, "delta = {}", c.delta).unwrap();
        writeln!(s, "sigma = {}", c.sigma).unwrap();
        writeln!(s, "eps_hi = {}", c.eps_hi).unwrap();
        writeln!(s, "eps_star = {}", c.eps_star.map_or("none".to_string(), |e| e.to_string())).unwrap();
        let trials: Vec<String> = c.trials.iter().map(|(e, ok)| format!("{e}:{}", if *ok { "holds" } else { "violated" })).collect();
        writeln!(s, "trials = {}", trials.join(" ")).unwrap();
    }
    if let Some((x, y)) = &o.reports {
        for rep in [x, y] {
            writeln!(s).unwrap();
            s.push_str(&rep.summary());
        }
    }
    s
}

/// Writes every artifact of `outcomes` into `dir`.
pub fn write_outcomes(cfg: &ExperimentConfig, outcomes: &[RangeOutcome], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for o in outcomes {
        if let Some(traj) = &o.trajectory {
            traj.write_csv(create(dir, &format!("trajectory_r{}.csv", o.r))?)?;
        }
        match &o.certificate {
            Ok(cert) => {
                let mut f = create(dir, &format!("certificate_r{}.txt", o.r))?;
                f.write_all(cert.to_text().as_bytes())?;
            }
            Err(msg) => {
                let mut f = create(dir, &format!("certificate_r{}.txt", o.r))?;
                writeln!(f, "status = failed")?;
                writeln!(f, "error = {msg}")?;
            }
        }
        if let Some((x, y)) = &o.reports {
            x.write_csv(create(dir, &format!("bounds_r{}.csv", o.r))?)?;
            y.write_csv(create(dir, &format!("bounds_y_r{}.csv", o.r))?)?;
        }
        if o.calibration.is_some() {
            create(dir, &format!("verify_r{}.txt", o.r))?.write_all(verification_text(o).as_bytes())?;
        }
    }
    write_summary(outcomes, create(dir, "summary.csv")?)?;
    if cfg.output.plot_script {
        create(dir, "plot.py")?.write_all(plot_script(&cfg.targets()?).as_bytes())?;
    }
    Ok(())
}

/// One row of an `(r, ε)` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub r: usize,
    pub eps: f64,
    pub m: usize,
    pub eta2: Option<f64>,
    pub eps_bar: Option<f64>,
    pub max_overshoot: f64,
}

/// Reference scenario at every `(r, ε)` of `r_list × eps_list`.
pub fn sweep_eps(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let grid: Vec<(usize, f64)> = cfg
        .r_list()
        .into_iter()
        .flat_map(|r| cfg.sweep.eps_list.iter().map(move |e| (r, *e)))
        .collect();
    grid.par_iter()
        .map(|&(r, eps)| {
            let run = RangeRun::new(cfg, r)?;
            let platoon = run.platoon.with_epsilon(eps)?;
            let cert = certify(&platoon).ok();
            let traj = run.simulate_at(&platoon, &run.reference_disturbance())?;
            Ok(SweepRow {
                r,
                eps,
                m: cfg.n().div_ceil(r),
                eta2: cert.as_ref().map(|c| c.eta2),
                eps_bar: cert.as_ref().map(|c| c.eps_bar),
                max_overshoot: traj.max_overshoot(),
            })
        })
        .collect()
}

pub fn write_sweep<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "r,eps,m,eta2,eps_bar,max_overshoot_m")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            row.r,
            row.eps,
            row.m,
            fmt_opt(row.eta2),
            fmt_opt(row.eps_bar),
            row.max_overshoot
        )?;
    }
    Ok(())
}

/// Length sweep with the nearest-neighbour controller.
pub fn run_string_stability(cfg: &ExperimentConfig) -> Result<StringStabilityTable> {
    let section = &cfg.string_stability;
    bounds::string_stability_experiment(|n| section.law(n), &section.n_list, &cfg.string_scenario())
}

/// Python/matplotlib script plotting spacing errors and envelopes found
/// next to it.
pub fn plot_script(targets: &[f64]) -> String {
    let targets = targets.iter().map(f64::to_string).collect::<Vec<_>>().join(", ");
    format!(
        r#"import glob
import os
import re

import matplotlib.pyplot as plt
import pandas as pd

HERE = os.path.dirname(os.path.abspath(__file__))
TARGETS = [{targets}]
N = len(TARGETS)


def rank(path):
    return int(re.search(r"_r(\d+)\.csv$", path).group(1))


def main():
    trajectories = sorted(glob.glob(os.path.join(HERE, "trajectory_r*.csv")), key=rank)
    if trajectories:
        fig, axes = plt.subplots(len(trajectories), 1, sharex=True, figsize=(8, 2.6 * len(trajectories)), squeeze=False)
        for ax, path in zip(axes[:, 0], trajectories):
            df = pd.read_csv(path)
            for i in range(1, N + 1):
                ax.plot(df["t"], df[f"x_{{i}}"] - TARGETS[i - 1], lw=0.8)
            ax.set_ylabel("x_i - e_i [m]")
            ax.set_title(f"r = {{rank(path)}}")
        axes[-1, 0].set_xlabel("t [s]")
        fig.tight_layout()
        fig.savefig(os.path.join(HERE, "spacing_errors.png"), dpi=150)

    reports = sorted(glob.glob(os.path.join(HERE, "bounds_r*.csv")), key=rank)
    if reports:
        fig, ax = plt.subplots(figsize=(8, 4))
        for path in reports:
            df = pd.read_csv(path)
            line, = ax.plot(df["t"], df["traj_norm"], lw=0.8, label=f"|x - e| r = {{rank(path)}}")
            ax.plot(df["t"], df["envelope"], ls="--", color=line.get_color(), lw=0.8)
        ax.set_yscale("log")
        ax.set_xlabel("t [s]")
        ax.legend()
        fig.tight_layout()
        fig.savefig(os.path.join(HERE, "envelopes.png"), dpi=150)

    summary = os.path.join(HERE, "summary.csv")
    if os.path.exists(summary):
        print(pd.read_csv(summary).to_string(index=False))


if __name__ == "__main__":
    main()
"#
    )
}
