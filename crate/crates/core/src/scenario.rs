//! Reference scenario: leader speed profile, decaying sinusoidal
//! disturbances and initial-condition presets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{DisturbanceSpec, InitialCondition, LeaderProfile, Segment};
use crate::signals::Signal;
use crate::{Error, Result};

/// Seed of the published reference run.
pub const REFERENCE_SEED: u64 = 2024;

/// Decay rate (1/s) of the reference disturbances.
pub const DISTURBANCE_DECAY: f64 = 0.02;

/// Largest disturbance amplitude `|c_i|` (m/s²).
pub const DISTURBANCE_AMPLITUDE: f64 = 3.0;

const S6_SEGMENTS: [(f64, f64, f64); 9] = [
    (0.0, 15.0, 0.0),
    (5.0, 5.0, 2.0),
    (15.0, 35.0, 0.0),
    (25.0, 85.0, -2.0),
    (35.0, 15.0, 0.0),
    (45.0, 82.5, -1.5),
    (55.0, 0.0, 0.0),
    (65.0, -97.5, 1.5),
    (75.0, 15.0, 0.0),
];

/// Nine-segment leader profile: cruise at 15 m/s, accelerate to 35, brake
/// back to 15, brake to a stop, then return to 15 m/s.
pub fn leader_profile_s6() -> LeaderProfile {
    let segments = S6_SEGMENTS
        .iter()
        .map(|&(start, intercept, slope)| Segment {
            start,
            intercept,
            slope,
        })
        .collect();
    LeaderProfile::new(segments).expect("segments start at 0 and increase")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Sin,
    Cos,
}

/// Per-vehicle amplitude and phase of `c_i e^{−0.02 t} sin t` or `cos t`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisturbanceDraw {
    pub amplitude: Vec<f64>,
    pub phase: Vec<Phase>,
}

impl DisturbanceDraw {
    /// Amplitudes uniform in `[−3, 3]`, phases by a fair coin.
    pub fn seeded(seed: u64, n: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut amplitude = Vec::with_capacity(n);
        let mut phase = Vec::with_capacity(n);
        for _ in 0..n {
            amplitude.push(rng.gen_range(-DISTURBANCE_AMPLITUDE..=DISTURBANCE_AMPLITUDE));
            phase.push(if rng.gen_bool(0.5) { Phase::Sin } else { Phase::Cos });
        }
        Self { amplitude, phase }
    }

    /// Same phases with every amplitude at `±3`, sign kept.
    pub fn saturated(&self) -> Self {
        let amplitude = self
            .amplitude
            .iter()
            .map(|c| if *c < 0.0 { -DISTURBANCE_AMPLITUDE } else { DISTURBANCE_AMPLITUDE })
            .collect();
        Self {
            amplitude,
            phase: self.phase.clone(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            amplitude: self.amplitude.iter().map(|c| c * factor).collect(),
            phase: self.phase.clone(),
        }
    }

    /// `θ_i / m_i` as a signal on `[0, ∞)`.
    pub fn signal(&self) -> Signal {
        let amplitude = self.amplitude.clone();
        let phase = self.phase.clone();
        Signal::new(amplitude.len(), f64::INFINITY, move |t, out| {
            let decay = (-DISTURBANCE_DECAY * t).exp();
            let (s, c) = t.sin_cos();
            for ((o, a), p) in out.iter_mut().zip(&amplitude).zip(&phase) {
                *o = a * decay * if *p == Phase::Sin { s } else { c };
            }
        })
    }
}

/// Reference disturbances under the reference leader profile.
pub fn disturbance_s6(seed: u64, n: usize) -> DisturbanceSpec {
    DisturbanceSpec::new(DisturbanceDraw::seeded(seed, n).signal(), leader_profile_s6())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialPreset {
    /// `x = e`, every follower at the leader speed.
    Equilibrium,
    /// `x_i = e_i + δx_i` with `δx_i` uniform in `[−1, 1]` m, followers at
    /// the leader speed.
    Perturbed,
}

impl std::str::FromStr for InitialPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equilibrium" => Ok(Self::Equilibrium),
            "perturbed" => Ok(Self::Perturbed),
            other => Err(Error::Config(format!(
                "unknown initial preset `{other}` (expected `equilibrium` or `perturbed`)"
            ))),
        }
    }
}

/// Stream offset keeping spacing perturbations independent of the
/// disturbance draw for the same seed.
const IC_STREAM: u64 = 1;

pub fn initial_condition(preset: InitialPreset, targets: &[f64], v0: f64, seed: u64) -> InitialCondition {
    let x = match preset {
        InitialPreset::Equilibrium => targets.to_vec(),
        InitialPreset::Perturbed => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(IC_STREAM);
            targets.iter().map(|e| e + rng.gen_range(-1.0..=1.0)).collect()
        }
    };
    InitialCondition::at_leader_speed(x, v0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_values() {
        let p = leader_profile_s6();
        let at = |t: f64| (p.velocity(t), p.acceleration(t));
        assert_eq!(at(0.0), (15.0, 0.0));
        assert_eq!(at(10.0), (25.0, 2.0));
        assert_eq!(at(20.0), (35.0, 0.0));
        assert_eq!(at(30.0), (25.0, -2.0));
        assert_eq!(at(40.0), (15.0, 0.0));
        assert_eq!(at(50.0), (7.5, -1.5));
        assert_eq!(at(60.0), (0.0, 0.0));
        assert_eq!(at(70.0), (7.5, 1.5));
        assert_eq!(at(90.0), (15.0, 0.0));
        assert_eq!(at(5.0).1, 2.0);
        assert_eq!(p.max_junction_mismatch(), 0.0);
        assert_eq!(p.breakpoints(), vec![5.0, 15.0, 25.0, 35.0, 45.0, 55.0, 65.0, 75.0]);
    }

    #[test]
    fn disturbances_are_bounded_vanishing_and_deterministic() {
        let a = disturbance_s6(7, 10);
        let b = disturbance_s6(7, 10);
        let c = disturbance_s6(8, 10);
        let mut sa = vec![0.0; 10];
        let mut sb = vec![0.0; 10];
        let mut sc = vec![0.0; 10];
        a.specific_force_into(0.0, &mut sa);
        assert!(sa.iter().all(|v| v.abs() <= 3.0));
        let mut differs = false;
        for k in 0..1000 {
            let t = k as f64 * 0.37;
            a.specific_force_into(t, &mut sa);
            b.specific_force_into(t, &mut sb);
            c.specific_force_into(t, &mut sc);
            assert_eq!(sa, sb);
            differs |= sa != sc;
            assert!(sa.iter().all(|v| v.abs() <= 3.0 * (-0.02 * t).exp() + 1e-15));
        }
        assert!(differs);
        a.specific_force_into(2000.0, &mut sa);
        assert!(sa.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn saturated_draw_keeps_phases() {
        let d = DisturbanceDraw::seeded(3, 6);
        let s = d.saturated();
        assert_eq!(s.phase, d.phase);
        assert!(s.amplitude.iter().zip(&d.amplitude).all(|(a, b)| a.abs() == 3.0 && a.signum() == b.signum()));
    }

    #[test]
    fn presets() {
        let e = vec![10.0; 5];
        let eq = initial_condition(InitialPreset::Equilibrium, &e, 15.0, 1);
        assert_eq!(eq.x, e);
        assert_eq!(eq.v, vec![15.0; 5]);
        let p1 = initial_condition(InitialPreset::Perturbed, &e, 15.0, 1);
        let p2 = initial_condition(InitialPreset::Perturbed, &e, 15.0, 1);
        assert_eq!(p1, p2);
        assert!(p1.x.iter().all(|x| (x - 10.0).abs() <= 1.0));
        assert!(p1.x != e);
        assert_eq!("perturbed".parse::<InitialPreset>().unwrap(), InitialPreset::Perturbed);
        assert!("nope".parse::<InitialPreset>().is_err());
    }
}
