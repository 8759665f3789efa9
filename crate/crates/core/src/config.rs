//! Experiment configuration files (TOML).
//!
//! ```toml
//! [platoon]
//! n = 10
//! spacing = 10.0            # or `targets = [...]`
//! masses = 1.0              # scalar or one entry per follower
//!
//! [law]
//! kind = "tanh_affine"      # or "linear"
//! amplitude = 0.5           # tanh_affine only
//! lead = 0.18
//! follow = 0.18
//! slope = 0.1               # tanh_affine only
//!
//! [gains]
//! k = 5.0                   # scalar or list
//!
//! [scenario]
//! leader = "reference"      # or "constant" with `v0`
//! disturbance = "reference" # or "none"
//! seed = 2024
//! horizon = 100.0
//! output_interval = 0.01
//! initial = "perturbed"     # or "equilibrium"
//! controller = "range_r"    # or "string_stable"
//! frame = "pv"              # or "xy"
//!
//! [sweep]
//! r_list = [1, 3, 10]
//! eps_list = []
//!
//! [output]
//! dir = "results"
//!
//! [string_stability]
//! n_list = [5, 10, 20]
//! lead_base = 1.0
//! lead_step = 0.1
//! follow = 0.5
//! k = 5.0
//! w_sup = 5.0
//! ```
//!
//! Every section except `platoon`, `law` and `gains` is optional.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use crate::bounds::StringScenario;
use crate::dynamics::{
    default_step, Controller, DisturbanceSpec, Frame, InitialCondition, LeaderProfile, PlatoonConfig, SimOptions,
};
use crate::formation::{FormationLaw, LinearLaw, TanhAffineLaw};
use crate::integrate::StepControl;
use crate::scenario::{self, DisturbanceDraw, InitialPreset};
use crate::signals::Signal;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrList {
    Scalar(f64),
    List(Vec<f64>),
}

impl ScalarOrList {
    fn expand(&self, key: &str, n: usize) -> Result<Vec<f64>> {
        match self {
            Self::Scalar(v) => Ok(vec![*v; n]),
            Self::List(v) if v.len() == n => Ok(v.clone()),
            Self::List(v) => Err(Error::Config(format!("`{key}` has {} entries, expected {n}", v.len()))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatoonSection {
    pub n: usize,
    pub spacing: Option<f64>,
    pub targets: Option<Vec<f64>>,
    pub masses: Option<ScalarOrList>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawKind {
    Linear,
    TanhAffine,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawSection {
    pub kind: LawKind,
    pub lead: ScalarOrList,
    pub follow: ScalarOrList,
    pub amplitude: Option<ScalarOrList>,
    pub slope: Option<ScalarOrList>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub k: ScalarOrList,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeaderKind {
    Reference,
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    Reference,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    RangeR,
    StringStable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Pv,
    Xy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetKind {
    Equilibrium,
    Perturbed,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub leader: LeaderKind,
    pub v0: f64,
    pub disturbance: DisturbanceKind,
    pub disturbance_scale: f64,
    pub seed: u64,
    pub horizon: f64,
    pub step: Option<f64>,
    pub output_interval: f64,
    pub initial: PresetKind,
    pub controller: ControllerKind,
    pub frame: FrameKind,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            leader: LeaderKind::Reference,
            v0: 15.0,
            disturbance: DisturbanceKind::Reference,
            disturbance_scale: 1.0,
            seed: scenario::REFERENCE_SEED,
            horizon: 100.0,
            step: None,
            output_interval: 0.01,
            initial: PresetKind::Perturbed,
            controller: ControllerKind::RangeR,
            frame: FrameKind::Pv,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub r_list: Vec<usize>,
    pub eps_list: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub plot_script: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
            plot_script: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StringStabilitySection {
    pub n_list: Vec<usize>,
    pub spacing: f64,
    pub lead_base: f64,
    pub lead_step: f64,
    pub follow: f64,
    pub k: f64,
    pub w_sup: Option<f64>,
    pub initial: PresetKind,
}

impl Default for StringStabilitySection {
    fn default() -> Self {
        Self {
            n_list: vec![5, 10, 20],
            spacing: 10.0,
            lead_base: 1.0,
            lead_step: 0.1,
            follow: 0.5,
            k: 5.0,
            w_sup: Some(5.0),
            initial: PresetKind::Equilibrium,
        }
    }
}

impl StringStabilitySection {
    /// Linear law with `ℓᵖ_i = lead_base + lead_step · i` (vehicles counted
    /// from 1) and a common `ℓᶠ`.
    pub fn law(&self, n: usize) -> Result<Arc<dyn FormationLaw>> {
        let lead = (1..=n).map(|i| self.lead_base + self.lead_step * i as f64).collect();
        Ok(Arc::new(LinearLaw::new(vec![self.spacing; n], lead, vec![self.follow; n])?))
    }
}

/// Parsed configuration file.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub platoon: PlatoonSection,
    pub law: LawSection,
    pub gains: GainsSection,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub string_stability: StringStabilitySection,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses `text`; `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|e| Error::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        self.build_law()?;
        let n = self.platoon.n;
        self.gains.k.expand("gains.k", n)?;
        self.masses()?;
        let s = &self.scenario;
        if !(s.horizon > 0.0 && s.horizon.is_finite()) {
            return Err(Error::Config(format!("`scenario.horizon` must be positive, got {}", s.horizon)));
        }
        if !(s.output_interval > 0.0) {
            return Err(Error::Config("`scenario.output_interval` must be positive".into()));
        }
        if let Some(h) = s.step {
            if !(h > 0.0) {
                return Err(Error::Config(format!("`scenario.step` must be positive, got {h}")));
            }
        }
        if !(s.disturbance_scale >= 0.0) {
            return Err(Error::Config("`scenario.disturbance_scale` must be nonnegative".into()));
        }
        if let Some(bad) = self.sweep.r_list.iter().find(|r| **r == 0 || **r > n) {
            return Err(Error::Config(format!("`sweep.r_list` entry {bad} outside 1..={n}")));
        }
        if let Some(bad) = self.sweep.eps_list.iter().find(|e| !(**e > 0.0)) {
            return Err(Error::Config(format!("`sweep.eps_list` entry {bad} must be positive")));
        }
        if self.scenario.controller == ControllerKind::StringStable && self.scenario.frame == FrameKind::Xy {
            return Err(Error::Config("`scenario.frame = \"xy\"` requires `controller = \"range_r\"`".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.platoon.n
    }

    pub fn targets(&self) -> Result<Vec<f64>> {
        let n = self.platoon.n;
        match (&self.platoon.targets, self.platoon.spacing) {
            (Some(_), Some(_)) => Err(Error::Config("give either `platoon.spacing` or `platoon.targets`".into())),
            (Some(t), None) if t.len() == n => Ok(t.clone()),
            (Some(t), None) => Err(Error::Config(format!("`platoon.targets` has {} entries, expected {n}", t.len()))),
            (None, Some(e)) => Ok(vec![e; n]),
            (None, None) => Err(Error::Config("missing `platoon.spacing` or `platoon.targets`".into())),
        }
    }

    pub fn masses(&self) -> Result<Vec<f64>> {
        match &self.platoon.masses {
            Some(m) => m.expand("platoon.masses", self.platoon.n),
            None => Ok(vec![1.0; self.platoon.n]),
        }
    }

    fn build_law(&self) -> Result<Arc<dyn FormationLaw>> {
        let n = self.platoon.n;
        let targets = self.targets()?;
        let l = &self.law;
        let lead = l.lead.expand("law.lead", n)?;
        let follow = l.follow.expand("law.follow", n)?;
        Ok(match l.kind {
            LawKind::Linear => {
                if l.amplitude.is_some() || l.slope.is_some() {
                    return Err(Error::Config("`amplitude` and `slope` apply to `tanh_affine` laws only".into()));
                }
                Arc::new(LinearLaw::new(targets, lead, follow)?)
            }
            LawKind::TanhAffine => {
                let need = |v: &Option<ScalarOrList>, key: &str| {
                    v.as_ref()
                        .ok_or_else(|| Error::Config(format!("missing `{key}` for a tanh_affine law")))?
                        .expand(key, n)
                };
                let amplitude = need(&l.amplitude, "law.amplitude")?;
                let slope = need(&l.slope, "law.slope")?;
                Arc::new(TanhAffineLaw::new(targets, amplitude, lead, follow, slope)?)
            }
        })
    }

    pub fn law(&self) -> Arc<dyn FormationLaw> {
        self.build_law().expect("validated on parse")
    }

    /// Ranges to sweep; `[n]` when the list is empty.
    pub fn r_list(&self) -> Vec<usize> {
        if self.sweep.r_list.is_empty() {
            vec![self.platoon.n]
        } else {
            self.sweep.r_list.clone()
        }
    }

    pub fn platoon_config(&self, r: usize) -> Result<PlatoonConfig> {
        PlatoonConfig::new(self.masses()?, self.law(), r, self.gains.k.expand("gains.k", self.platoon.n)?)
    }

    pub fn leader(&self) -> LeaderProfile {
        match self.scenario.leader {
            LeaderKind::Reference => scenario::leader_profile_s6(),
            LeaderKind::Constant => LeaderProfile::constant(self.scenario.v0),
        }
    }

    pub fn disturbance_draw(&self, seed: u64) -> DisturbanceDraw {
        let scale = match self.scenario.disturbance {
            DisturbanceKind::Reference => self.scenario.disturbance_scale,
            DisturbanceKind::None => 0.0,
        };
        DisturbanceDraw::seeded(seed, self.platoon.n).scaled(scale)
    }

    pub fn disturbance(&self, seed: u64) -> DisturbanceSpec {
        match self.scenario.disturbance {
            DisturbanceKind::None => DisturbanceSpec::new(Signal::zero(self.platoon.n, f64::INFINITY), self.leader()),
            DisturbanceKind::Reference => DisturbanceSpec::new(self.disturbance_draw(seed).signal(), self.leader()),
        }
    }

    pub fn preset(&self) -> InitialPreset {
        preset(self.scenario.initial)
    }

    pub fn initial_condition(&self, seed: u64) -> Result<InitialCondition> {
        let v0 = self.leader().velocity(0.0);
        Ok(scenario::initial_condition(self.preset(), &self.targets()?, v0, seed))
    }

    pub fn controller(&self) -> Controller {
        match self.scenario.controller {
            ControllerKind::RangeR => Controller::RangeR,
            ControllerKind::StringStable => Controller::StringStable,
        }
    }

    pub fn frame(&self) -> Frame {
        match self.scenario.frame {
            FrameKind::Pv => Frame::Pv,
            FrameKind::Xy => Frame::Xy,
        }
    }

    /// Fixed RK4 with the configured step, or the default `min(10⁻³, ε/20)`.
    pub fn sim_options(&self, eps: f64) -> SimOptions {
        let h = self.scenario.step.unwrap_or_else(|| default_step(eps));
        SimOptions {
            horizon: self.scenario.horizon,
            step: StepControl::Fixed(h),
            output_interval: self.scenario.output_interval,
        }
    }

    pub fn string_scenario(&self) -> StringScenario {
        let s = &self.scenario;
        let scale = match s.disturbance {
            DisturbanceKind::Reference => s.disturbance_scale,
            DisturbanceKind::None => 0.0,
        };
        StringScenario {
            gain: self.string_stability.k,
            horizon: s.horizon,
            options: s.step.map(|h| SimOptions {
                horizon: s.horizon,
                step: StepControl::Fixed(h),
                output_interval: s.output_interval,
            }),
            seed: s.seed,
            preset: preset(self.string_stability.initial),
            w_sup: self.string_stability.w_sup,
            disturbance_scale: scale,
            leader: self.leader(),
        }
    }
}

fn preset(kind: PresetKind) -> InitialPreset {
    match kind {
        PresetKind::Equilibrium => InitialPreset::Equilibrium,
        PresetKind::Perturbed => InitialPreset::Perturbed,
    }
}

/// Configuration text of the reference experiment.
pub const REFERENCE_CONFIG: &str = r#"[platoon]
n = 10
spacing = 10.0
masses = 1.0

[law]
kind = "tanh_affine"
amplitude = 0.5
lead = 0.18
follow = 0.18
slope = 0.1

[gains]
k = 5.0

[scenario]
leader = "reference"
disturbance = "reference"
seed = 2024
horizon = 100.0
output_interval = 0.01
initial = "perturbed"
controller = "range_r"
frame = "pv"

[sweep]
r_list = [1, 3, 10]

[output]
dir = "results"

[string_stability]
n_list = [5, 10, 20]
lead_base = 1.0
lead_step = 0.1
follow = 0.5
k = 5.0
w_sup = 5.0
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_parses() {
        let cfg = ExperimentConfig::parse(REFERENCE_CONFIG, "reference").unwrap();
        assert_eq!(cfg.n(), 10);
        assert_eq!(cfg.r_list(), vec![1, 3, 10]);
        assert_eq!(cfg.scenario.seed, scenario::REFERENCE_SEED);
        let pc = cfg.platoon_config(3).unwrap();
        assert!((pc.epsilon() - 0.2).abs() < 1e-15);
        let consts = crate::formation::check_condition_6_7(pc.law()).unwrap();
        assert!((consts.eta1 - 0.1).abs() < 1e-15);
        assert_eq!(cfg.sim_options(0.2).step, StepControl::Fixed(1e-3));
        assert_eq!(cfg.sim_options(0.01).step, StepControl::Fixed(5e-4));
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let text = "[platoon]\nn = 3\nspacing = 8.0\n[law]\nkind = \"linear\"\nlead = [1.1, 1.2, 1.3]\nfollow = 0.5\n[gains]\nk = [4.0, 5.0, 6.0]\n";
        let cfg = ExperimentConfig::parse(text, "mini").unwrap();
        assert_eq!(cfg.r_list(), vec![3]);
        assert_eq!(cfg.scenario.horizon, 100.0);
        assert_eq!(cfg.masses().unwrap(), vec![1.0; 3]);
        assert_eq!(cfg.platoon_config(1).unwrap().k_min(), 4.0);
    }

    #[test]
    fn diagnostics_name_the_problem() {
        let unknown = REFERENCE_CONFIG.replace("slope = 0.1", "slope = 0.1\nslop = 2");
        let err = ExperimentConfig::parse(&unknown, "cfg.toml").unwrap_err().to_string();
        assert!(err.contains("cfg.toml") && err.contains("slop"), "{err}");
        assert!(err.contains("line"), "{err}");

        let bad_len = REFERENCE_CONFIG.replace("k = 5.0\n\n[scenario]", "k = [5.0, 5.0]\n\n[scenario]");
        let err = ExperimentConfig::parse(&bad_len, "cfg.toml").unwrap_err().to_string();
        assert!(err.contains("gains.k"), "{err}");

        let bad_r = REFERENCE_CONFIG.replace("r_list = [1, 3, 10]", "r_list = [1, 30]");
        let err = ExperimentConfig::parse(&bad_r, "cfg.toml").unwrap_err().to_string();
        assert!(err.contains("r_list"), "{err}");

        let missing = REFERENCE_CONFIG.replace("amplitude = 0.5\n", "");
        let err = ExperimentConfig::parse(&missing, "cfg.toml").unwrap_err().to_string();
        assert!(err.contains("law.amplitude"), "{err}");

        let syntax = "[platoon\nn = 3";
        assert!(matches!(ExperimentConfig::parse(syntax, "x"), Err(Error::Parse { .. })));
    }

    #[test]
    fn string_law_family() {
        let cfg = ExperimentConfig::parse(REFERENCE_CONFIG, "reference").unwrap();
        for n in [5, 10, 20] {
            let law = cfg.string_stability.law(n).unwrap();
            let eta = crate::formation::check_condition_27(law.as_ref()).unwrap();
            assert!((eta - 0.1).abs() < 1e-12);
        }
    }
}
