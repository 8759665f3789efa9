//! Formation mappings `d_i`, their partial derivatives, the sign/rate
//! conditions they have to satisfy, desired velocities and the steady-state
//! map `h(x)`.
//!
//! A law is anything implementing [`FormationLaw`]: besides point values and
//! partials it has to report, per vehicle, the exact ranges of its partials
//! over all spacings. Contraction constants are certified from those ranges,
//! never by sampling.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Real interval with independently open or closed ends.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_open: bool,
    pub hi_open: bool,
}

impl Interval {
    pub fn closed(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            lo_open: false,
            hi_open: false,
        }
    }

    pub fn point(v: f64) -> Self {
        Self::closed(v, v)
    }

    /// Interval spanned by `a` and `b` (in either order), the end at `a`
    /// closed and the end at `b` open unless they coincide.
    fn between(attained: f64, limit: f64) -> Self {
        if attained == limit {
            return Self::point(attained);
        }
        if attained < limit {
            Self {
                lo: attained,
                hi: limit,
                lo_open: false,
                hi_open: true,
            }
        } else {
            Self {
                lo: limit,
                hi: attained,
                lo_open: true,
                hi_open: false,
            }
        }
    }

    pub fn is_positive(&self) -> bool {
        self.lo > 0.0 || (self.lo == 0.0 && self.lo_open && self.hi > 0.0)
    }

    pub fn is_negative(&self) -> bool {
        self.hi < 0.0 || (self.hi == 0.0 && self.hi_open && self.lo < 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }
}

/// Ranges over all `x ∈ ℝⁿ` of `∂d_i/∂x_i`, `∂d_i/∂x_{i+1}` and their sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PartialRanges {
    pub own: Interval,
    pub next: Interval,
    pub sum: Interval,
}

/// A family of formation mappings `d_i(x_i, x_{i+1})`, with `d_{n}`
/// depending on `x_n` only.
///
/// Indices are 0-based. Implementations may assume `i < len()` and
/// `x.len() == len()`; the free functions of this module check both.
pub trait FormationLaw: fmt::Debug + Send + Sync {
    /// Desired spacings `e`.
    fn targets(&self) -> &[f64];

    fn value(&self, i: usize, x: &[f64]) -> f64;

    /// `(∂d_i/∂x_i, ∂d_i/∂x_{i+1})`; the second entry is 0 for the last vehicle.
    fn partials(&self, i: usize, x: &[f64]) -> (f64, f64);

    fn partial_ranges(&self, i: usize) -> PartialRanges;

    fn len(&self) -> usize {
        self.targets().len()
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_targets(e: &[f64]) -> Result<()> {
    if e.is_empty() {
        return Err(Error::Config("a platoon needs at least one follower".into()));
    }
    if let Some(bad) = e.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Config(format!("desired spacings must be positive, got {bad}")));
    }
    Ok(())
}

fn check_gains(name: &str, gains: &[f64], n: usize) -> Result<()> {
    if gains.len() != n {
        return Err(Error::Config(format!(
            "`{name}` has {} entries, expected {n}",
            gains.len()
        )));
    }
    if let Some(bad) = gains.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Config(format!("`{name}` entries must be positive, got {bad}")));
    }
    Ok(())
}

/// `d_i = ℓᵖ_i (x_i − e_i) − ℓᶠ_i (x_{i+1} − e_{i+1})`.
///
/// `follow[n-1]` is stored for symmetry but never used: the last vehicle
/// has no follower.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearLaw {
    pub targets: Vec<f64>,
    pub lead: Vec<f64>,
    pub follow: Vec<f64>,
}

impl LinearLaw {
    pub fn new(targets: Vec<f64>, lead: Vec<f64>, follow: Vec<f64>) -> Result<Self> {
        check_targets(&targets)?;
        check_gains("lead", &lead, targets.len())?;
        check_gains("follow", &follow, targets.len())?;
        Ok(Self {
            targets,
            lead,
            follow,
        })
    }

    pub fn uniform(n: usize, spacing: f64, lead: f64, follow: f64) -> Result<Self> {
        Self::new(vec![spacing; n], vec![lead; n], vec![follow; n])
    }
}

impl FormationLaw for LinearLaw {
    fn targets(&self) -> &[f64] {
        &self.targets
    }

    fn value(&self, i: usize, x: &[f64]) -> f64 {
        let own = self.lead[i] * (x[i] - self.targets[i]);
        if i + 1 < x.len() {
            own - self.follow[i] * (x[i + 1] - self.targets[i + 1])
        } else {
            own
        }
    }

    fn partials(&self, i: usize, _x: &[f64]) -> (f64, f64) {
        if i + 1 < self.len() {
            (self.lead[i], -self.follow[i])
        } else {
            (self.lead[i], 0.0)
        }
    }

    fn partial_ranges(&self, i: usize) -> PartialRanges {
        let (a, b) = self.partials(i, &[]);
        PartialRanges {
            own: Interval::point(a),
            next: Interval::point(b),
            sum: Interval::point(a + b),
        }
    }
}

/// `d_i = ℓ_i tanh(ℓᵖ_i (x_i − e_i) − ℓᶠ_i (x_{i+1} − e_{i+1})) + b_i (x_i − e_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TanhAffineLaw {
    pub targets: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub lead: Vec<f64>,
    pub follow: Vec<f64>,
    pub slope: Vec<f64>,
}

impl TanhAffineLaw {
    pub fn new(
        targets: Vec<f64>,
        amplitude: Vec<f64>,
        lead: Vec<f64>,
        follow: Vec<f64>,
        slope: Vec<f64>,
    ) -> Result<Self> {
        check_targets(&targets)?;
        let n = targets.len();
        check_gains("amplitude", &amplitude, n)?;
        check_gains("lead", &lead, n)?;
        check_gains("follow", &follow, n)?;
        check_gains("slope", &slope, n)?;
        Ok(Self {
            targets,
            amplitude,
            lead,
            follow,
            slope,
        })
    }

    pub fn uniform(n: usize, spacing: f64, amplitude: f64, lead: f64, follow: f64, slope: f64) -> Result<Self> {
        Self::new(
            vec![spacing; n],
            vec![amplitude; n],
            vec![lead; n],
            vec![follow; n],
            vec![slope; n],
        )
    }

    fn argument(&self, i: usize, x: &[f64]) -> f64 {
        let own = self.lead[i] * (x[i] - self.targets[i]);
        if i + 1 < x.len() {
            own - self.follow[i] * (x[i + 1] - self.targets[i + 1])
        } else {
            own
        }
    }
}

impl FormationLaw for TanhAffineLaw {
    fn targets(&self) -> &[f64] {
        &self.targets
    }

    fn value(&self, i: usize, x: &[f64]) -> f64 {
        self.amplitude[i] * self.argument(i, x).tanh() + self.slope[i] * (x[i] - self.targets[i])
    }

    fn partials(&self, i: usize, x: &[f64]) -> (f64, f64) {
        let th = self.argument(i, x).tanh();
        let sech2 = 1.0 - th * th;
        let own = self.amplitude[i] * self.lead[i] * sech2 + self.slope[i];
        if i + 1 < x.len() {
            (own, -self.amplitude[i] * self.follow[i] * sech2)
        } else {
            (own, 0.0)
        }
    }

    // sech² ranges over (0, 1]: the value at 1 is attained at the zero of the
    // argument, the value at 0 only in the limit.
    fn partial_ranges(&self, i: usize) -> PartialRanges {
        let (l, b) = (self.amplitude[i], self.slope[i]);
        let own = Interval::between(b + l * self.lead[i], b);
        if i + 1 < self.len() {
            PartialRanges {
                own,
                next: Interval::between(-l * self.follow[i], 0.0),
                sum: Interval::between(b + l * (self.lead[i] - self.follow[i]), b),
            }
        } else {
            PartialRanges {
                own,
                next: Interval::point(0.0),
                sum: own,
            }
        }
    }
}

/// Rates certified for a law: `∂d_i/∂x_i + ∂d_i/∂x_{i+1} ≥ eta1` and every
/// partial bounded by `c` in magnitude, uniformly in `x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContractionConstants {
    pub eta1: f64,
    pub c: f64,
}

fn check_index(law: &dyn FormationLaw, i: usize, x: &[f64]) -> Result<()> {
    let n = law.len();
    if i >= n {
        return Err(Error::Index { index: i, len: n });
    }
    if x.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: x.len(),
        });
    }
    Ok(())
}

fn check_len(law: &dyn FormationLaw, x: &[f64]) -> Result<()> {
    if x.len() != law.len() {
        return Err(Error::Dimension {
            expected: law.len(),
            got: x.len(),
        });
    }
    Ok(())
}

pub fn eval_d(law: &dyn FormationLaw, i: usize, x: &[f64]) -> Result<f64> {
    check_index(law, i, x)?;
    Ok(law.value(i, x))
}

pub fn partials_d(law: &dyn FormationLaw, i: usize, x: &[f64]) -> Result<(f64, f64)> {
    check_index(law, i, x)?;
    Ok(law.partials(i, x))
}

/// All `d_i(x)` at once.
pub fn eval_all(law: &dyn FormationLaw, x: &[f64]) -> Result<Vec<f64>> {
    check_len(law, x)?;
    Ok((0..law.len()).map(|i| law.value(i, x)).collect())
}

fn sign_conditions(law: &dyn FormationLaw, i: usize, ranges: &PartialRanges) -> Result<()> {
    if !ranges.own.is_positive() {
        return Err(Error::Condition {
            condition: "∂d_i/∂x_i > 0",
            vehicle: i + 1,
            value: ranges.own.lo,
        });
    }
    if i + 1 < law.len() && !ranges.next.is_negative() {
        return Err(Error::Condition {
            condition: "∂d_i/∂x_{i+1} < 0",
            vehicle: i + 1,
            value: ranges.next.hi,
        });
    }
    Ok(())
}

fn partial_bound(ranges: &[PartialRanges]) -> Result<f64> {
    let c = ranges
        .iter()
        .map(|r| r.own.max_abs().max(r.next.max_abs()))
        .fold(0.0, f64::max);
    if !c.is_finite() {
        return Err(Error::Condition {
            condition: "bounded partials",
            vehicle: 0,
            value: c,
        });
    }
    Ok(c)
}

/// Certifies the sign conditions on the partials, returns the tightest
/// `eta1 = min_i inf_x (∂d_i/∂x_i + ∂d_i/∂x_{i+1})` and
/// `c = max_i sup_x max(|∂d_i/∂x_i|, |∂d_i/∂x_{i+1}|)`.
pub fn check_condition_6_7(law: &dyn FormationLaw) -> Result<ContractionConstants> {
    let ranges: Vec<_> = (0..law.len()).map(|i| law.partial_ranges(i)).collect();
    let mut eta1 = f64::INFINITY;
    for (i, r) in ranges.iter().enumerate() {
        sign_conditions(law, i, r)?;
        if r.sum.lo <= 0.0 {
            return Err(Error::Condition {
                condition: "∂d_i/∂x_i + ∂d_i/∂x_{i+1} ≥ η₁ > 0",
                vehicle: i + 1,
                value: r.sum.lo,
            });
        }
        eta1 = eta1.min(r.sum.lo);
    }
    Ok(ContractionConstants {
        eta1,
        c: partial_bound(&ranges)?,
    })
}

/// Certifies the heterogeneous condition behind length-independent spacing
/// bounds: the first partial sum is at least `η` and each partial sum
/// exceeds its predecessor's by at least `η`, uniformly in `x`. Returns the
/// largest such `η`.
///
/// Consecutive sums are compared through their ranges (`inf s_{i+1} − sup s_i`),
/// so the check stays valid when the sums depend on `x`.
pub fn check_condition_27(law: &dyn FormationLaw) -> Result<f64> {
    let ranges: Vec<_> = (0..law.len()).map(|i| law.partial_ranges(i)).collect();
    for (i, r) in ranges.iter().enumerate() {
        sign_conditions(law, i, r)?;
    }
    partial_bound(&ranges)?;
    let mut eta = ranges[0].sum.lo;
    if eta <= 0.0 {
        return Err(Error::Condition {
            condition: "∂d_1/∂x_1 + ∂d_1/∂x_2 ≥ η > 0",
            vehicle: 1,
            value: eta,
        });
    }
    for (i, pair) in ranges.windows(2).enumerate() {
        let gap = pair[1].sum.lo - pair[0].sum.hi;
        if gap <= 0.0 {
            return Err(Error::Condition {
                condition: "partial sums increasing by η along the string",
                vehicle: i + 1,
                value: gap,
            });
        }
        eta = eta.min(gap);
    }
    Ok(eta)
}

/// `v_di = d_i(x) + v0`.
pub fn desired_velocity(law: &dyn FormationLaw, x: &[f64], v0: f64) -> Result<Vec<f64>> {
    Ok(eval_all(law, x)?.into_iter().map(|d| d + v0).collect())
}

/// Steady state of the velocity errors, `h_i = Σ_{j<i} d_j(x)`.
pub fn steady_state_h(law: &dyn FormationLaw, x: &[f64]) -> Result<Vec<f64>> {
    check_len(law, x)?;
    Ok(prefix_sums(law, x))
}

pub(crate) fn prefix_sums(law: &dyn FormationLaw, x: &[f64]) -> Vec<f64> {
    let n = law.len();
    let mut h = vec![0.0; n];
    for i in 1..n {
        h[i] = h[i - 1] + law.value(i - 1, x);
    }
    h
}

/// `∂h/∂x`, lower triangular: `H_ik = [k < i] ∂d_k/∂x_k + [1 ≤ k ≤ i] ∂d_{k-1}/∂x_k`.
pub fn steady_state_jacobian(law: &dyn FormationLaw, x: &[f64]) -> Result<DMatrix<f64>> {
    check_len(law, x)?;
    let n = law.len();
    let partials: Vec<_> = (0..n).map(|i| law.partials(i, x)).collect();
    Ok(DMatrix::from_fn(n, n, |i, k| {
        let mut v = 0.0;
        if k < i {
            v += partials[k].0;
        }
        if k >= 1 && k <= i {
            v += partials[k - 1].1;
        }
        v
    }))
}
