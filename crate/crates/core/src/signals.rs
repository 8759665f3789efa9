//! Vector norms, time signals, truncations and signal sup-norms.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use crate::{Error, Result};

/// Default grid spacing (s) used to approximate an essential supremum.
pub const DEFAULT_SUP_STEP: f64 = 1e-3;

pub fn norm_inf(a: &[f64]) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Empty);
    }
    Ok(a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())))
}

/// Split of `0..n` into `m = ceil(n / r)` consecutive blocks, the first
/// `m - 1` of length `r` and the last one holding the remainder.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockPartition {
    n: usize,
    r: usize,
    block_sizes: Vec<usize>,
}

impl BlockPartition {
    pub fn new(n: usize, r: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("partition of an empty vector".into()));
        }
        if r == 0 || r > n {
            return Err(Error::Config(format!("block size r = {r} must lie in 1..={n}")));
        }
        let m = n.div_ceil(r);
        let mut block_sizes = vec![r; m];
        block_sizes[m - 1] = n - (m - 1) * r;
        Ok(Self { n, r, block_sizes })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn m(&self) -> usize {
        self.block_sizes.len()
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    /// Index range of block `k` (0-based).
    pub fn block(&self, k: usize) -> Range<usize> {
        let start = k * self.r;
        start..start + self.block_sizes[k]
    }

    pub fn blocks(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.m()).map(|k| self.block(k))
    }

    /// Block containing component `i`.
    pub fn block_of(&self, i: usize) -> usize {
        i / self.r
    }
}

/// Block partition together with the positive diagonal `D` of the weighted
/// 2-norm applied to the vector of block ∞-norms.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedNormSpec {
    partition: BlockPartition,
    weights: Vec<f64>,
}

impl WeightedNormSpec {
    pub fn new(partition: BlockPartition, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != partition.m() {
            return Err(Error::Dimension {
                expected: partition.m(),
                got: weights.len(),
            });
        }
        if let Some(bad) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::Config(format!("norm weights must be positive, got {bad}")));
        }
        Ok(Self { partition, weights })
    }

    /// Unit weights on every block.
    pub fn unweighted(partition: BlockPartition) -> Self {
        let weights = vec![1.0; partition.m()];
        Self { partition, weights }
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn min_weight(&self) -> f64 {
        self.weights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }

    /// Composite norm of `a`, see [`norm_star`].
    pub fn norm(&self, a: &[f64]) -> Result<f64> {
        norm_star(a, self)
    }
}

/// Composite norm: each block of `a` is measured with the ∞-norm, then the
/// vector of block norms is measured with the `D`-weighted 2-norm `|D b|₂`.
pub fn norm_star(a: &[f64], spec: &WeightedNormSpec) -> Result<f64> {
    let n = spec.partition.n();
    if a.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: a.len(),
        });
    }
    let sum: f64 = spec
        .partition
        .blocks()
        .zip(&spec.weights)
        .map(|(range, q)| {
            let block = a[range].iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
            (q * block).powi(2)
        })
        .sum();
    Ok(sum.sqrt())
}

/// Selector for the vector norm used by signal norms and bound checks.
#[derive(Clone, Debug, PartialEq)]
pub enum VectorNorm {
    Inf,
    Two,
    Star(WeightedNormSpec),
}

impl VectorNorm {
    pub fn apply(&self, a: &[f64]) -> Result<f64> {
        match self {
            VectorNorm::Inf => norm_inf(a),
            VectorNorm::Two => {
                if a.is_empty() {
                    return Err(Error::Empty);
                }
                Ok(a.iter().map(|v| v * v).sum::<f64>().sqrt())
            }
            VectorNorm::Star(spec) => norm_star(a, spec),
        }
    }
}

type EvalFn = dyn Fn(f64, &mut [f64]) + Send + Sync;

/// A real vector function of time on `[0, horizon)`.
///
/// `horizon` may be `f64::INFINITY`. Cloning is cheap: the evaluation
/// closure is shared.
#[derive(Clone)]
pub struct Signal {
    dim: usize,
    horizon: f64,
    eval: Arc<EvalFn>,
}

impl fmt::Debug for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Signal")
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl Signal {
    pub fn new<F>(dim: usize, horizon: f64, eval: F) -> Self
    where
        F: Fn(f64, &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            dim,
            horizon,
            eval: Arc::new(eval),
        }
    }

    pub fn zero(dim: usize, horizon: f64) -> Self {
        Self::new(dim, horizon, |_, out| out.fill(0.0))
    }

    pub fn constant(value: Vec<f64>, horizon: f64) -> Self {
        Self::new(value.len(), horizon, move |_, out| out.copy_from_slice(&value))
    }

    /// Linear interpolation through `(times[k], values[k])`, held constant
    /// outside the sample range. `times` must be increasing.
    pub fn from_samples(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Empty);
        }
        if values.len() != times.len() {
            return Err(Error::Dimension {
                expected: times.len(),
                got: values.len(),
            });
        }
        let dim = values[0].len();
        if let Some(bad) = values.iter().find(|v| v.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                got: bad.len(),
            });
        }
        Ok(Self::new(dim, f64::INFINITY, move |t, out| {
            let k = times.partition_point(|&s| s <= t);
            if k == 0 {
                out.copy_from_slice(&values[0]);
            } else if k == times.len() {
                out.copy_from_slice(&values[k - 1]);
            } else {
                let (t0, t1) = (times[k - 1], times[k]);
                let lambda = (t - t0) / (t1 - t0);
                for (o, (a, b)) in out.iter_mut().zip(values[k - 1].iter().zip(&values[k])) {
                    *o = a + lambda * (b - a);
                }
            }
        }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        if t >= 0.0 && t < self.horizon {
            Ok(())
        } else {
            Err(Error::Domain {
                t,
                horizon: self.horizon,
            })
        }
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        self.check_domain(t)?;
        if out.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: out.len(),
            });
        }
        (self.eval)(t, out);
        Ok(())
    }

    /// Evaluation without the domain check, for hot loops that already
    /// stay inside the domain.
    pub(crate) fn eval_unchecked(&self, t: f64, out: &mut [f64]) {
        (self.eval)(t, out)
    }

    /// `u_τ`: equal to `u` on `[0, τ]`, zero afterwards.
    pub fn truncate_below(&self, tau: f64) -> Result<Signal> {
        self.check_domain(tau)?;
        let inner = Arc::clone(&self.eval);
        Ok(Self::new(self.dim, self.horizon, move |t, out| {
            if t <= tau {
                inner(t, out)
            } else {
                out.fill(0.0)
            }
        }))
    }

    /// `u^τ`: zero on `[0, τ)`, equal to `u` afterwards.
    pub fn truncate_above(&self, tau: f64) -> Result<Signal> {
        self.check_domain(tau)?;
        let inner = Arc::clone(&self.eval);
        Ok(Self::new(self.dim, self.horizon, move |t, out| {
            if t >= tau {
                inner(t, out)
            } else {
                out.fill(0.0)
            }
        }))
    }
}

/// Grid approximation of `ess sup_{t ∈ [0, horizon]} |u(t)|`.
///
/// The grid is `0, step, 2 step, …` plus the right end point (nudged inside
/// the domain when `horizon` equals the domain end).
pub fn signal_sup_norm(u: &Signal, norm: &VectorNorm, horizon: f64, step: f64) -> Result<f64> {
    if !(horizon >= 0.0) || horizon > u.horizon() {
        return Err(Error::Domain {
            t: horizon,
            horizon: u.horizon(),
        });
    }
    if !(step > 0.0) {
        return Err(Error::Config(format!("sampling step must be positive, got {step}")));
    }
    let end = if horizon < u.horizon() {
        horizon
    } else {
        horizon.next_down()
    };
    let steps = (end / step).floor() as usize;
    let mut buf = vec![0.0; u.dim()];
    let mut sup = 0.0_f64;
    for k in 0..=steps {
        u.eval_into(k as f64 * step, &mut buf)?;
        sup = sup.max(norm.apply(&buf)?);
    }
    u.eval_into(end, &mut buf)?;
    Ok(sup.max(norm.apply(&buf)?))
}
