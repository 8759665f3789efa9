//! Matrix measures, the block majorant of the fast subsystem, diagonal
//! stability and the resulting contraction certificate.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{matrix_g, PlatoonConfig};
use crate::formation::{self, Interval};
use crate::signals::{BlockPartition, WeightedNormSpec};
use crate::{Error, Result};

/// Which vector norm a matrix measure or induced norm refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Measure {
    One,
    Two,
    Inf,
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if m.is_empty() {
        return Err(Error::Empty);
    }
    Ok(())
}

fn lambda_max_sym(s: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(s).eigenvalues.max()
}

fn row_measure(m: &DMatrix<f64>, i: usize) -> f64 {
    (0..m.ncols())
        .map(|j| if i == j { m[(i, j)] } else { m[(i, j)].abs() })
        .sum()
}

/// Matrix measure (logarithmic norm) induced by the 1-, 2- or ∞-norm.
pub fn mu_p(m: &DMatrix<f64>, p: Measure) -> Result<f64> {
    check_square(m)?;
    Ok(match p {
        Measure::Inf => (0..m.nrows()).map(|i| row_measure(m, i)).fold(f64::NEG_INFINITY, f64::max),
        Measure::One => {
            let t = m.transpose();
            (0..t.nrows()).map(|i| row_measure(&t, i)).fold(f64::NEG_INFINITY, f64::max)
        }
        Measure::Two => lambda_max_sym((m + m.transpose()) * 0.5),
    })
}

/// `μ₂(D M D⁻¹)` for a positive diagonal `D` given by its entries.
pub fn mu_weighted_2(m: &DMatrix<f64>, d: &[f64]) -> Result<f64> {
    check_square(m)?;
    if d.len() != m.nrows() {
        return Err(Error::Dimension {
            expected: m.nrows(),
            got: d.len(),
        });
    }
    if let Some(bad) = d.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Config(format!("diagonal weights must be positive, got {bad}")));
    }
    let scaled = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| d[i] * m[(i, j)] / d[j]);
    mu_p(&scaled, Measure::Two)
}

/// Induced matrix norm for the 1-, 2- or ∞-norm.
pub fn induced_norm(m: &DMatrix<f64>, p: Measure) -> Result<f64> {
    if m.is_empty() {
        return Err(Error::Empty);
    }
    let abs_rows = |m: &DMatrix<f64>| {
        (0..m.nrows())
            .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    Ok(match p {
        Measure::Inf => abs_rows(m),
        Measure::One => abs_rows(&m.transpose()),
        Measure::Two => m.singular_values().max(),
    })
}

/// `−1 + cos(π / (m + 1))`, the 2-measure of the `m × m` tridiagonal matrix
/// with `−1` on the diagonal and `½` beside it.
pub fn example1_mu2(m: usize) -> f64 {
    -1.0 + (std::f64::consts::PI / (m as f64 + 1.0)).cos()
}

/// `m × m` matrix with `−1` on the diagonal and `+1` on the first subdiagonal.
pub fn example1_matrix(m: usize) -> DMatrix<f64> {
    matrix_g(m)
}

/// Interval of `ε` times a signed sum of independent ranges.
fn scaled_sum(terms: &[(f64, Interval)], eps: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (0.0, 0.0);
    for (sign, iv) in terms {
        if *sign > 0.0 {
            lo += iv.lo;
            hi += iv.hi;
        } else {
            lo -= iv.hi;
            hi -= iv.lo;
        }
    }
    (eps * lo, eps * hi)
}

/// Entrywise range of `A + F(x)` over all `x`, as `(lo, hi)` matrices.
pub fn fast_jacobian_ranges(cfg: &PlatoonConfig, eps: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let law = cfg.law();
    let n = cfg.n();
    let r = cfg.range();
    let kb = cfg.relative_gains();
    let ranges: Vec<_> = (0..n).map(|i| law.partial_ranges(i)).collect();
    let zero = Interval::point(0.0);
    let a = |j: usize| ranges[j].own;
    let b = |j: Option<usize>| j.map_or(zero, |j| ranges[j].next);
    let mut lo = DMatrix::zeros(n, n);
    let mut hi = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let f = if j == i {
                scaled_sum(&[(1.0, b(i.checked_sub(1)))], eps)
            } else if j + 1 == i {
                scaled_sum(&[(1.0, a(j)), (1.0, b(j.checked_sub(1))), (-1.0, b(Some(j)))], eps)
            } else {
                scaled_sum(
                    &[
                        (1.0, a(j)),
                        (1.0, b(j.checked_sub(1))),
                        (-1.0, a(j + 1)),
                        (-1.0, b(Some(j))),
                    ],
                    eps,
                )
            };
            let base = if i == j {
                -kb[i]
            } else if i == j + r {
                kb[i]
            } else {
                0.0
            };
            lo[(i, j)] = base + f.0;
            hi[(i, j)] = base + f.1;
        }
    }
    (lo, hi)
}

/// Block matrix `B` of a matrix `J` for a partition: diagonal entries are
/// `μ∞` of the diagonal blocks, off-diagonal entries the ∞-norms of the
/// off-diagonal blocks.
pub fn block_matrix(j: &DMatrix<f64>, partition: &BlockPartition) -> DMatrix<f64> {
    block_from_bounds(partition, |row, col| {
        if row == col {
            j[(row, col)]
        } else {
            j[(row, col)].abs()
        }
    })
}

fn block_from_bounds(partition: &BlockPartition, sup: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
    let m = partition.m();
    let mut out = DMatrix::zeros(m, m);
    for (k, rows) in partition.blocks().enumerate() {
        for (l, cols) in partition.blocks().enumerate() {
            out[(k, l)] = rows
                .clone()
                .map(|i| cols.clone().map(|j| sup(i, j)).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }
    out
}

/// Majorant `B̄ ≥ B(x)` for all `x`, from interval bounds on the entries of
/// `A + F(x)` evaluated at `eps`.
pub fn block_majorant_b(cfg: &PlatoonConfig, eps: f64) -> Result<DMatrix<f64>> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("ε must be finite and nonnegative, got {eps}")));
    }
    let partition = BlockPartition::new(cfg.n(), cfg.range())?;
    let (lo, hi) = fast_jacobian_ranges(cfg, eps);
    Ok(block_from_bounds(&partition, |i, j| {
        if i == j {
            hi[(i, j)]
        } else {
            lo[(i, j)].abs().max(hi[(i, j)].abs())
        }
    }))
}

/// `min_i k̄_i / (2 c (r − 1))`, infinite for `r = 1`.
pub fn epsilon_bar(cfg: &PlatoonConfig, c: f64) -> f64 {
    if cfg.range() == 1 || c == 0.0 {
        return f64::INFINITY;
    }
    let kb_min = cfg.relative_gains().into_iter().fold(f64::INFINITY, f64::min);
    kb_min / (2.0 * c * (cfg.range() as f64 - 1.0))
}

/// Diagonal weights `q` (normalised to `min q = 1`) and rate `η₂ = −μ₂(D B D⁻¹)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalStability {
    pub weights: Vec<f64>,
    pub eta2: f64,
}

const ASCENT_TOL: f64 = 1e-3;
const ASCENT_MAX_SWEEPS: usize = 2000;

fn check_metzler_lower(b: &DMatrix<f64>) -> Result<()> {
    check_square(b)?;
    for i in 0..b.nrows() {
        for j in 0..b.ncols() {
            let v = b[(i, j)];
            if !v.is_finite() {
                return Err(Error::Config(format!("majorant entry ({i}, {j}) is not finite")));
            }
            if i != j && v < 0.0 {
                return Err(Error::Config(format!("majorant entry ({i}, {j}) = {v} is negative")));
            }
            if j > i && v != 0.0 {
                return Err(Error::Config(format!("majorant entry ({i}, {j}) = {v} is above the diagonal")));
            }
        }
    }
    Ok(())
}

/// Backward recursion making every Gershgorin disc of the symmetric part of
/// `D B D⁻¹` lie left of `−δ_i / 2`.
fn gershgorin_weights(b: &DMatrix<f64>) -> Vec<f64> {
    let m = b.nrows();
    let delta: Vec<f64> = (0..m).map(|i| -b[(i, i)]).collect();
    let spread = (m.max(2) - 1) as f64;
    let mut q = vec![1.0; m];
    for i in (0..m.saturating_sub(1)).rev() {
        let own: f64 = ((i + 1)..m).map(|k| b[(k, i)] * q[k]).sum::<f64>() * 2.0 / delta[i];
        let others = ((i + 1)..m)
            .map(|k| 2.0 * spread * b[(k, i)] * q[k] / delta[k])
            .fold(0.0, f64::max);
        q[i] = own.max(others).max(1.0);
    }
    q
}

fn rate(b: &DMatrix<f64>, q: &[f64]) -> f64 {
    let m = b.nrows();
    let s = DMatrix::from_fn(m, m, |i, j| 0.5 * (q[i] * b[(i, j)] / q[j] + q[j] * b[(j, i)] / q[i]));
    -lambda_max_sym(s)
}

/// Rate discounted by the spread of the weights; this is the quantity the
/// downstream envelope constants depend on.
fn objective(b: &DMatrix<f64>, log_q: &[f64]) -> f64 {
    let q: Vec<f64> = log_q.iter().map(|l| l.exp()).collect();
    let eta = rate(b, &q);
    if eta <= 0.0 {
        return eta;
    }
    let (lo, hi) = log_q
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), l| (lo.min(*l), hi.max(*l)));
    eta * (lo - hi).exp()
}

fn coordinate_ascent(b: &DMatrix<f64>, mut log_q: Vec<f64>) -> Vec<f64> {
    let m = log_q.len();
    let mut best = objective(b, &log_q);
    let mut step = 1.0;
    for _ in 0..ASCENT_MAX_SWEEPS {
        let start = best;
        for i in 0..m {
            for dir in [1.0, -1.0] {
                loop {
                    log_q[i] += dir * step;
                    let val = objective(b, &log_q);
                    if val > best {
                        best = val;
                    } else {
                        log_q[i] -= dir * step;
                        break;
                    }
                }
            }
        }
        let improved = best - start > ASCENT_TOL * best.abs().max(f64::MIN_POSITIVE);
        if !improved {
            if step < ASCENT_TOL {
                break;
            }
            step *= 0.5;
        }
    }
    log_q
}

/// Finds `D = diag(q)` with `min q = 1` and `η₂ > 0` such that
/// `D² B + Bᵀ D² ⪯ −2 η₂ I`, for a lower-triangular Metzler `B` with negative
/// diagonal.
pub fn diagonal_stability(b: &DMatrix<f64>) -> Result<DiagonalStability> {
    check_metzler_lower(b)?;
    let m = b.nrows();
    for i in 0..m {
        if !(b[(i, i)] < 0.0) {
            return Err(Error::NotHurwitz {
                index: i,
                value: b[(i, i)],
            });
        }
    }
    let mut starts = vec![vec![0.0; m]];
    starts.push(gershgorin_weights(b).iter().map(|q| q.ln()).collect());
    let log_q = starts
        .into_iter()
        .map(|s| coordinate_ascent(b, s))
        .max_by(|x, y| objective(b, x).total_cmp(&objective(b, y)))
        .unwrap();
    let floor = log_q.iter().copied().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = log_q.iter().map(|l| (l - floor).exp()).collect();
    let eta2 = rate(b, &weights);
    if !(eta2 > 0.0) {
        return Err(Error::NotHurwitz { index: 0, value: -eta2 });
    }
    Ok(DiagonalStability { weights, eta2 })
}

/// `λ_max(D² B + Bᵀ D²) + 2 η₂`; nonpositive when the certificate holds.
pub fn stability_residual(b: &DMatrix<f64>, weights: &[f64], eta2: f64) -> f64 {
    let m = b.nrows();
    let s = DMatrix::from_fn(m, m, |i, j| {
        weights[i] * weights[i] * b[(i, j)] + b[(j, i)] * weights[j] * weights[j]
    });
    lambda_max_sym(s) + 2.0 * eta2
}

/// How `‖M‖_{∞,*} = sup |M a|∞ / |a|_*` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InducedNormMode {
    /// `‖M‖∞ / min_k q_k`.
    UpperBound,
    /// Largest ratio over random directions and extreme points of the unit
    /// ball; a lower estimate.
    Sampled { samples: usize, seed: u64 },
    /// `max_i (Σ_k (|M_i^k|₁ / q_k)²)^{1/2}` with `M_i^k` the part of row `i`
    /// in block `k`.
    Exact,
}

fn star_ratio(mat: &DMatrix<f64>, a: &[f64], spec: &WeightedNormSpec) -> Result<f64> {
    let den = spec.norm(a)?;
    if den == 0.0 {
        return Ok(0.0);
    }
    let v = mat * nalgebra::DVector::from_column_slice(a);
    Ok(v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs())) / den)
}

/// Induced norm from `|·|_*` to `|·|∞`.
pub fn induced_norm_inf_star(mat: &DMatrix<f64>, spec: &WeightedNormSpec, mode: InducedNormMode) -> Result<f64> {
    let n = spec.partition().n();
    if mat.ncols() != n {
        return Err(Error::Dimension {
            expected: n,
            got: mat.ncols(),
        });
    }
    let q = spec.weights();
    match mode {
        InducedNormMode::UpperBound => Ok(induced_norm(mat, Measure::Inf)? / spec.min_weight()),
        InducedNormMode::Exact => Ok((0..mat.nrows())
            .map(|i| {
                spec.partition()
                    .blocks()
                    .zip(q)
                    .map(|(cols, qk)| (cols.map(|j| mat[(i, j)].abs()).sum::<f64>() / qk).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)),
        InducedNormMode::Sampled { samples, seed } => {
            let mut best = 0.0_f64;
            // each block at its own corner of the ball
            for (k, cols) in spec.partition().blocks().enumerate() {
                let mut a = vec![0.0; n];
                for j in cols {
                    a[j] = 1.0 / q[k];
                }
                best = best.max(star_ratio(mat, &a, spec)?);
            }
            // sign patterns aligned with each row
            for i in 0..mat.nrows() {
                let mass: Vec<f64> = spec
                    .partition()
                    .blocks()
                    .map(|cols| cols.map(|j| mat[(i, j)].abs()).sum())
                    .collect();
                let a: Vec<f64> = (0..n)
                    .map(|j| {
                        let k = spec.partition().block_of(j);
                        mat[(i, j)].signum() * mass[k] / (q[k] * q[k])
                    })
                    .collect();
                best = best.max(star_ratio(mat, &a, spec)?);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut a = vec![0.0; n];
            for _ in 0..samples {
                a.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..=1.0));
                best = best.max(star_ratio(mat, &a, spec)?);
            }
            Ok(best)
        }
    }
}

/// Everything certified about one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ContractionCertificate {
    pub partition: BlockPartition,
    pub weights: Vec<f64>,
    pub eta1: f64,
    pub c: f64,
    pub eta2: f64,
    pub eps_bar: f64,
    /// `ε` at which the majorant was built, `min(ε_cfg, ε̄)`.
    pub eps_certified: f64,
    pub majorant: DMatrix<f64>,
    /// Exact `‖G‖_{∞,*}` for the certified weights.
    pub g_norm: f64,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Certification {
        stage: name,
        source: Box::new(e),
    })
}

impl ContractionCertificate {
    pub fn norm_spec(&self) -> WeightedNormSpec {
        WeightedNormSpec::new(self.partition.clone(), self.weights.clone()).expect("certified weights are positive")
    }

    pub fn m(&self) -> usize {
        self.partition.m()
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }

    /// Residual of `D² B̄ + B̄ᵀ D² ⪯ −2 η₂ I`.
    pub fn residual(&self) -> f64 {
        stability_residual(&self.majorant, &self.weights, self.eta2)
    }

    /// Key-value text form; see [`ContractionCertificate::from_text`].
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        let mut s = String::new();
        let p = &self.partition;
        writeln!(s, "n = {}", p.n()).unwrap();
        writeln!(s, "r = {}", p.r()).unwrap();
        writeln!(s, "m = {}", p.m()).unwrap();
        let sizes: Vec<String> = p.block_sizes().iter().map(usize::to_string).collect();
        writeln!(s, "block_sizes = {}", sizes.join(" ")).unwrap();
        writeln!(s, "eta1 = {}", self.eta1).unwrap();
        writeln!(s, "c = {}", self.c).unwrap();
        writeln!(s, "eta2 = {}", self.eta2).unwrap();
        writeln!(s, "eps_bar = {}", self.eps_bar).unwrap();
        writeln!(s, "eps_certified = {}", self.eps_certified).unwrap();
        writeln!(s, "g_norm_inf_star = {}", self.g_norm).unwrap();
        writeln!(s, "D = {}", join(&self.weights)).unwrap();
        for i in 0..self.majorant.nrows() {
            let row: Vec<f64> = self.majorant.row(i).iter().copied().collect();
            writeln!(s, "B_row_{} = {}", i + 1, join(&row)).unwrap();
        }
        s
    }

    /// Parses the output of [`ContractionCertificate::to_text`]. Blank lines
    /// and lines starting with `#` are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: "<certificate>".into(),
                message: format!("line {}: expected `key = value`", lineno + 1),
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let err = |msg: String| Error::Parse {
            path: "<certificate>".into(),
            message: msg,
        };
        let get = |k: &str| map.get(k).ok_or_else(|| err(format!("missing key `{k}`")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| err(format!("bad number for `{k}`"))) };
        let nums = |k: &str| -> Result<Vec<f64>> {
            get(k)?
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| err(format!("bad number in `{k}`"))))
                .collect()
        };
        let n = num("n")? as usize;
        let r = num("r")? as usize;
        let partition = BlockPartition::new(n, r)?;
        let m = partition.m();
        let mut majorant = DMatrix::zeros(m, m);
        for i in 0..m {
            let row = nums(&format!("B_row_{}", i + 1))?;
            if row.len() != m {
                return Err(err(format!("B_row_{} has {} entries, expected {m}", i + 1, row.len())));
            }
            for (j, v) in row.into_iter().enumerate() {
                majorant[(i, j)] = v;
            }
        }
        let weights = nums("D")?;
        if weights.len() != m {
            return Err(err(format!("D has {} entries, expected {m}", weights.len())));
        }
        Ok(Self {
            partition,
            weights,
            eta1: num("eta1")?,
            c: num("c")?,
            eta2: num("eta2")?,
            eps_bar: num("eps_bar")?,
            eps_certified: num("eps_certified")?,
            majorant,
            g_norm: num("g_norm_inf_star")?,
        })
    }
}

/// Certifies the law, then the fast subsystem at `ε = min(ε_cfg, ε̄)`.
pub fn certify(cfg: &PlatoonConfig) -> Result<ContractionCertificate> {
    certify_at(cfg, cfg.epsilon())
}

/// As [`certify`] with an explicit `ε` in place of `1 / k_min`.
pub fn certify_at(cfg: &PlatoonConfig, eps: f64) -> Result<ContractionCertificate> {
    let constants = stage("formation law", formation::check_condition_6_7(cfg.law()))?;
    let eps_bar = epsilon_bar(cfg, constants.c);
    let eps_certified = eps.min(eps_bar);
    let majorant = stage("block majorant", block_majorant_b(cfg, eps_certified))?;
    let stab = stage("diagonal stability", diagonal_stability(&majorant))?;
    let partition = stage("partition", BlockPartition::new(cfg.n(), cfg.range()))?;
    let spec = WeightedNormSpec::new(partition.clone(), stab.weights.clone())?;
    let g_norm = induced_norm_inf_star(&matrix_g(cfg.n()), &spec, InducedNormMode::Exact)?;
    Ok(ContractionCertificate {
        partition,
        weights: stab.weights,
        eta1: constants.eta1,
        c: constants.c,
        eta2: stab.eta2,
        eps_bar,
        eps_certified,
        majorant,
        g_norm,
    })
}
