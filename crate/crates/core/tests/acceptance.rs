//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness: `cargo test -p platoon-core --test acceptance`.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use platoon_core::bounds::{corollary1_factor, thm2_string_bound};
use platoon_core::certificates::{
    block_majorant_b, certify, example1_mu2, induced_norm, mu_p, stability_residual, Measure,
};
use platoon_core::config::{ExperimentConfig, REFERENCE_CONFIG};
use platoon_core::dynamics::{spacing_jacobian, Frame, FrozenSpacing, PlatoonConfig};
use platoon_core::experiment::{self, RangeRun, Stages};
use platoon_core::formation::{check_condition_6_7, FormationLaw, TanhAffineLaw};
use platoon_core::integrate::{integrate, StepControl};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn timed(id: u32, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let mut o = f();
    let elapsed = start.elapsed();
    if let Some(limit) = limit {
        if elapsed > limit {
            o.passed = false;
            o.detail += &format!("; runtime {elapsed:.2?} exceeds {limit:?}");
        }
    }
    println!(
        "[{}] criterion {id:>2}: {name} ({elapsed:.2?}) {}",
        if o.passed { "PASS" } else { "FAIL" },
        o.detail
    );
    o.passed
}

fn reference() -> ExperimentConfig {
    ExperimentConfig::parse(REFERENCE_CONFIG, "reference").unwrap()
}

fn reference_law(n: usize) -> Arc<dyn FormationLaw> {
    Arc::new(TanhAffineLaw::uniform(n, 10.0, 0.5, 0.18, 0.18, 0.1).unwrap())
}

fn limit_oracle(m: &DMatrix<f64>, p: Measure) -> f64 {
    let h = 1e-7;
    let id = DMatrix::identity(m.nrows(), m.ncols());
    (induced_norm(&(id + m * h), p).unwrap() - 1.0) / h
}

fn c1_closed_form() -> Outcome {
    let mut worst = 0.0_f64;
    for m in 1..=50 {
        let cfg = PlatoonConfig::uniform(reference_law(m), 1, 5.0).unwrap();
        let b = block_majorant_b(&cfg, 0.0).unwrap();
        worst = worst.max((mu_p(&b, Measure::Two).unwrap() - example1_mu2(m)).abs());
    }
    outcome(worst <= 1e-10, format!("max |mu2 - closed form| = {worst:.3e}"))
}

fn c2_measure_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let m = DMatrix::from_fn(8, 8, |_, _| rng.gen_range(-1.0..1.0));
        for p in [Measure::One, Measure::Two, Measure::Inf] {
            worst = worst.max((mu_p(&m, p).unwrap() - limit_oracle(&m, p)).abs());
        }
    }
    outcome(worst <= 1e-5, format!("max deviation = {worst:.3e}"))
}

fn c3_jacobian_measure() -> Outcome {
    let law = reference_law(10);
    let eta1 = check_condition_6_7(law.as_ref()).unwrap().eta1;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..10_000 {
        let x: Vec<f64> = (0..10).map(|_| rng.gen_range(-40.0..60.0)).collect();
        let j = spacing_jacobian(law.as_ref(), &x).unwrap();
        worst = worst.max(mu_p(&j, Measure::Inf).unwrap());
    }
    outcome(
        worst <= -eta1 + 1e-12,
        format!("eta1 = {eta1}, max mu_inf(J) = {worst:.12}"),
    )
}

fn c4_frames() -> Outcome {
    let mut cfg = reference();
    cfg.scenario.horizon = 50.0;
    cfg.scenario.step = Some(1e-3);
    let run = |frame| {
        let mut c = cfg.clone();
        c.scenario.frame = match frame {
            Frame::Pv => platoon_core::config::FrameKind::Pv,
            Frame::Xy => platoon_core::config::FrameKind::Xy,
        };
        RangeRun::new(&c, 3).unwrap().simulate().unwrap()
    };
    let (a, b) = rayon::join(|| run(Frame::Pv), || run(Frame::Xy));
    let worst = a
        .x
        .iter()
        .zip(&b.x)
        .flat_map(|(p, q)| p.iter().zip(q).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max);
    outcome(
        worst <= 1e-5 && a.len() == b.len(),
        format!("{} samples, max |x_pv - x_xy| = {worst:.3e} m", a.len()),
    )
}

fn c5_frozen_contraction() -> Outcome {
    let law = reference_law(10);
    let sys = FrozenSpacing {
        law: law.as_ref(),
        input: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_ratio = 0.0_f64;
    for _ in 0..20 {
        let a: Vec<f64> = (0..10).map(|_| 10.0 + rng.gen_range(-10.0..10.0)).collect();
        let b: Vec<f64> = (0..10).map(|_| 10.0 + rng.gen_range(-10.0..10.0)).collect();
        let sa = integrate(&sys, 0.0, 50.0, &a, StepControl::Fixed(1e-3), 0.05).unwrap();
        let sb = integrate(&sys, 0.0, 50.0, &b, StepControl::Fixed(1e-3), 0.05).unwrap();
        let d0 = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        for ((t, xa), xb) in sa.times.iter().zip(&sa.states).zip(&sb.states) {
            let d = xa.iter().zip(xb).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            worst_ratio = worst_ratio.max(d / ((-0.1 * t).exp() * d0));
        }
    }
    outcome(
        worst_ratio <= 1.0 + 1e-6,
        format!("max |dx(t)| / (exp(-0.1 t) |dx(0)|) = {worst_ratio:.9}"),
    )
}

fn c6_ordering() -> Outcome {
    let cfg = reference();
    let stages = Stages {
        simulate: true,
        verify: false,
    };
    let first = experiment::run_ranges(&cfg, stages).unwrap();
    let second = experiment::run_ranges(&cfg, stages).unwrap();
    let peaks: Vec<f64> = first.iter().map(|o| o.max_overshoot.unwrap()).collect();
    let ordered = peaks.windows(2).all(|w| w[1] <= w[0]);
    let identical = first.iter().zip(&second).all(|(a, b)| {
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        a.trajectory.as_ref().unwrap().write_csv(&mut ca).unwrap();
        b.trajectory.as_ref().unwrap().write_csv(&mut cb).unwrap();
        ca == cb
    });
    outcome(
        ordered && identical && peaks[0] > 0.0,
        format!("max |x - e| for r = 1, 3, 10: {peaks:.4?}; deterministic = {identical}"),
    )
}

fn c7_envelopes() -> Outcome {
    let cfg = reference();
    let outcomes = experiment::run_ranges(
        &cfg,
        Stages {
            simulate: false,
            verify: true,
        },
    )
    .unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for o in &outcomes {
        let cal = o.calibration.as_ref().unwrap();
        match &o.reports {
            Some((x, y)) => {
                ok &= x.violations() == 0 && y.violations() == 0;
                detail.push(format!(
                    "r = {}: eps* = {:.4}, sigma = {:.4}, violations x/y = {}/{}",
                    o.r,
                    cal.eps_star.unwrap(),
                    cal.sigma,
                    x.violations(),
                    y.violations()
                ));
            }
            None => {
                ok = false;
                detail.push(format!("r = {}: no eps* found", o.r));
            }
        }
    }
    outcome(ok, detail.join("; "))
}

fn c8_range_factors() -> Outcome {
    let factors: Vec<f64> = [1, 3, 10].iter().map(|&r| corollary1_factor(10, r)).collect();
    let exact = factors == [10f64.sqrt(), 2.0, 1.0];
    let cfg = reference();
    let outcomes = experiment::run_ranges(
        &cfg,
        Stages {
            simulate: false,
            verify: false,
        },
    )
    .unwrap();
    let asym: Vec<f64> = outcomes.iter().map(|o| o.envelope_asymptote.unwrap()).collect();
    let monotone = asym.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        exact && monotone,
        format!("factors = {factors:?}; asymptotes = {asym:.4?} m"),
    )
}

fn c9_string_stability() -> Outcome {
    let cfg = reference();
    let table = experiment::run_string_stability(&cfg).unwrap();
    let within = table.all_within_bound();
    let per_n: Vec<f64> = table
        .rows
        .iter()
        .map(|r| thm2_string_bound(r.eta, r.eps, r.x0, r.z0, table.w_sup))
        .collect();
    let identical = per_n.iter().all(|b| (b - table.bound).abs() <= 1e-12 * table.bound);
    let peaks: Vec<(usize, f64)> = table.rows.iter().map(|r| (r.n, r.max_overshoot)).collect();
    outcome(
        within && identical && table.rows.len() == 3,
        format!("bound = {:.6} m; per-n bounds {per_n:?}; overshoots {peaks:.4?}", table.bound),
    )
}

fn c10_certificates() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    for n in [5, 8, 10, 16, 20] {
        for (r, eps) in [(1, 0.2), (2, 0.1), (3, 0.02), (n, 0.05)] {
            let cfg = PlatoonConfig::uniform(reference_law(n), r, 5.0)
                .unwrap()
                .with_epsilon(eps)
                .unwrap();
            let cert = certify(&cfg).unwrap();
            worst = worst.max(stability_residual(&cert.majorant, &cert.weights, cert.eta2));
            count += 1;
        }
    }
    outcome(
        worst <= 1e-9 && count == 20,
        format!("{count} grid points, max lambda_max(D^2 B + B^T D^2) + 2 eta2 = {worst:.3e}"),
    )
}

fn main() {
    let s = Duration::from_secs;
    let results = [
        timed(1, "tridiagonal majorant closed form", Some(s(1)), c1_closed_form),
        timed(2, "matrix-measure limit oracle", Some(s(5)), c2_measure_oracle),
        timed(3, "spacing Jacobian measure bound", Some(s(5)), c3_jacobian_measure),
        timed(4, "PV and (x, y) frames agree", Some(s(60)), c4_frames),
        timed(5, "frozen x-subsystem contracts", None, c5_frozen_contraction),
        timed(6, "overshoot non-increasing in r", Some(s(180)), c6_ordering),
        timed(7, "x and y envelopes dominate", Some(s(300)), c7_envelopes),
        timed(8, "range factors and asymptotes", None, c8_range_factors),
        timed(9, "length-free string bound", Some(s(180)), c9_string_stability),
        timed(10, "diagonal-stability certificates", None, c10_certificates),
    ];
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| i + 1)
        .collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        eprintln!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
