//! Explicit Runge–Kutta integration with breakpoint splitting.
//!
//! The span is cut at every output time and at every breakpoint reported by
//! the system. Inside a piece, stage times are clamped strictly below a
//! breakpoint so a right-continuous input with a jump there is sampled with
//! its left value until the piece ends.

use crate::{Error, Result};

pub trait OdeSystem {
    fn dim(&self) -> usize;

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);

    /// Times at which the vector field may be discontinuous.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepControl {
    /// Classical fourth-order Runge–Kutta with at most this step.
    Fixed(f64),
    /// Dormand–Prince 5(4) with per-component tolerance `atol + rtol |y|`.
    Adaptive { rtol: f64, atol: f64 },
}

/// States at the requested output times.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Solution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Solution {
    pub fn last(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }
}

/// Output grid `t0, t0 + Δ, …` up to `t1`, with `t1` appended when the grid
/// does not land on it.
pub fn output_grid(t0: f64, t1: f64, interval: f64) -> Vec<f64> {
    let count = ((t1 - t0) / interval * (1.0 + 1e-12)).floor() as usize;
    let mut times: Vec<f64> = (0..=count).map(|k| t0 + k as f64 * interval).collect();
    if let Some(last) = times.last_mut() {
        if (t1 - *last).abs() <= 1e-9 * interval {
            *last = t1;
        } else if *last < t1 {
            times.push(t1);
        }
    }
    times
}

struct Workspace {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    next: Vec<f64>,
}

impl Workspace {
    fn new(dim: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; dim]),
            tmp: vec![0.0; dim],
            next: vec![0.0; dim],
        }
    }
}

/// Integrates `sys` from `t0` to `t1` starting at `y0`, recording the state
/// every `output_interval` seconds.
pub fn integrate<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    t1: f64,
    y0: &[f64],
    control: StepControl,
    output_interval: f64,
) -> Result<Solution> {
    if y0.len() != sys.dim() {
        return Err(Error::Dimension {
            expected: sys.dim(),
            got: y0.len(),
        });
    }
    if !(t1 >= t0) || !(output_interval > 0.0) {
        return Err(Error::Config(format!(
            "bad integration span [{t0}, {t1}] with output interval {output_interval}"
        )));
    }
    match control {
        StepControl::Fixed(h) if !(h > 0.0) => {
            return Err(Error::Config(format!("step must be positive, got {h}")))
        }
        StepControl::Adaptive { rtol, atol } if !(rtol > 0.0 && atol > 0.0) => {
            return Err(Error::Config("tolerances must be positive".into()))
        }
        _ => {}
    }

    let outputs = output_grid(t0, t1, output_interval);
    let mut breaks: Vec<f64> = sys
        .breakpoints()
        .into_iter()
        .filter(|&b| b > t0 && b < t1)
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let mut solution = Solution {
        times: Vec::with_capacity(outputs.len()),
        states: Vec::with_capacity(outputs.len()),
    };
    let mut y = y0.to_vec();
    let mut ws = Workspace::new(y.len());
    let mut t = t0;
    solution.times.push(t0);
    solution.states.push(y.clone());

    let mut bi = 0;
    let mut adaptive_h = None;
    for &target in &outputs[1..] {
        while t < target {
            while bi < breaks.len() && breaks[bi] <= t {
                bi += 1;
            }
            let (stop, at_break) = match breaks.get(bi) {
                Some(&b) if b < target => (b, true),
                Some(&b) if b == target => (target, true),
                _ => (target, false),
            };
            let stage_cap = if at_break { stop.next_down() } else { stop };
            match control {
                StepControl::Fixed(h) => rk4_piece(sys, t, stop, stage_cap, h, &mut y, &mut ws)?,
                StepControl::Adaptive { rtol, atol } => {
                    adaptive_h = Some(dopri_piece(
                        sys, t, stop, stage_cap, rtol, atol, adaptive_h, &mut y, &mut ws,
                    )?)
                }
            }
            t = stop;
        }
        solution.times.push(target);
        solution.states.push(y.clone());
    }
    Ok(solution)
}

fn check_finite(t: f64, y: &[f64]) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { t, state: y.to_vec() })
    }
}

fn rk4_piece<S: OdeSystem + ?Sized>(
    sys: &S,
    a: f64,
    b: f64,
    cap: f64,
    h_max: f64,
    y: &mut [f64],
    ws: &mut Workspace,
) -> Result<()> {
    let steps = ((b - a) / h_max * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let h = (b - a) / steps as f64;
    let n = y.len();
    for s in 0..steps {
        let t = a + s as f64 * h;
        let mid = (t + 0.5 * h).min(cap);
        let end = (t + h).min(cap);
        let [k1, k2, k3, k4, ..] = &mut ws.k;
        let tmp = &mut ws.tmp;
        sys.rhs(t, y, k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        sys.rhs(mid, tmp, k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        sys.rhs(mid, tmp, k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        sys.rhs(end, tmp, k4);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        check_finite(t + h, y)?;
    }
    Ok(())
}

// Dormand–Prince 5(4) tableau.
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
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

const MAX_CONSECUTIVE_REJECTIONS: usize = 50;

#[allow(clippy::too_many_arguments)]
fn dopri_piece<S: OdeSystem + ?Sized>(
    sys: &S,
    a: f64,
    b: f64,
    cap: f64,
    rtol: f64,
    atol: f64,
    h_prev: Option<f64>,
    y: &mut [f64],
    ws: &mut Workspace,
) -> Result<f64> {
    let n = y.len();
    let mut t = a;
    let mut h = h_prev.unwrap_or(((b - a) * 1e-3).max(1e-6)).min(b - a);
    let min_step = 1e-12 * a.abs().max(1.0);
    let mut rejections = 0;
    let mut last_accepted = h;
    while t < b {
        let last = t + h >= b;
        if last {
            h = b - t;
        }
        for s in 0..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, aij) in A[s].iter().enumerate().take(s) {
                    acc += h * aij * ws.k[j][i];
                }
                ws.tmp[i] = acc;
            }
            let ts = (t + C[s] * h).min(cap);
            sys.rhs(ts, &ws.tmp, &mut ws.k[s]);
        }
        let mut err = 0.0_f64;
        for i in 0..n {
            let mut y5 = y[i];
            let mut y4 = y[i];
            for s in 0..7 {
                y5 += h * B5[s] * ws.k[s][i];
                y4 += h * B4[s] * ws.k[s][i];
            }
            ws.next[i] = y5;
            let scale = atol + rtol * y[i].abs().max(y5.abs());
            err = err.max(((y5 - y4) / scale).abs());
        }
        if err <= 1.0 && ws.next.iter().all(|v| v.is_finite()) {
            y.copy_from_slice(&ws.next);
            t = if last { b } else { t + h };
            last_accepted = h;
            rejections = 0;
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= factor;
        } else {
            rejections += 1;
            let factor = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.5) } else { 0.1 };
            h *= factor;
            if h < min_step || rejections > MAX_CONSECUTIVE_REJECTIONS {
                return Err(Error::StepRejection { t, min_step });
            }
        }
    }
    check_finite(b, y)?;
    Ok(last_accepted)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay;
    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = -y[0];
        }
    }

    struct Still(usize);
    impl OdeSystem for Still {
        fn dim(&self) -> usize {
            self.0
        }
        fn rhs(&self, _t: f64, _y: &[f64], dy: &mut [f64]) {
            dy.fill(0.0);
        }
    }

    /// ẏ = sign-switching forcing with a jump at t = 1.
    struct Switch;
    impl OdeSystem for Switch {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, t: f64, _y: &[f64], dy: &mut [f64]) {
            dy[0] = if t < 1.0 { 1.0 } else { -2.0 };
        }
        fn breakpoints(&self) -> Vec<f64> {
            vec![1.0]
        }
    }

    struct Blowup;
    impl OdeSystem for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[0] * y[0];
        }
    }

    #[test]
    fn scalar_decay() {
        let sol = integrate(&Decay, 0.0, 1.0, &[1.0], StepControl::Fixed(1e-3), 0.5).unwrap();
        assert_eq!(sol.times, vec![0.0, 0.5, 1.0]);
        assert!((sol.last().unwrap()[0] - (-1f64).exp()).abs() < 1e-8);

        let sol = integrate(
            &Decay,
            0.0,
            1.0,
            &[1.0],
            StepControl::Adaptive { rtol: 1e-10, atol: 1e-12 },
            0.25,
        )
        .unwrap();
        assert!((sol.last().unwrap()[0] - (-1f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn zero_field_is_constant() {
        let y0 = [1.0, -2.0, 3.5];
        let sol = integrate(&Still(3), 0.0, 10.0, &y0, StepControl::Fixed(0.1), 1.0).unwrap();
        assert_eq!(sol.times.len(), 11);
        assert!(sol.states.iter().all(|s| s == &y0));
    }

    #[test]
    fn jump_is_resolved_exactly() {
        for control in [StepControl::Fixed(0.3), StepControl::Adaptive { rtol: 1e-8, atol: 1e-10 }] {
            let sol = integrate(&Switch, 0.0, 2.0, &[0.0], control, 0.7).unwrap();
            // 1·1 − 2·1 = −1, piecewise-constant field integrates exactly
            assert!((sol.last().unwrap()[0] + 1.0).abs() < 1e-12, "{control:?}");
            assert!((sol.states[1][0] - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_appends_the_end_point() {
        assert_eq!(output_grid(0.0, 1.0, 0.3).len(), 5);
        assert_eq!(*output_grid(0.0, 1.0, 0.3).last().unwrap(), 1.0);
        let g = output_grid(0.0, 50.0, 0.01);
        assert_eq!(g.len(), 5001);
        assert_eq!(*g.last().unwrap(), 50.0);
    }

    #[test]
    fn nan_aborts_with_state() {
        let err = integrate(&Blowup, 0.0, 2.0, &[1.0], StepControl::Fixed(0.01), 0.5).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
        let err = integrate(
            &Blowup,
            0.0,
            2.0,
            &[1.0],
            StepControl::Adaptive { rtol: 1e-6, atol: 1e-9 },
            0.5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::StepRejection { .. } | Error::NonFinite { .. }), "{err}");
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(integrate(&Decay, 0.0, 1.0, &[1.0, 2.0], StepControl::Fixed(0.1), 0.1).is_err());
        assert!(integrate(&Decay, 0.0, 1.0, &[1.0], StepControl::Fixed(0.0), 0.1).is_err());
        assert!(integrate(&Decay, 1.0, 0.0, &[1.0], StepControl::Fixed(0.1), 0.1).is_err());
    }
}
