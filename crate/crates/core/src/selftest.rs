//! Invariant suites for the alignment and flow-matching math, runnable from
//! the command line as a quick installation check.

use std::fmt;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::align::{
    avg_mse, build_human_action_chunk, normalized_score, quantile_denormalize, quantile_normalize, quantile_stats,
    resample_chunk, slerp, TimedTrack, WindowSpec,
};
use crate::datamodel::{ActionLayout, Pose6D, Quaternion, Vec3};
use crate::flowmatch::{
    cfm_loss, cfm_target, compose_cotrain_batch, euler_integrate, interpolate_path, sample_timestep, FlowError,
    DEFAULT_INFERENCE_STEPS,
};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        write!(f, "{}: {} checks, {} failed", self.suite, self.checks.len(), failed)
    }
}

fn check(name: &'static str, passed: bool, detail: impl Into<String>) -> Check {
    Check {
        name,
        passed,
        detail: detail.into(),
    }
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose6D {
    let axis: Vec3 = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
    let t: Vec3 = std::array::from_fn(|_| rng.random_range(-5.0..5.0));
    Pose6D::new(Quaternion::from_axis_angle(axis, rng.random_range(-3.0..3.0)), t)
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn run_align_suite(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let worst = (0..200)
        .map(|_| {
            let p = random_pose(&mut rng);
            let id = p.compose(&p.inverse());
            id.rotation.angle().abs() + id.translation.iter().map(|v| v.abs()).sum::<f64>()
        })
        .fold(0.0, f64::max);
    checks.push(check("pose inverse", worst < 1e-9, format!("max residual {worst:.2e}")));

    let mut slerp_ok = true;
    for _ in 0..200 {
        let (a, b) = (random_pose(&mut rng).rotation, random_pose(&mut rng).rotation);
        let t = rng.random_range(0.0..1.0);
        slerp_ok &= slerp(&a, &b, 0.0) == a && slerp(&a, &b, 1.0) == b && (slerp(&a, &b, t).norm() - 1.0).abs() < 1e-12;
    }
    checks.push(check("slerp endpoints and unit norm", slerp_ok, "200 random pairs"));

    let k = 12;
    let device: Vec<Pose6D> = (0..=k).map(|_| random_pose(&mut rng)).collect();
    let points: Vec<Vec<Vec3>> = (0..=k)
        .map(|_| (0..2).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect())
        .collect();
    let base = build_human_action_chunk(&device, &points).expect("valid chunk");
    let worst = (0..100)
        .map(|_| {
            let g = random_pose(&mut rng);
            let moved: Vec<Pose6D> = device.iter().map(|d| g.compose(d)).collect();
            let c = build_human_action_chunk(&moved, &points).expect("valid chunk");
            max_abs_diff(c.values(), base.values())
        })
        .fold(0.0, f64::max);
    checks.push(check("action chunk frame invariance", worst < 1e-9, format!("max diff {worst:.2e}")));

    let still = vec![device[0]; k + 1];
    let c = build_human_action_chunk(&still, &points).expect("valid chunk");
    let worst = (1..=k)
        .flat_map(|i| (0..6).map(move |j| (i, j)))
        .map(|(i, j)| (c.values()[[i - 1, j]] - points[i][j / 3][j % 3]).abs())
        .fold(0.0, f64::max);
    checks.push(check("stationary device passes points through", worst < 1e-12, format!("max diff {worst:.2e}")));

    let ts: Vec<i64> = (0..40).map(|i| i * 33_333_333).collect();
    let row = Array1::from(vec![0.3, -1.2, 4.0]);
    let values = Array2::from_shape_fn((ts.len(), 3), |(_, j)| row[j]);
    let track = TimedTrack::new(ts, values, ActionLayout::positions(1)).expect("valid track");
    let ok = match resample_chunk(&track, &WindowSpec::HUMAN) {
        Ok(c) => c.len() == 100 && c.values().rows().into_iter().all(|r| r == row),
        Err(_) => false,
    };
    checks.push(check("resample length and constant reproduction", ok, "T=100 over 1.0 s"));

    let data = Array2::from_shape_fn((2000, 4), |_| rng.sample::<f64, _>(StandardNormal) * 3.0);
    let stats = quantile_stats(data.view(), 0.01, 0.99).expect("stats");
    let lo = quantile_normalize(Array1::from(stats.q_lo.clone()).view(), &stats).expect("normalize");
    let hi = quantile_normalize(Array1::from(stats.q_hi.clone()).view(), &stats).expect("normalize");
    let mut worst = lo.iter().map(|v| (v + 1.0).abs()).chain(hi.iter().map(|v| (v - 1.0).abs())).fold(0.0, f64::max);
    for r in data.rows().into_iter().take(200) {
        let back = quantile_denormalize(quantile_normalize(r, &stats).expect("normalize").view(), &stats).expect("denormalize");
        worst = worst.max(back.iter().zip(r.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    checks.push(check("quantile endpoints and round trip", worst < 1e-9, format!("max error {worst:.2e}")));

    let pred: Array2<f64> = Array2::from_shape_fn((7, 5), |_| rng.random_range(-1.0..1.0));
    let gt = Array2::from_shape_fn((7, 5), |_| rng.random_range(-1.0..1.0));
    let mut oracle: f64 = 0.0;
    for t in 0..7 {
        let mut s: f64 = 0.0;
        for d in 0..5 {
            s += (pred[[t, d]] - gt[[t, d]]).powi(2);
        }
        oracle += s / 5.0;
    }
    oracle /= 7.0;
    let got = avg_mse(pred.view(), gt.view()).expect("same shape");
    checks.push(check("avg-mse double loop", (got - oracle).abs() < 1e-12, format!("{got} vs {oracle}")));

    let ok = normalized_score(3.0, 4.0) == Ok(0.75) && normalized_score(9.0, 4.0) == Ok(1.0);
    checks.push(check("normalized score", ok, "3/4 = 0.75, clamped at 1"));

    SuiteReport {
        suite: "align",
        checks,
    }
}

/// Deliberate defects for checking that the flow-matching suite notices them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowFault {
    None,
    /// Euler steps move along the velocity instead of against it.
    EulerSignFlip,
}

fn integrate(
    fault: FlowFault,
    mut v: impl FnMut(&Array2<f64>, f64) -> Array2<f64>,
    x0: &Array2<f64>,
    steps: usize,
) -> Result<Array2<f64>, FlowError> {
    match fault {
        FlowFault::None => euler_integrate(v, x0, steps),
        FlowFault::EulerSignFlip => euler_integrate(|x, tau| -v(x, tau), x0, steps),
    }
}

pub fn run_flowmatch_suite(seed: u64, fault: FlowFault) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let a0 = Array2::from_shape_fn((100, 14), |_| rng.sample::<f64, _>(StandardNormal));
    let a1 = Array2::from_shape_fn((100, 14), |_| rng.random_range(-1.0..1.0));

    let ok = interpolate_path(&a0, &a1, 1.0).as_ref() == Ok(&a0) && interpolate_path(&a0, &a1, 0.0).as_ref() == Ok(&a1);
    checks.push(check("path endpoints", ok, "x_1 = a0, x_0 = a1"));

    let target = cfm_target(&a0, &a1).expect("same shape");
    let loss = cfm_loss(&target, &a0, &a1).expect("same shape");
    checks.push(check("exact target has zero loss", loss == 0.0, format!("loss {loss}")));

    let mut worst: f64 = 0.0;
    for steps in [1, 10, 100] {
        match integrate(fault, |_, _| target.clone(), &a0, steps) {
            Ok(x) => worst = worst.max(max_abs_diff(&x, &a1)),
            Err(_) => worst = f64::INFINITY,
        }
    }
    checks.push(check("euler with exact field reaches data", worst < 1e-12, format!("max error {worst:.2e}")));

    // dx/dtau = x integrated from tau = 1 to 0: x(0) = x(1) / e, error O(1/steps).
    let x1 = Array2::from_elem((1, 1), 1.0);
    let exact = (-1.0f64).exp();
    let errs: Vec<f64> = [20usize, 40, 80, 160]
        .iter()
        .map(|&n| match integrate(fault, |x, _| x.clone(), &x1, n) {
            Ok(x) => (x[[0, 0]] - exact).abs(),
            Err(_) => f64::NAN,
        })
        .collect();
    let slope = (errs[3].ln() - errs[0].ln()) / (160f64.ln() - 20f64.ln());
    checks.push(check(
        "euler first-order convergence",
        (slope + 1.0).abs() <= 0.2,
        format!("log-log slope {slope:.3}"),
    ));

    let draws = 100_000;
    let mean = (0..draws).map(|_| sample_timestep(&mut rng)).sum::<f64>() / draws as f64;
    checks.push(check("beta(1.5, 1) timestep mean", (mean - 0.6).abs() < 0.01, format!("mean {mean:.4}")));

    let human: Vec<u32> = (0..50).collect();
    let robot: Vec<u32> = (100..150).collect();
    let ok = match compose_cotrain_batch(&human, &robot, 32, &mut rng) {
        Ok(b) => b.human_items.len() == 16 && b.robot_items.len() == 16,
        Err(_) => false,
    } && compose_cotrain_batch(&human, &robot, 31, &mut rng).is_err();
    checks.push(check("co-training batch split", ok, "32 -> 16 + 16, odd rejected"));

    checks.push(check(
        "default inference steps",
        DEFAULT_INFERENCE_STEPS == 10,
        format!("{DEFAULT_INFERENCE_STEPS}"),
    ));

    SuiteReport {
        suite: "flowmatch",
        checks,
    }
}
