use fbmq::asymptotics::{marginal_sojourn_asymptotic, SojournWindows};
use fbmq::berman::{estimate_bar_single, estimate_pickands};
use fbmq::brownian_exact::{transient_exceed_given_exceed, BmTransientQuery};
use fbmq::harness::{conditional_bm_estimates, conditional_fbm_estimates};
use fbmq::rng::{map_replicates, substream, tags};
use fbmq::stats::Accumulator;
use fbmq::workload::{QueueParams, StationaryWindowSampler, Tail, WindowScratch};

fn bm() -> QueueParams {
    QueueParams::new(0.5, 1.0).unwrap()
}

/// Indicators of `(Q(0) > a, Q(T) > b)` and similar pairs from the
/// stationary sampler.
fn stationary_pairs(end: f64, step: f64, reps: u64, seed: u64, f: impl Fn(&[f64]) -> (bool, bool) + Sync) -> Vec<(bool, bool)> {
    let sampler = StationaryWindowSampler::new(bm(), end, step, Tail::ExactBrownian).unwrap();
    map_replicates(
        reps,
        || (WindowScratch::default(), Vec::new()),
        |(s, q), i| {
            sampler.sample_into(&mut substream(seed, tags::STATIONARY, i), s, q);
            f(q)
        },
    )
}

#[test]
fn brownian_drivers_agree() {
    // Conditioning on the single grid point t = step makes the rejection
    // driver condition on Q(step) > u; shifting the target window back by
    // one step gives the same event for the exact driver.
    let step = 1.0 / 256.0;
    let (u, omega) = (2.0, 2.2);
    let v = 0.5;
    let windows = SojournWindows::new(step / v, 0.5, 1.5, 0.0, 0.3).unwrap();
    let rejection =
        conditional_fbm_estimates(bm(), u, &[omega], &windows, step, Tail::ExactBrownian, 1_000_000, 31).unwrap();
    assert_eq!(rejection.scale, v);
    let a = &rejection.estimates[0];
    let b = &conditional_bm_estimates(bm(), u, &[omega], (0.25 - step, 0.75 - step), 0.3 * v, step, 200_000, 32)
        .unwrap()[0];
    let combined = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    assert!(
        (a.value - b.value).abs() <= 3.0 * combined + 0.01,
        "rejection {} +/- {} ({} accepted) vs exact {} +/- {}",
        a.value,
        a.std_error,
        rejection.accepted,
        b.value,
        b.std_error
    );
}

#[test]
fn joint_law_matches_closed_form() {
    let (c, u, omega, t) = (1.0, 0.5, 0.6, 0.5);
    let reps = 100_000;
    let pairs = stationary_pairs(t, 1.0 / 512.0, reps, 33, |q| (q[0] > u, q[q.len() - 1] > omega));
    let joint = pairs.iter().filter(|p| p.0 && p.1).count() as f64 / reps as f64;
    let se = (joint * (1.0 - joint) / reps as f64).sqrt();
    let exact = (-2.0 * c * u).exp() * transient_exceed_given_exceed(&BmTransientQuery::new(c, u, omega, t).unwrap()).unwrap();
    assert!((joint - exact).abs() <= 3.0 * se + 0.01, "mc {joint} +/- {se} vs {exact}");
}

#[test]
fn marginals_are_stationary() {
    // The last grid point sees the exact continuous tail while interior points
    // carry the grid bias, so compare two points far from the window end.
    let reps = 100_000;
    let pairs = stationary_pairs(4.0, 1.0 / 256.0, reps, 34, |q| (q[0] > 0.5, q[256] > 0.5));
    let diff = Accumulator::from_values(&pairs.iter().map(|p| p.0 as u8 as f64 - p.1 as u8 as f64).collect::<Vec<_>>());
    assert!(diff.mean().abs() <= 4.0 * diff.std_error(), "{} +/- {}", diff.mean(), diff.std_error());
}

#[test]
fn marginal_asymptotic_tracks_supremum_probability() {
    // x = 0: the sojourn is positive iff Q exceeds u somewhere in (0, T1(u)]
    let u = 3.0;
    let t1 = 0.5;
    let step = 1.0 / 256.0;
    let v = 0.5;
    let reps = 400_000;
    let pairs = stationary_pairs(t1 * v, step, reps, 35, |q| (q[1..].iter().any(|&x| x > u), false));
    let p = pairs.iter().filter(|p| p.0).count() as f64 / reps as f64;
    let windows = SojournWindows::new(t1, 0.0, 1.0, 0.0, 0.0).unwrap();
    let hurst = bm().hurst;
    let bar = estimate_bar_single(hurst, t1, 0.0, step / v, 100_000, 36).unwrap();
    let pickands = estimate_pickands(hurst, 64.0, step / v, 5_000, 37).unwrap();
    let approx = marginal_sojourn_asymptotic(hurst, 1.0, u, &windows, &bar, &pickands).unwrap();
    assert!((p / approx - 1.0).abs() <= 0.2, "mc {p} vs asymptotic {approx}");
}

#[test]
fn standard_error_halves_with_four_times_the_replicates() {
    let run = |reps| {
        conditional_bm_estimates(bm(), 2.0, &[2.3], (0.0, 1.0), 0.2, 1.0 / 128.0, reps, 38).unwrap()[0].std_error
    };
    let ratio = run(80_000) / run(20_000);
    assert!((0.4..=0.6).contains(&ratio), "{ratio}");
}

#[test]
fn estimates_are_probabilities() {
    let windows = SojournWindows::new(1.0, 0.5, 1.5, 0.2, 0.3).unwrap();
    let omegas = [0.0, 1.0, 1.5, 2.0, 5.0];
    let out = conditional_fbm_estimates(bm(), 1.5, &omegas, &windows, 1.0 / 64.0, Tail::ExactBrownian, 50_000, 39).unwrap();
    for e in &out.estimates {
        assert!((0.0..=1.0).contains(&e.value));
    }
    assert!(out.estimates.windows(2).all(|w| w[1].value <= w[0].value));
}
