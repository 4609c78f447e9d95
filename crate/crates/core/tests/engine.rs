use delaygossip::engine::{generic_step_sizes, run, BlockEvent, BlockObjective, EngineConfig, QuadraticBlocks};
use delaygossip::ppp::sample_ppp;
use delaygossip::tuning::gamma_generic;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tridiagonal, diagonally dominant quadratic over `n` scalar blocks.
fn chain(n: usize) -> QuadraticBlocks {
    let q = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
        0 => 2.0 + 0.1 * i as f64,
        1 => -0.6,
        _ => 0.0,
    });
    let b = DVector::from_fn(n, |i, _| (i as f64 - 2.0) * 0.7);
    QuadraticBlocks::new(q, b).unwrap()
}

fn events(p: &[f64], horizon: f64, seed: u64) -> Vec<BlockEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<BlockEvent> = p
        .iter()
        .enumerate()
        .flat_map(|(k, &rate)| {
            sample_ppp(rate, horizon, &mut rng)
                .unwrap()
                .into_iter()
                .map(move |time| BlockEvent { time, block: k, accepted: true })
        })
        .collect();
    out.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.block.cmp(&b.block)));
    out
}

#[test]
fn delayed_coordinate_descent_converges_with_tuned_steps() {
    let n = 6;
    let obj = chain(n);
    let reg = obj.regularity().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let tau: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let k = generic_step_sizes(&p, &tau, &reg).unwrap();
    let eta: Vec<f64> = (0..n).map(|i| k[i] / (p[i] * reg.lipschitz[i])).collect();
    let tau_max = tau.iter().copied().fold(0.0, f64::max);
    let gamma = gamma_generic(reg.sigma, &vec![1.0; n], &k, &reg.lipschitz, tau_max);
    let horizon = 60.0 / gamma;
    let cfg = EngineConfig {
        step_sizes: eta,
        delays: tau,
        horizon,
        sample_times: vec![0.0, horizon / 2.0, horizon],
        prune: true,
        gamma: Some(gamma),
    };
    let x0 = vec![vec![0.0]; n];
    let mut finals = Vec::new();
    for seed in 0..20 {
        let trace = run(&obj, &events(&p, horizon, seed), &cfg, &x0).unwrap();
        assert!(!trace.diverged());
        let gaps: Vec<f64> = trace.samples.iter().map(|s| s.objective_gap.unwrap()).collect();
        assert!(gaps[2] <= gaps[1] + 1e-12 && gaps[1] < gaps[0]);
        finals.push(gaps[2] / gaps[0]);
    }
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    assert!(mean < 1e-6, "mean relative gap {mean}");
}
