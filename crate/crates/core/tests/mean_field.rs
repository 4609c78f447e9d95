use delaygossip::gossip::{run_gossip, GossipOptions};
use delaygossip::ode::integrate_delayed;
use delaygossip::tuning::gossip_step_sizes;
use delaygossip::{DelayProfile, Graph, NetworkSpec};

#[test]
fn simulator_average_follows_the_delayed_ode() {
    let graph = Graph::new(4, [(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
    let delays = DelayProfile::comm_only(&graph, vec![0.5, 1.0, 0.3, 0.8]).unwrap();
    let net = NetworkSpec::with_default_intensities(graph.clone(), delays.clone()).unwrap();
    let k = gossip_step_sizes(&net);
    let x0 = vec![vec![3.0], vec![-1.0], vec![0.5], vec![-2.5]];
    let times = [1.0, 5.0, 10.0];
    let ode = integrate_delayed(&graph, &k, &delays, &x0, 10.0, 0.01).unwrap();

    let runs = 1000;
    let mut sum = [[0.0; 4]; 3];
    let mut sum2 = [[0.0; 4]; 3];
    for seed in 0..runs {
        let mut opts = GossipOptions::new(10.0, vec![10.0]);
        opts.record_trajectory = true;
        let trace = run_gossip(&net, &k, &x0, &opts, seed).unwrap();
        let traj = trace.trajectory.as_ref().unwrap();
        for (ti, &t) in times.iter().enumerate() {
            let x = traj.value_at(t);
            for i in 0..4 {
                sum[ti][i] += x[i];
                sum2[ti][i] += x[i] * x[i];
            }
        }
    }
    let r = runs as f64;
    for (ti, &t) in times.iter().enumerate() {
        let y = ode.value_at(t);
        for i in 0..4 {
            let mean = sum[ti][i] / r;
            let var = (sum2[ti][i] / r - mean * mean) * r / (r - 1.0);
            let se = (var / r).sqrt();
            assert!((mean - y[i]).abs() <= 3.0 * se, "t = {t}, node {i}: mean {mean}, ode {}, se {se}", y[i]);
        }
    }
}
