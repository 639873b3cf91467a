use netdid::estimators::{estimate_with_inference, Estimand, InferenceConfig};
use netdid::exposure::ExposureConfig;
use netdid::nuisance::{LearnerConfig, LearnerKind};
use netdid::simulate::{simulate, DgpConfig, DgpKind, PeerOutcome};
use std::time::Instant;

fn main() {
    let seeds: Vec<u64> = (0..10).map(|k| 7 + 13 * k).collect();
    let inf = InferenceConfig::default();
    let grid = [(400usize, 0.05f64), (1200, 0.1), (2400, 0.1)];
    for &h in &[3usize, 5] {
        for &(epochs, lr) in &grid {
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            let t0 = Instant::now();
            for &seed in &seeds {
                let mut dgp = DgpConfig::new(DgpKind::MainS6, 2000, seed);
                dgp.s6.peer_outcome = PeerOutcome::Lagged;
                let sim = simulate(&dgp).unwrap();
                let lc = LearnerConfig {
                    learner: LearnerKind::Gnn,
                    l: 2,
                    h,
                    epochs,
                    lr,
                    seed,
                    ..LearnerConfig::default()
                };
                let (rep, _) = estimate_with_inference(
                    &sim.panel,
                    &sim.graph,
                    &ExposureConfig::default(),
                    Estimand::Datt { level: 1 },
                    &lc,
                    &inf,
                )
                .unwrap();
                sum += rep.estimate;
                sumsq += rep.estimate * rep.estimate;
            }
            let k = seeds.len() as f64;
            let mean = sum / k;
            let sd = ((sumsq - k * mean * mean) / (k - 1.0)).sqrt();
            println!(
                "H={} ep={} lr={}: mean={:+.4} sd={:.4} secs/fit={:.1}",
                h,
                epochs,
                lr,
                mean,
                sd,
                t0.elapsed().as_secs_f64() / k
            );
        }
    }
}
