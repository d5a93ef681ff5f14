//! Benchmark fixtures. The benchmarks themselves live in `benches/`.

use pcc::kernels::Layout;
use pcc::movement::{simulate, ChainConfig, MovementParams, Telemetry};
use pcc::network::SocialNetwork;
use pcc::TimeGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two individuals with `n` observations each, simulated on `m` knots with a
/// constant pair weight of 0.5.
pub fn pair_fixture(m: usize, n: usize) -> (TimeGrid, Telemetry, SocialNetwork, MovementParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid = TimeGrid::uniform(0.0, 1.0, m).expect("grid");
    let params = MovementParams::simulation_high_tortuosity();
    let net = SocialNetwork::constant_pair(&grid, 0.5).expect("network");
    let times = (0..2)
        .map(|_| {
            let mut t: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            t.sort_by(|a, b| a.total_cmp(b));
            t
        })
        .collect();
    let sim = simulate(&params, &net, &grid, &Layout::new(times), &ChainConfig::default(), &mut rng)
        .expect("simulation");
    (grid, sim.telemetry, net, params)
}
