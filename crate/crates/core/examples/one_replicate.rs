//! Score one or more study replicates at a single pair weight and print the
//! IND/DEP ratios with timings.
//!
//! cargo run --release -p pcc-core --example one_replicate -- 0.9 3

use std::time::Instant;

use pcc::evaluation::{derive_seed, run_replicate, StudyConfig};
use pcc::inference::MCMCConfig;
use pcc::movement::PriorSpec;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let w12: f64 = args.get(1).map_or(0.9, |s| s.parse().unwrap());
    let reps: usize = args.get(2).map_or(1, |s| s.parse().unwrap());
    let study = StudyConfig {
        weights: vec![w12],
        ..StudyConfig::default()
    };
    let cell = study.cells()[0].clone();
    for r in 0..reps {
        let start = Instant::now();
        let seed = derive_seed(1, cell.index, r);
        let (dep, ind, _) =
            run_replicate(&study, &cell, &PriorSpec::default(), &MCMCConfig::default(), seed)
                .expect("replicate failed");
        println!(
            "w12 {w12} rep {r}: dep {dep:?} ind {ind:?} spe ratio {:.3} accrr ratio {:.3} ({:.1?})",
            ind.spe / dep.spe,
            ind.accrr / dep.accrr,
            start.elapsed()
        );
    }
}
