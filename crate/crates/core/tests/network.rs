mod common;

use pcc::network::{social_matrix, SocialNetwork};
use pcc::TimeGrid;
use proptest::prelude::*;

#[test]
fn sampled_networks_are_valid() {
    let check = common::criterion_7a();
    assert!(check.pass, "{}", check.detail);
}

#[test]
fn longer_latent_range_gives_more_stable_networks() {
    let check = common::criterion_7b();
    assert!(check.pass, "{}", check.detail);
}

fn symmetric_weights(p: usize, raw: &[f64]) -> nalgebra::DMatrix<f64> {
    let mut w = nalgebra::DMatrix::identity(p, p);
    let mut k = 0;
    for i in 0..p {
        for j in (i + 1)..p {
            w[(i, j)] = raw[k];
            w[(j, i)] = raw[k];
            k += 1;
        }
    }
    w
}

proptest! {
    #[test]
    fn social_rows_sum_to_one(p in 1usize..6, raw in prop::collection::vec(0.0f64..=1.0, 15)) {
        let grid = TimeGrid::uniform(0.0, 1.0, 3).unwrap();
        let net = SocialNetwork::constant(&grid, symmetric_weights(p, &raw)).unwrap();
        let s = social_matrix(&net, 1);
        for i in 0..p {
            prop_assert!((s.row(i).sum() - 1.0).abs() < 1e-12);
            prop_assert!(s.row(i).iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn zero_weights_give_identity(p in 1usize..6) {
        let grid = TimeGrid::uniform(0.0, 1.0, 3).unwrap();
        let net = SocialNetwork::empty(&grid, p);
        prop_assert_eq!(social_matrix(&net, 0), nalgebra::DMatrix::identity(p, p));
    }
}
