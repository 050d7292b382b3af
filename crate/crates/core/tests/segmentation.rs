use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use eras_core::segment::{group_tv_denoise, objective, MultiSeries, Penalty, SegmenterConfig, Segmenter};

fn noisy_steps(seed: u64, k: usize, t: usize, jumps: &[usize], noise: f64) -> MultiSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let steps: Vec<f64> = jumps.iter().map(|_| rng.gen_range(1.0..3.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
            (0..t)
                .map(|s| {
                    let level: f64 = jumps.iter().zip(&steps).filter(|(&j, _)| s >= j).map(|(_, h)| h).sum();
                    level + noise * rng.sample::<f64, _>(StandardNormal)
                })
                .collect()
        })
        .collect();
    MultiSeries::from_rows(&rows).unwrap()
}

#[test]
fn no_better_neighbor_than_the_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (seed, lambda) in [(1, 0.5), (2, 2.0), (3, 8.0)] {
        let x = noisy_steps(seed, 3, 30, &[10, 20], 0.5);
        let d = group_tv_denoise(&x, &SegmenterConfig::default().with_lambda(lambda)).unwrap();
        let base = objective(&x, &d.y, lambda, Penalty::GroupL2).unwrap();
        for _ in 0..100 {
            let scale = 10f64.powf(rng.gen_range(-6.0..-2.0));
            let mut y = d.y.clone();
            for c in 0..3 {
                for s in 0..30 {
                    y.set(c, s, y.get(c, s) + scale * rng.sample::<f64, _>(StandardNormal));
                }
            }
            let v = objective(&x, &y, lambda, Penalty::GroupL2).unwrap();
            assert!(v >= base - 1e-7, "lambda {lambda}: perturbed {v} < {base}");
        }
    }
}

fn jump_locations(x: &MultiSeries, lambda: f64, penalty: Penalty) -> BTreeSet<usize> {
    let seg = Segmenter::from_standardized(x.clone(), (0..x.times() as i32).collect());
    let cfg = SegmenterConfig {
        penalty,
        ..SegmenterConfig::default().with_lambda(lambda)
    };
    seg.solve(&cfg).unwrap().1.change_points.into_iter().collect()
}

/// Only for lambda above the noise floor. Below it both penalties chase the
/// noise, and l1 (the larger norm) fuses more of it away.
#[test]
fn l1_never_fewer_jump_locations_than_group() {
    for seed in 0..5 {
        let x = noisy_steps(seed, 4, 40, &[12, 27], 0.3);
        for lambda in [3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0] {
            let group = jump_locations(&x, lambda, Penalty::GroupL2);
            let l1 = jump_locations(&x, lambda, Penalty::LiteralL1);
            assert!(
                l1.len() >= group.len(),
                "seed {seed} lambda {lambda}: l1 {l1:?} vs group {group:?}"
            );
        }
    }
}

#[test]
fn zero_lambda_gives_one_era_per_window() {
    let x = noisy_steps(5, 2, 15, &[7], 1.0);
    let seg = Segmenter::from_standardized(x, (2000..2015).collect());
    let (_, s) = seg.solve(&SegmenterConfig::default().with_lambda(0.0)).unwrap();
    assert_eq!(s.era_count(), 15);
}

#[test]
fn group_jumps_are_shared_across_components() {
    let x = noisy_steps(9, 3, 30, &[14], 0.2);
    let seg = Segmenter::from_standardized(x, (0..30).collect());
    let found = seg.lambda_for_era_count(2, None, &SegmenterConfig::default()).unwrap();
    assert!(found.exact);
    assert_eq!(found.segmentation.change_points, vec![13]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn era_levels_partition_the_series(seed in any::<u64>(), lambda in 0.1f64..20.0) {
        let x = noisy_steps(seed, 2, 20, &[6, 13], 0.5);
        let seg = Segmenter::from_standardized(x, (0..20).collect());
        let (_, s) = seg.solve(&SegmenterConfig::default().with_lambda(lambda)).unwrap();
        prop_assert_eq!(s.eras.len(), s.change_points.len() + 1);
        prop_assert_eq!(s.eras[0].start_window, 0);
        prop_assert_eq!(s.eras.last().unwrap().end_window, 19);
        for w in s.eras.windows(2) {
            prop_assert_eq!(w[0].end_window + 1, w[1].start_window);
        }
    }
}

