use decision_regions::data::{read_csv, write_csv, Dataset};
use decision_regions::decision_points::{DpConfig, DpIndex};
use decision_regions::standardize::Standardizer;
use decision_regions::synth::*;
use proptest::prelude::*;

fn small(seed: u64) -> SynthSpec {
    SynthSpec {
        n_trajectories: 200,
        horizon: 20,
        ..SynthSpec::reference(seed)
    }
}

fn dp_count(data: &Dataset) -> usize {
    let data = data.select_features(&["x".to_string(), "y".to_string()]).unwrap();
    let states = data.states();
    let z = Standardizer::fit(&states).transform_all(&states);
    let idx = DpIndex::from_parts(z, data.actions(), data.n_actions(), vec![3.0; data.dim()]);
    idx.annotate_self(&DpConfig { delta: 0.9, min_neighbors: 5 })
        .unwrap()
        .iter()
        .filter(|a| a.is_dp)
        .count()
}

#[test]
fn generation_is_seeded() {
    let (a, ta) = generate(&small(4)).unwrap();
    let (b, tb) = generate(&small(4)).unwrap();
    let (c, _) = generate(&small(5)).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    assert_ne!(a, c);
}

#[test]
fn no_mixing_means_no_decision_points() {
    let mixed = small(6);
    let pure = SynthSpec { mix_prob: 0.0, ..small(6) };
    let (dm, _) = generate(&mixed).unwrap();
    let (dp, _) = generate(&pure).unwrap();
    assert!(dp_count(&dm) > 0);
    assert_eq!(dp_count(&dp), 0);
}

#[test]
fn perfect_recovery_scores_one() {
    let (data, truth) = generate(&small(7)).unwrap();
    let detected: Vec<Vec<bool>> = truth.oracle_dp.clone();
    let labels: Vec<Vec<u32>> = truth.region_id.clone();
    let policy: Vec<_> = truth.optimal_actions.iter().map(|&a| Some(a)).collect();
    let s = score_recovery(&truth, &detected, &labels, &policy).unwrap();
    assert_eq!((s.dp_precision, s.dp_recall, s.region_ari, s.optimal_action_fraction), (1.0, 1.0, 1.0, 1.0));
    assert_eq!(truth.restrict_to(&data).unwrap(), truth);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn csv_round_trip(seed in 0u64..1000, n in 2usize..30, horizon in 1usize..15) {
        let spec = SynthSpec { n_trajectories: n, horizon, ..SynthSpec::reference(seed) };
        let (data, truth) = generate(&spec).unwrap();
        let mut buf = Vec::new();
        write_csv(&data, &mut buf).unwrap();
        let back = read_csv(&buf[..], Some(&data.schema)).unwrap();
        prop_assert_eq!(back, data);
        let mut buf = Vec::new();
        truth.write_csv(&mut buf).unwrap();
        let back = SynthTruth::read_csv(&buf[..]).unwrap();
        prop_assert_eq!(&back.trajectory_ids, &truth.trajectory_ids);
        prop_assert_eq!(&back.oracle_dp, &truth.oracle_dp);
        prop_assert_eq!(&back.region_id, &truth.region_id);
        // Optimal actions only appear on rows inside their region.
        for (r, a) in back.optimal_actions.iter().enumerate() {
            if truth.region_id.iter().flatten().any(|&x| x as usize == r + 1) {
                prop_assert_eq!(*a, truth.optimal_actions[r]);
            }
        }
    }
}
