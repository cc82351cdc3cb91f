use decision_regions::compression::*;
use decision_regions::data::{ActionId, ActionSet, Outcome};
use proptest::prelude::*;

fn treatments() -> ActionSet {
    ActionSet {
        count: 4,
        names: None,
        bitmasks: Some(vec![0b00, 0b01, 0b10, 0b11]),
    }
}

fn trajectory(k: u32) -> impl Strategy<Value = (Vec<u32>, Vec<usize>, bool)> {
    (1usize..40).prop_flat_map(move |len| {
        (
            prop::collection::vec(0..=k, len),
            prop::collection::vec(0usize..4, len),
            any::<bool>(),
        )
    })
}

fn summary() -> impl Strategy<Value = SummaryFn> {
    prop_oneof![Just(SummaryFn::BitOr), Just(SummaryFn::First), Just(SummaryFn::Majority)]
}

/// Steps that start a new region visit: non-zero label differing from the
/// previous step's label.
fn entries(labels: &[u32]) -> usize {
    (0..labels.len())
        .filter(|&i| labels[i] != 0 && (i == 0 || labels[i] != labels[i - 1]))
        .count()
}

fn compress(labels: &[u32], actions: &[usize], dead: bool, h: SummaryFn) -> CompressedTrajectory {
    let acts: Vec<ActionId> = actions.iter().map(|&a| ActionId(a)).collect();
    let outcome = if dead { Outcome::Dead } else { Outcome::Alive };
    compress_trajectory("t", &acts, labels, outcome, h, &treatments()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn compressed_shape((labels, actions, dead) in trajectory(4), h in summary()) {
        let ct = compress(&labels, &actions, dead, h);
        prop_assert_eq!(ct.xbar.len(), ct.abar.len() + 1);
        prop_assert!(ct.abar.len() <= labels.len());
        prop_assert_eq!(ct.abar.len(), entries(&labels));
        let last = *ct.xbar.last().unwrap();
        prop_assert_eq!(last, if dead { CState::Dead } else { CState::Alive });
        prop_assert!(ct.xbar[..ct.xbar.len() - 1].iter().all(|s| !s.is_terminal()));
        prop_assert!(ct.xbar.iter().all(|s| *s != CState::Cluster(0)));
    }

    #[test]
    fn bit_or_keeps_every_treatment_given((labels, actions, dead) in trajectory(3)) {
        let ct = compress(&labels, &actions, dead, SummaryFn::BitOr);
        // Each maximal run of one non-zero label is one visit.
        let mut masks = Vec::new();
        let mut i = 0;
        while i < labels.len() {
            let mut j = i;
            let mut mask = 0u32;
            while j < labels.len() && labels[j] == labels[i] {
                mask |= actions[j] as u32;
                j += 1;
            }
            if labels[i] != 0 {
                masks.push(mask);
            }
            i = j;
        }
        let got: Vec<u32> = ct.abar.iter().map(|a| a.0 as u32).collect();
        prop_assert_eq!(got, masks);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn estimated_tables_are_row_stochastic(
        trajs in prop::collection::vec(trajectory(5), 1000),
        h in summary(),
        min_count in 1usize..30,
    ) {
        let ct: Vec<_> = trajs.iter().map(|(l, a, d)| compress(l, a, *d, h)).collect();
        let mdp = estimate_mdp(&ct, 5, 4, min_count).unwrap();
        let steps: usize = ct.iter().map(|c| c.abar.len()).sum();
        let counted: usize = mdp.transition_counts.iter().flatten().flatten().sum();
        prop_assert_eq!(counted, steps);
        for c in 1..=5u32 {
            if mdp.visits(c) > 0 {
                let s: f64 = mdp.behavior_dist(c).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
            for a in 0..4 {
                let a = ActionId(a);
                if let Some(p) = mdp.transition_probs(c, a) {
                    prop_assert_eq!(p.len(), mdp.n_states());
                    prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    prop_assert!(p.iter().all(|&x| x >= 0.0));
                }
                let n = mdp.action_counts[c as usize - 1][a.0];
                prop_assert_eq!(mdp.is_valid(c, a), n > 0 && n >= min_count);
            }
        }
    }
}
