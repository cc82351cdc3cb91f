use decision_regions::compression::*;
use decision_regions::data::{ActionId, ActionSet, Outcome};
use decision_regions::ope::*;
use decision_regions::planning::RewardTable;
use proptest::prelude::*;

const K: u32 = 3;
const A: usize = 3;

fn trajectories() -> impl Strategy<Value = Vec<CompressedTrajectory>> {
    prop::collection::vec(
        (1usize..12).prop_flat_map(|len| {
            (
                prop::collection::vec(0..=K, len),
                prop::collection::vec(0..A, len),
                any::<bool>(),
            )
        }),
        20..120,
    )
    .prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (labels, acts, dead))| {
                let acts: Vec<ActionId> = acts.into_iter().map(ActionId).collect();
                let outcome = if dead { Outcome::Dead } else { Outcome::Alive };
                compress_trajectory(&i.to_string(), &acts, &labels, outcome, SummaryFn::First, &ActionSet::plain(A))
                    .unwrap()
            })
            .collect()
    })
}

fn rewards() -> impl Strategy<Value = RewardTable> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, A), K as usize).prop_map(|v| RewardTable {
        name: "r".into(),
        values: v.into_iter().map(|r| r.into_iter().map(Some).collect()).collect(),
    })
}

fn return_of(ct: &CompressedTrajectory, r: &RewardTable, gamma: f64) -> f64 {
    ct.xbar
        .iter()
        .zip(&ct.abar)
        .enumerate()
        .map(|(t, (x, a))| match x {
            CState::Cluster(c) => gamma.powi(t as i32) * r.values[*c as usize - 1][a.0].unwrap(),
            _ => unreachable!(),
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn behavior_policy_gives_mean_return(ct in trajectories(), r in rewards(), p in 1.0f64..100.0) {
        let mdp = estimate_mdp(&ct, K as usize, A, 1).unwrap();
        let cfg = OpeConfig { clip_percentile: p, gamma: 0.98, eval_softening: 0.0 };
        let rep = wis_evaluate("b", &ct, &EvalPolicy::behavior(&mdp), &mdp, &r, &cfg).unwrap();
        let mean = ct.iter().map(|c| return_of(c, &r, 0.98)).sum::<f64>() / ct.len() as f64;
        prop_assert!((rep.wis_estimate - mean).abs() < 1e-9);
        prop_assert!((rep.ess - ct.len() as f64).abs() < 1e-9);
        let b = behavior_report(&ct, &r, 0.98).unwrap();
        prop_assert!((b.wis_estimate - mean).abs() < 1e-9);
    }

    #[test]
    fn deterministic_policy_estimates_are_bounded(
        ct in trajectories(),
        r in rewards(),
        policy in prop::collection::vec(prop::option::of(0..A), K as usize),
        eps in 0.0f64..0.5,
    ) {
        let mdp = estimate_mdp(&ct, K as usize, A, 1).unwrap();
        let pi = EvalPolicy::Deterministic(policy.into_iter().map(|a| a.map(ActionId)).collect());
        let weights: Vec<f64> = ct.iter().map(|c| trajectory_weight(c, &pi, &mdp, eps).rho).collect();
        let returns: Vec<f64> = ct.iter().map(|c| return_of(c, &r, 0.98)).collect();
        let positive: Vec<usize> = (0..ct.len()).filter(|&i| weights[i] > 0.0).collect();
        prop_assume!(!positive.is_empty());

        let cfg = OpeConfig { clip_percentile: 100.0, gamma: 0.98, eval_softening: eps };
        let rep = wis_evaluate("pi", &ct, &pi, &mdp, &r, &cfg).unwrap();
        let sw: f64 = weights.iter().sum();
        let unclipped = weights.iter().zip(&returns).map(|(w, g)| w * g).sum::<f64>() / sw;
        prop_assert!((rep.wis_estimate - unclipped).abs() < 1e-9 * (1.0 + unclipped.abs()));

        let lo = positive.iter().map(|&i| returns[i]).fold(f64::INFINITY, f64::min);
        let hi = positive.iter().map(|&i| returns[i]).fold(f64::NEG_INFINITY, f64::max);
        for p in [50.0, 95.0, 100.0] {
            let (wis, ess, cap) = wis_from_weights(&weights, &returns, p).unwrap();
            prop_assert!(wis >= lo - 1e-9 && wis <= hi + 1e-9);
            prop_assert!(ess <= positive.len() as f64 + 1e-9 && ess > 0.0);
            let max_w = positive.iter().map(|&i| weights[i]).fold(0.0, f64::max);
            prop_assert!(cap <= max_w);
        }
    }

    #[test]
    fn wis_is_scale_invariant(
        wg in prop::collection::vec((0.0f64..10.0, -5.0f64..5.0), 1..50),
        k in 0.01f64..100.0,
        p in 1.0f64..100.0,
    ) {
        let (w, g): (Vec<f64>, Vec<f64>) = wg.into_iter().unzip();
        prop_assume!(w.iter().any(|&x| x > 0.0));
        let scaled: Vec<f64> = w.iter().map(|x| x * k).collect();
        let (a, ea, _) = wis_from_weights(&w, &g, p).unwrap();
        let (b, eb, _) = wis_from_weights(&scaled, &g, p).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        prop_assert!((ea - eb).abs() < 1e-9 * ea);
    }
}
