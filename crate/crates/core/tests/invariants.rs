use parexp::calculus::{mix_sigma, prospective_ate, BeliefProfile, CompetitorBelief, DegenerateTable};
use parexp::diagnostics::ks_uniformity;
use parexp::estimators::{cv_loss, kernel_table, kernel_weight, pooled_ols, stacked_ols, Bandwidths, EstimationData, Observation};
use parexp::marketplace::{rank_queue, serve};
use parexp::randomize::{assign, unit_interval};
use parexp::{Bits, CampaignId, SplitSeed};
use proptest::prelude::*;

fn obs_strategy(n_comp: usize, n_part: usize) -> impl Strategy<Value = Vec<Observation<f64>>> {
    prop::collection::vec((0u64..(1 << n_comp), 1..=n_part, any::<bool>(), -50.0f64..50.0), 8..80).prop_map(
        move |rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (rank, partition, treated, y))| Observation {
                    user_id: i as u64,
                    d: Bits::from_rank(n_comp, rank),
                    partition,
                    treated,
                    y,
                })
                .collect()
        },
    )
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn assignment_is_monotone_in_share(user in any::<u64>(), c in 1u64..1000, seed in any::<u64>(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        if assign(user, c, SplitSeed(seed), lo).is_test() {
            prop_assert!(assign(user, c, SplitSeed(seed), hi).is_test());
        }
        prop_assert!(!assign(user, c, SplitSeed(seed), 0.0).is_test());
        prop_assert!(assign(user, c, SplitSeed(seed), 1.0).is_test());
    }

    #[test]
    fn unit_interval_in_range(h in any::<u64>()) {
        let u = unit_interval(h);
        prop_assert!((0.0..1.0).contains(&u));
    }

    #[test]
    fn bits_rank_round_trip(len in 1usize..=20, raw in any::<u64>()) {
        let rank = raw & ((1u64 << len) - 1);
        let b = Bits::from_rank(len, rank);
        prop_assert_eq!(b.rank(), rank);
        let bools: Vec<bool> = b.iter().collect();
        prop_assert_eq!(Bits::from_bools(&bools), b);
        for k in 0..len {
            prop_assert_eq!(b.remove(k).insert(k, b.get(k)), b);
        }
    }

    #[test]
    fn queue_sorted_and_served_is_eligible(scores in prop::collection::vec((1u32..30, 0.0f64..10.0), 0..10), mask in any::<u32>()) {
        let mut seen = std::collections::BTreeSet::new();
        let scored: Vec<(CampaignId, f64)> = scores.into_iter().filter(|(c, _)| seen.insert(*c)).map(|(c, s)| (CampaignId(c), s)).collect();
        let queue = rank_queue(scored.clone());
        let score = |c: CampaignId| scored.iter().find(|x| x.0 == c).unwrap().1;
        for w in queue.windows(2) {
            prop_assert!(score(w[0]) > score(w[1]) || (score(w[0]) == score(w[1]) && w[0] < w[1]));
        }
        let eligible = |c: CampaignId| mask >> (c.0 % 32) & 1 == 1;
        let (served, cf) = serve(&queue, eligible, &[]);
        prop_assert_eq!(cf, queue.first().copied().unwrap_or(CampaignId::NO_AD));
        if served.is_ad() {
            prop_assert!(eligible(served));
            let pos = queue.iter().position(|&c| c == served).unwrap();
            prop_assert!(queue[..pos].iter().all(|&c| !eligible(c)));
        } else {
            prop_assert!(queue.iter().all(|&c| !eligible(c)));
        }
    }

    #[test]
    fn mix_sigma_interpolates(t0 in -10.0f64..10.0, t1 in -10.0f64..10.0, s in 0.0f64..=1.0) {
        let m = mix_sigma(t0, t1, s).unwrap();
        prop_assert!(m >= t0.min(t1) - 1e-12 && m <= t0.max(t1) + 1e-12);
        prop_assert_eq!(mix_sigma(t0, t1, 0.0).unwrap(), t0);
        prop_assert_eq!(mix_sigma(t0, t1, 1.0).unwrap(), t1);
    }

    #[test]
    fn degenerate_beliefs_pick_one_state(taus in prop::collection::vec(-5.0f64..5.0, 8), rank in 0u64..8) {
        let table = DegenerateTable::new(
            Bits::ones(3),
            Bits::all(3).zip(taus.iter().copied()).collect(),
        ).unwrap();
        let omega = Bits::from_rank(3, rank);
        let beliefs: Vec<CompetitorBelief<f64>> = omega.iter().map(|on| CompetitorBelief::advertising(if on { 1.0 } else { 0.0 }).unwrap()).collect();
        let p = prospective_ate(&table, &BeliefProfile::Independent(beliefs)).unwrap();
        prop_assert_eq!(p, table.tau(&omega).unwrap());
    }

    #[test]
    fn prospective_ate_is_a_convex_combination(taus in prop::collection::vec(-5.0f64..5.0, 4), p in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0), 2)) {
        let table = DegenerateTable::new(Bits::ones(2), Bits::all(2).zip(taus.iter().copied()).collect()).unwrap();
        let beliefs: Vec<CompetitorBelief<f64>> = p
            .iter()
            .map(|&(a, e, s)| CompetitorBelief::new(1.0 - a, a * (1.0 - e), a * e, s).unwrap())
            .collect();
        let v = prospective_ate(&table, &BeliefProfile::Independent(beliefs)).unwrap();
        let lo = taus.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = taus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
    }

    #[test]
    fn kernel_endpoints(obs in obs_strategy(3, 2)) {
        let data = EstimationData::new(CampaignId(1), 3, 2, obs).unwrap();
        let cells = data.cells();
        let zero = kernel_table(&cells, &Bandwidths::constant(5, 0.0).unwrap(), CampaignId(1), 1).unwrap();
        let ols = stacked_ols(&data, 1);
        prop_assert_eq!(zero.rows.len(), ols.rows.len());
        for (k, o) in zero.rows.iter().zip(&ols.rows) {
            prop_assert_eq!(k.key, o.key);
            prop_assert!(close(k.tau, o.tau, 1e-10) && close(k.alpha, o.alpha, 1e-10));
            prop_assert!(close(k.se_tau, o.se_tau, 1e-8));
        }
        if let Ok(pooled) = pooled_ols(&data) {
            let one = kernel_table(&cells, &Bandwidths::constant(5, 1.0).unwrap(), CampaignId(1), 1).unwrap();
            for r in &one.rows {
                prop_assert!(close(r.tau, pooled.tau, 1e-10));
                prop_assert!(close(r.se_tau, pooled.se_tau, 1e-8));
            }
        }
    }


    #[test]
    fn pooling_weight_nondecreasing(zi in prop::collection::vec(any::<bool>(), 5), z in prop::collection::vec(any::<bool>(), 5), lambda in prop::collection::vec(0.0f64..=1.0, 5), k in 0usize..5, step in 0.0f64..=1.0) {
        let before = kernel_weight(&zi, &z, &lambda).unwrap();
        let mut raised = lambda.clone();
        raised[k] += (1.0 - raised[k]) * step;
        prop_assert!(kernel_weight(&zi, &z, &raised).unwrap() >= before);
    }
    #[test]
    fn cv_loss_nonnegative(obs in obs_strategy(2, 2), lambda in prop::collection::vec(0.0f64..=1.0, 4)) {
        let data = EstimationData::new(CampaignId(1), 2, 2, obs).unwrap();
        if let Ok((loss, used)) = cv_loss(&data.cells(), &lambda) {
            prop_assert!(loss >= 0.0);
            prop_assert!(used <= data.len());
        }
    }

    #[test]
    fn ks_p_value_in_unit_interval(v in prop::collection::vec(0.0f64..=1.0, 5..60)) {
        let r = ks_uniformity(&v).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.p_value));
        prop_assert!((0.0..=1.0).contains(&r.statistic));
    }
}
