//! Cross-checks against independent reference computations: fixture hash
//! vectors, brute-force partitions, dense least squares.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use parexp::estimators::{kernel_table, kernel_weight, stacked_ols, Bandwidths, CellKey, EstimationData, Observation};
use parexp::oracle::{FocalEffects, Noise, OutcomeModel};
use parexp::randomize::assign;
use parexp::{build_partitions, Arm, Audience, Bits, Campaign, CampaignId, Roster, SplitSeed};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn split_vectors_fixture() {
    let text = include_str!("fixtures/split_vectors.csv");
    let mut n = 0;
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let user: u64 = f[0].parse().unwrap();
        let campaign: u64 = f[1].parse().unwrap();
        let seed: u64 = f[2].parse().unwrap();
        let share: f64 = f[3].parse().unwrap();
        let want = match f[4] {
            "test" => Arm::Test,
            "control" => Arm::Control,
            other => panic!("line {}: bad arm {other}", i + 1),
        };
        assert_eq!(assign(user, campaign, SplitSeed(seed), share), want, "line {}", i + 1);
        n += 1;
    }
    assert!(n >= 60);
}

fn mixed_roster() -> Roster {
    Roster::new(vec![
        Campaign::new(4, Audience::Fraction { share: 0.6, salt: 3 }, 0.5),
        Campaign::new(1, Audience::Range { start: 0, end: 700 }, 0.5),
        Campaign::new(9, Audience::All, 0.5),
        Campaign::new(2, Audience::List((0..1000).step_by(3).collect()), 0.5),
    ])
    .unwrap()
}

#[test]
fn partitions_match_brute_force() {
    let roster = mixed_roster();
    let users: Vec<u64> = (0..1000).rev().collect();
    let built = build_partitions(&roster, &users).unwrap();
    let campaigns = roster.campaigns();
    for (pos, idx) in built.iter().enumerate() {
        let me = &campaigns[pos];
        assert_eq!(idx.focal, me.index);
        // competitor set as a sorted list of campaign ids
        let mut groups: BTreeMap<Vec<u32>, Vec<u64>> = BTreeMap::new();
        for u in 0..1000u64 {
            if !me.audience.contains(u, me.index) {
                continue;
            }
            let others: Vec<u32> = campaigns
                .iter()
                .filter(|c| c.index != me.index && c.audience.contains(u, c.index))
                .map(|c| c.index.0)
                .collect();
            groups.entry(others).or_default().push(u);
        }
        assert_eq!(idx.len(), groups.len());
        let comp_order: Vec<u32> = campaigns.iter().filter(|c| c.index != me.index).map(|c| c.index.0).collect();
        // labels follow the set read as binary with the first competitor as the lowest bit
        let key = |set: &[u32]| -> u64 {
            set.iter().map(|id| 1u64 << comp_order.iter().position(|c| c == id).unwrap()).sum()
        };
        let mut expected: Vec<(&Vec<u32>, &Vec<u64>)> = groups.iter().collect();
        expected.sort_by_key(|(s, _)| key(s));
        for (q, (set, members)) in expected.into_iter().enumerate() {
            let p = idx.partition(q + 1);
            let ids: Vec<u32> = p.competitor_ids.iter().map(|c| c.0).collect();
            let mut want = set.clone();
            want.sort_by_key(|id| comp_order.iter().position(|c| c == id));
            assert_eq!(ids, want, "focal {} label {}", me.index, q + 1);
            assert_eq!(&p.members, members);
        }
    }
}

fn synthetic(seed: u64, n: usize, n_comp: usize, n_part: usize) -> EstimationData<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs = (0..n)
        .map(|i| {
            let d = Bits::from_bools(&(0..n_comp).map(|_| rng.random_bool(0.5)).collect::<Vec<_>>());
            let partition = rng.random_range(1..=n_part);
            let treated = rng.random_bool(0.5);
            let y = 1.0 + d.count_ones() as f64 * 0.3 + if treated { 0.5 + 0.2 * partition as f64 } else { 0.0 }
                + rng.random_range(-1.0..1.0) * (1.0 + d.rank() as f64 * 0.1);
            Observation { user_id: i as u64, d, partition, treated, y }
        })
        .collect();
    EstimationData::new(CampaignId(1), n_comp, n_part, obs).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Weighted least squares of y on [1, D] with sandwich `A⁻¹ (Σ w e² x xᵀ) A⁻¹`.
fn dense_wls(rows: &[(f64, bool, f64)]) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.len();
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 || rows[i].1 { 1.0 } else { 0.0 });
    let w = DMatrix::from_diagonal(&DVector::from_iterator(n, rows.iter().map(|r| r.0)));
    let y = DVector::from_iterator(n, rows.iter().map(|r| r.2));
    let a = x.transpose() * &w * &x;
    let a_inv = a.try_inverse().expect("invertible");
    let beta = &a_inv * x.transpose() * &w * &y;
    let e = &y - &x * &beta;
    let omega_w = DMatrix::from_diagonal(&DVector::from_iterator(n, (0..n).map(|i| rows[i].0 * e[i] * e[i])));
    let cov = &a_inv * x.transpose() * omega_w * &x * &a_inv;
    (beta, cov)
}

#[test]
fn stacked_ols_matches_dense_regression() {
    for seed in 0..4 {
        let data = synthetic(seed, 600, 3, 2);
        let table = stacked_ols(&data, 1);
        // one big design with an intercept and treatment dummy per cell
        let mut cells: Vec<CellKey> = data.obs.iter().map(|o| CellKey { partition: o.partition, d: o.d }).collect();
        cells.sort();
        cells.dedup();
        let n = data.len();
        let p = 2 * cells.len();
        let col = |o: &Observation<f64>| 2 * cells.binary_search(&CellKey { partition: o.partition, d: o.d }).unwrap();
        let x = DMatrix::from_fn(n, p, |i, j| {
            let o = &data.obs[i];
            let c = col(o);
            if j == c || (j == c + 1 && o.treated) {
                1.0
            } else {
                0.0
            }
        });
        let y = DVector::from_iterator(n, data.obs.iter().map(|o| o.y));
        let xtx_inv = (x.transpose() * &x).try_inverse().expect("all cells identified");
        let beta = &xtx_inv * x.transpose() * &y;
        let e = &y - &x * &beta;
        let meat = x.transpose() * DMatrix::from_diagonal(&e.map(|v| v * v)) * &x;
        let cov = &xtx_inv * meat * &xtx_inv;
        assert_eq!(table.rows.len(), cells.len());
        for (k, key) in cells.iter().enumerate() {
            let row = table.get(key).unwrap();
            assert!(rel_close(row.alpha, beta[2 * k], 1e-10));
            assert!(rel_close(row.tau, beta[2 * k + 1], 1e-10));
            assert!(rel_close(row.se_alpha, cov[(2 * k, 2 * k)].sqrt(), 1e-8));
            assert!(rel_close(row.se_tau, cov[(2 * k + 1, 2 * k + 1)].sqrt(), 1e-8));
        }
    }
}

#[test]
fn kernel_matches_dense_weighted_regression() {
    let data = synthetic(11, 500, 3, 3);
    let cells = data.cells();
    for lambda in [vec![0.3, 0.0, 0.8, 0.5, 0.2, 1.0], vec![1.0; 6], vec![0.05, 0.9, 0.4, 0.0, 0.6, 0.7]] {
        let bw = Bandwidths::new(lambda.clone()).unwrap();
        let table = kernel_table(&cells, &bw, CampaignId(1), 1).unwrap();
        for row in &table.rows {
            let target: Vec<bool> = {
                let mut z: Vec<bool> = row.key.d.iter().collect();
                z.extend((1..=3).map(|q| q == row.key.partition));
                z
            };
            let rows: Vec<(f64, bool, f64)> = data
                .obs
                .iter()
                .map(|o| (kernel_weight(&data.z_vector(o), &target, &lambda).unwrap(), o.treated, o.y))
                .filter(|r| r.0 > 0.0)
                .collect();
            let (beta, cov) = dense_wls(&rows);
            assert!(rel_close(row.alpha, beta[0], 1e-10), "{lambda:?} {}", row.key);
            assert!(rel_close(row.tau, beta[1], 1e-10), "{lambda:?} {}", row.key);
            assert!(rel_close(row.se_alpha, cov[(0, 0)].sqrt(), 1e-8));
            assert!(rel_close(row.se_tau, cov[(1, 1)].sqrt(), 1e-8));
        }
    }
}

#[test]
fn expected_outcome_matches_formula() {
    let roster = Roster::new((1..=4).map(|i| Campaign::new(i, Audience::All, 0.5)).collect()).unwrap();
    let gamma = [(2u32, 0.4), (3, -0.25), (4, 1.5)];
    let eta = [(2u32, -0.7), (4, 0.125)];
    let model = OutcomeModel {
        focals: vec![(
            CampaignId(1),
            FocalEffects {
                baseline: 2.0,
                own_effect: 0.9,
                direct: gamma.iter().map(|&(k, v)| (CampaignId(k), v)).collect(),
                interaction: eta.iter().map(|&(k, v)| (CampaignId(k), v)).collect(),
            },
        )],
        noise: Noise::Gaussian { scale: 1.0 },
        floor: false,
    }
    .compile(&roster)
    .unwrap();
    for e in Bits::all(4) {
        let own = e.get(0);
        let mut y = 2.0 + if own { 0.9 } else { 0.0 };
        for &(k, g) in &gamma {
            if e.get(k as usize - 1) {
                y += g;
            }
        }
        for &(k, h) in &eta {
            if own && e.get(k as usize - 1) {
                y += h;
            }
        }
        assert!((model.expected(CampaignId(1), &e).unwrap() - y).abs() < 1e-12, "{e}");
    }
}
