mod common;

use common::{default_setup, grid_min_3};
use feel_sched::channel::{self, ChannelRealization};
use feel_sched::learning::{GradientSet, StepSchedule};
use feel_sched::scheduler::{
    self, ctm_policy, ctm_probabilities, importance_aware_policy, p2_objective, remaining_rounds_bound, BoundParams,
    PolicyKind, RoundInputs, SchedulingDistribution, SIMPLEX_TOL,
};
use feel_sched::{CommParams, DeviceProfile};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Setup {
    profiles: Vec<DeviceProfile>,
    comm: CommParams,
    future: f64,
}

fn setup() -> Setup {
    let (profiles, comm) = default_setup();
    let future = channel::expected_future_time(&profiles, &comm).unwrap();
    Setup { profiles, comm, future }
}

fn bound(round: u64) -> BoundParams {
    BoundParams::new(2.5, 0.5, 1e-3, StepSchedule::new(2.0, 320.0).unwrap(), round).unwrap()
}

fn random_channel(s: &Setup, rng: &mut ChaCha8Rng) -> ChannelRealization {
    let gains: Vec<f64> = s.profiles.iter().map(|p| p.channel_variance * rng.random_range(0.05..3.0)).collect();
    ChannelRealization::from_gains(&s.profiles, &s.comm, &gains)
}

fn decide(kind: PolicyKind, grads: &GradientSet, channel: &ChannelRealization, s: &Setup, b: &BoundParams) -> SchedulingDistribution {
    let inputs = RoundInputs {
        grads,
        channel,
        comm: &s.comm,
        bound: b,
        future_time: s.future,
        ica_beta: scheduler::DEFAULT_ICA_BETA,
    };
    scheduler::decide(kind, &inputs).unwrap().distribution
}

fn sizes(s: &Setup) -> Vec<usize> {
    s.profiles.iter().map(|p| p.dataset_size).collect()
}

fn second_moment(a: &[f64], p: &[f64]) -> f64 {
    a.iter().zip(p).map(|(a, p)| a * a / p).sum()
}

#[test]
fn importance_aware_minimizes_variance_term_on_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let norms: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..2.0)).collect();
        let set = GradientSet::from_norms(norms, &[1, 2, 3]).unwrap();
        let a = set.importance();
        let ia = importance_aware_policy(&set).unwrap();
        let ours = second_moment(&a, ia.probs());
        let grid = grid_min_3(1000, |q| second_moment(&a, &q));
        assert!(ours <= grid + 1e-9, "{ours} vs grid {grid}");
    }
}

#[test]
fn closed_form_matches_grid_for_fixed_importance() {
    let a = [0.2, 0.5, 0.3];
    let b = [1.0, 6.0, 2.5];
    for rho in [0.3, 1.0, 3.0, 10.0] {
        let (p, _) = ctm_probabilities(rho, &a, &b).unwrap();
        let f = |q: &[f64]| -> f64 { (0..3).map(|m| rho * rho * a[m] * a[m] / q[m] + q[m] * b[m]).sum() };
        let grid = grid_min_3(1000, |q| f(&q));
        assert!(f(&p) <= grid + 1e-6, "rho {rho}: {} vs {grid}", f(&p));
    }
}

#[test]
fn normalizer_is_decreasing_and_hits_one_at_the_multiplier() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let m = rng.random_range(2..8);
        let a: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| 10f64.powf(rng.random_range(-2.0..3.0))).collect();
        let rho = 10f64.powf(rng.random_range(-3.0..3.0));
        let (_, lambda) = ctm_probabilities(rho, &a, &b).unwrap();
        let b_min = b.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(lambda > -b_min);
        let f = |l: f64| -> f64 { a.iter().zip(&b).map(|(a, b)| rho * a / (b + l).sqrt()).sum() };
        // lambda* can sit within 1e-10 of -b_min, so forming b + lambda here
        // loses digits that the solver itself never loses.
        assert!((f(lambda) - 1.0).abs() < 1e-6, "F(lambda*) = {}, lambda {lambda}, b_min {b_min}", f(lambda));
        let mut prev = f64::INFINITY;
        for k in 0..60 {
            let l = -b_min + 1e-9 * 2f64.powi(k);
            let v = f(l);
            assert!(v < prev);
            prev = v;
        }
    }
}

#[test]
fn objective_is_convex_on_random_segments() {
    let s = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grads = GradientSet::from_norms(vec![0.4, 1.1, 0.7, 0.2], &sizes(&s)).unwrap();
    let channel = random_channel(&s, &mut rng);
    let b = bound(50);
    let point = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let raw: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..1.0)).collect();
        let t: f64 = raw.iter().sum();
        raw.iter().map(|x| x / t).collect()
    };
    for _ in 0..100 {
        let (x, y) = (point(&mut rng), point(&mut rng));
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        let f = |p: &[f64]| p2_objective(p, &grads, &channel, &b, s.future);
        assert!(f(&mid) <= 0.5 * (f(&x) + f(&y)) * (1.0 + 1e-12));
    }
}

#[test]
fn objective_homogeneity_and_singleton() {
    let s = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let channel = random_channel(&s, &mut rng);
    let b = bound(10);
    let p = [0.1, 0.2, 0.3, 0.4];
    let zero = GradientSet::from_norms(vec![0.0; 4], &sizes(&s)).unwrap();
    let g1 = GradientSet::from_norms(vec![0.3, 0.5, 0.2, 0.9], &sizes(&s)).unwrap();
    let g2 = GradientSet::from_norms(g1.norms.iter().map(|x| x * 2f64.sqrt()).collect(), &sizes(&s)).unwrap();
    let latency = p2_objective(&p, &zero, &channel, &b, s.future);
    let first1 = p2_objective(&p, &g1, &channel, &b, s.future) - latency;
    let first2 = p2_objective(&p, &g2, &channel, &b, s.future) - latency;
    assert!((first2 / first1 - 2.0).abs() < 1e-12);

    let one = ChannelRealization::from_gains(&s.profiles[..1], &s.comm, &[s.profiles[0].channel_variance]);
    let g = GradientSet::from_norms(vec![0.7], &[5]).unwrap();
    let sol = ctm_policy(&g, &one, &s.comm, &b, s.future).unwrap();
    assert_eq!(sol.distribution.probs(), &[1.0]);
    assert!(p2_objective(&[0.5], &g, &one, &b, s.future) > p2_objective(&[1.0], &g, &one, &b, s.future));
}

#[test]
fn ctm_dominates_other_distributions() {
    let s = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let channel = random_channel(&s, &mut rng);
        let norms: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..2.0)).collect();
        let grads = GradientSet::from_norms(norms, &sizes(&s)).unwrap();
        let b = bound(rng.random_range(0..3000));
        let f = |p: &[f64]| p2_objective(p, &grads, &channel, &b, s.future);
        let ctm = f(ctm_policy(&grads, &channel, &s.comm, &b, s.future).unwrap().distribution.probs());

        let delta = 1e-3;
        let ca = decide(PolicyKind::ChannelAware, &grads, &channel, &s, &b);
        let smoothed: Vec<f64> = ca.probs().iter().map(|p| p * (1.0 - delta) + delta / 4.0).collect();
        let mut rivals = vec![
            decide(PolicyKind::Uniform, &grads, &channel, &s, &b).probs().to_vec(),
            decide(PolicyKind::ImportanceAware, &grads, &channel, &s, &b).probs().to_vec(),
            smoothed,
        ];
        for _ in 0..100 {
            let raw: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0f64).max(1e-6)).collect();
            let t: f64 = raw.iter().sum();
            rivals.push(raw.iter().map(|x| x / t).collect());
        }
        for q in &rivals {
            assert!(ctm <= f(q) * (1.0 + 1e-12), "ctm {ctm} vs {}", f(q));
        }
    }
}

#[test]
fn ctm_moves_from_importance_toward_fastest_device_over_rounds() {
    let s = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..30 {
        let channel = random_channel(&s, &mut rng);
        let norms: Vec<f64> = (0..4).map(|_| rng.random_range(0.05..1.0)).collect();
        let grads = GradientSet::from_norms(norms, &sizes(&s)).unwrap();
        let ia = importance_aware_policy(&grads).unwrap();
        let b = channel.upload_times();
        let fastest = (0..4).min_by(|&x, &y| b[x].total_cmp(&b[y])).unwrap();
        let mut prev_dist = 0.0;
        let mut prev_fast = 0.0;
        for round in (1..200_000u64).step_by(997) {
            let d = ctm_policy(&grads, &channel, &s.comm, &bound(round), s.future).unwrap().distribution;
            let dist = d.l1_distance(&ia);
            assert!(dist >= prev_dist - 1e-12, "L1 to IA shrank at round {round}");
            assert!(d.probs()[fastest] >= prev_fast - 1e-12, "fastest device lost mass at round {round}");
            prev_dist = dist;
            prev_fast = d.probs()[fastest];
        }
    }
}

#[test]
fn policies_are_permutation_equivariant() {
    let s = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let mut perm: Vec<usize> = (0..4).collect();
        perm.shuffle(&mut rng);
        let norms: Vec<f64> = (0..4).map(|_| rng.random_range(0.05..1.0)).collect();
        let gains: Vec<f64> = s.profiles.iter().map(|p| p.channel_variance * rng.random_range(0.05..3.0)).collect();
        let sz = sizes(&s);

        let grads = GradientSet::from_norms(norms.clone(), &sz).unwrap();
        let channel = ChannelRealization::from_gains(&s.profiles, &s.comm, &gains);
        let pp: Vec<DeviceProfile> = perm.iter().map(|&i| s.profiles[i]).collect();
        let p_grads =
            GradientSet::from_norms(perm.iter().map(|&i| norms[i]).collect(), &perm.iter().map(|&i| sz[i]).collect::<Vec<_>>())
                .unwrap();
        let p_channel = ChannelRealization::from_gains(&pp, &s.comm, &perm.iter().map(|&i| gains[i]).collect::<Vec<_>>());
        let b = bound(100);
        for kind in PolicyKind::ALL {
            let d = decide(kind, &grads, &channel, &s, &b);
            let pd = decide(kind, &p_grads, &p_channel, &s, &b);
            for (j, &i) in perm.iter().enumerate() {
                assert!((pd.probs()[j] - d.probs()[i]).abs() < 1e-12, "{kind}");
            }
        }
    }
}

#[test]
fn remaining_rounds_variance_term_matches_its_definition() {
    let s = setup();
    let grads = GradientSet::from_norms(vec![1.0, 1.0], &[5, 5]).unwrap();
    let b = bound(7);
    let uniform = scheduler::uniform_policy(2).unwrap();
    let r = remaining_rounds_bound(&grads, &uniform, &b, 1.0).unwrap();
    let eta = 2.0 / (7.0 + 320.0);
    let expected = 2.5 * (7.0 + 1.0 + 320.0) * eta * eta / (2.0 * 1e-3);
    assert!((r.variance_term - expected).abs() < 1e-12 * expected);
    let _ = s;

    let set = GradientSet::from_norms(vec![0.3, 0.9, 0.5], &[1, 2, 3]).unwrap();
    let ia = importance_aware_policy(&set).unwrap();
    let at_ia = remaining_rounds_bound(&set, &ia, &b, 1.0).unwrap().variance_term;
    let weight = at_ia / second_moment(&set.importance(), ia.probs());
    let grid = grid_min_3(1000, |q| weight * second_moment(&set.importance(), &q));
    assert!(at_ia <= grid * (1.0 + 1e-12));
}

fn valid(d: &SchedulingDistribution) -> bool {
    d.probs().iter().all(|&p| p >= 0.0 && p.is_finite()) && (d.probs().iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn every_policy_returns_a_valid_distribution(
        norms in prop::collection::vec(0.0f64..5.0, 4),
        fades in prop::collection::vec(1e-5f64..5.0, 4),
        round in 0u64..100_000,
    ) {
        prop_assume!(norms.iter().any(|&x| x > 0.0));
        let s = setup();
        let grads = GradientSet::from_norms(norms.clone(), &sizes(&s)).unwrap();
        let gains: Vec<f64> = s.profiles.iter().zip(&fades).map(|(p, f)| p.channel_variance * f).collect();
        let channel = ChannelRealization::from_gains(&s.profiles, &s.comm, &gains);
        let eligible = |m: usize| channel.links[m].is_eligible(s.comm.gain_threshold);
        prop_assume!((0..4).any(|m| norms[m] > 0.0 && eligible(m)));
        let b = bound(round);
        for kind in PolicyKind::ALL {
            let d = decide(kind, &grads, &channel, &s, &b);
            prop_assert!(valid(&d), "{kind}: {:?}", d.probs());
        }
        for kind in [PolicyKind::Uniform, PolicyKind::ImportanceAware, PolicyKind::Ctm] {
            let d = decide(kind, &grads, &channel, &s, &b);
            for (m, (&p, &norm)) in d.probs().iter().zip(&norms).enumerate() {
                if p == 0.0 {
                    prop_assert!(norm == 0.0 || (kind == PolicyKind::Ctm && !eligible(m)), "{kind} dropped device {m}");
                }
            }
        }
    }

    #[test]
    fn ctm_kkt_holds_on_random_instances(
        a in prop::collection::vec(1e-3f64..10.0, 2..9),
        spread in 0.0f64..6.0,
        rho_exp in -4.0f64..4.0,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = a.iter().map(|_| 10f64.powf(rng.random_range(-3.0..-3.0 + spread.max(1e-9)))).collect();
        let rho = 10f64.powf(rho_exp);
        let (p, lambda) = ctm_probabilities(rho, &a, &b).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for m in 0..a.len() {
            prop_assert!(p[m] > 0.0);
            let lhs = rho * rho * a[m] * a[m] / (p[m] * p[m]) - b[m];
            prop_assert!((lhs - lambda).abs() <= 1e-6 * (b[m] + lambda.abs()));
        }
    }
}
