use metareward_core::env::{reset, step, target_distance, Benchmark, Split, TaskPools, SHAPING_COEF, SUCCESS_BONUS};
use metareward_core::eval::{aggregate, Method, SeedEval};
use metareward_core::exec::{Executor, Sequential};
use metareward_core::inner::{compute_gae, normalize_advantages};
use metareward_core::outer::{estimate_meta_advantages, skip_boundary, AeConfig};
use metareward_core::rng::SeedTree;
use metareward_core::Error;
use proptest::prelude::*;
use rand::Rng as _;

fn bench() -> impl Strategy<Value = Benchmark> {
    prop::sample::select(Benchmark::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn pools_are_disjoint_and_seeded(b in bench(), seed in 0u64..1000) {
        let pools = TaskPools::build(b, seed);
        for class in b.all_classes() {
            let train = pools.pool(class, Split::Train);
            for v in pools.pool(class, Split::Test) {
                prop_assert!(!train.contains(v));
            }
        }
        prop_assert_eq!(TaskPools::build(b, seed), pools);
    }

    #[test]
    fn streams_depend_only_on_root_and_label(seed in any::<u64>(), a in "[a-z/0-9]{1,12}", b in "[a-z/0-9]{1,12}") {
        let t = SeedTree::new(seed);
        let x: Vec<u64> = (0..16).map({ let mut r = t.stream(&a); move |_| r.gen() }).collect();
        let y: Vec<u64> = (0..16).map({ let mut r = t.stream(&a); move |_| r.gen() }).collect();
        prop_assert_eq!(&x, &y);
        if a != b {
            let z: Vec<u64> = (0..16).map({ let mut r = t.stream(&b); move |_| r.gen() }).collect();
            prop_assert_ne!(&x, &z);
        }
    }

    #[test]
    fn shaped_rewards_telescope(seed in 0u64..500, idx in 0usize..50, actions in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..60)) {
        let task = TaskPools::build(Benchmark::Ml1Reach, seed).tasks(Split::Train)[idx];
        let (mut s, _) = reset(&task, actions.len(), &mut SeedTree::new(seed).stream("reset"));
        let d0 = target_distance(&s, &task);
        let mut total = 0.0;
        let mut bonuses = 0.0;
        for (ax, ay) in actions {
            let before = s.succeeded;
            let out = step(&mut s, &task, &[ax, ay]).unwrap();
            prop_assert!(s.pos.iter().all(|p| p.abs() <= 1.0));
            total += out.shaped_reward;
            if s.succeeded && !before {
                bonuses += SUCCESS_BONUS;
            }
        }
        let want = SHAPING_COEF * (d0 - target_distance(&s, &task)) + bonuses;
        prop_assert!((total - want).abs() < 1e-9);
        prop_assert!(bonuses <= SUCCESS_BONUS);
    }

    #[test]
    fn undiscounted_gae_is_return_to_go(rs in prop::collection::vec(-1.0f64..1.0, 1..40), vs in prop::collection::vec(-1.0f64..1.0, 40)) {
        let n = rs.len();
        let v = &vs[..n];
        let dones: Vec<bool> = (0..n).map(|t| t + 1 == n).collect();
        let (adv, ret) = compute_gae(&rs, v, &dones, 1.0, 1.0);
        for t in 0..n {
            let togo: f64 = rs[t..].iter().sum();
            prop_assert!((ret[t] - togo).abs() < 1e-10);
            prop_assert!((adv[t] + v[t] - ret[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_advantages_have_zero_mean(a in prop::collection::vec(-5.0f64..5.0, 2..50)) {
        let n = normalize_advantages(&a);
        let m = n.iter().sum::<f64>() / n.len() as f64;
        prop_assert!(m.abs() < 1e-9);
    }

    #[test]
    fn meta_advantages_ignore_rewards_before_the_next_update(
        horizon in 1usize..5, per in 1usize..4, updates in 1usize..4, extra in 0usize..3,
        skip in 1usize..4, more in 0usize..4, n_est in 1usize..5, seed in any::<u64>(),
    ) {
        let rollout = horizon * per;
        let len = rollout * updates + extra * horizon;
        let mut rng = SeedTree::new(seed).stream("mini");
        let r: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ep: Vec<usize> = (0..len).map(|t| t / horizon).collect();
        let bounds: Vec<usize> = (1..=updates).map(|u| u * rollout).collect();
        let ae = AeConfig { bootstrapping_lambda: 0.85, starting_n: rollout.max(skip) + more, num_n_step_estimates: n_est, skip_rate: skip };
        let base = estimate_meta_advantages(&r, &ep, &bounds, &v, &ae, 0.9).unwrap();
        let t = rng.gen_range(0..len);
        let b = skip_boundary(t, &bounds, len);
        let mut r2 = r.clone();
        r2[..b].iter_mut().for_each(|x| *x = rng.gen_range(-9.0..9.0));
        let pert = estimate_meta_advantages(&r2, &ep, &bounds, &v, &ae, 0.9).unwrap();
        prop_assert_eq!(base.advantages[t].to_bits(), pert.advantages[t].to_bits());
    }

    #[test]
    fn aggregate_is_order_invariant(finals in prop::collection::vec(0.0f64..1.0, 1..6), rot in 0usize..6) {
        let evals: Vec<SeedEval> = finals
            .iter()
            .enumerate()
            .map(|(i, f)| SeedEval { method: Method::Sparse, split: Split::Test, seed: i as u64, per_episode: vec![*f, 1.0 - f], final_success: *f, tasks: vec![] })
            .collect();
        let mut shuffled = evals.clone();
        shuffled.rotate_left(rot % evals.len());
        let (a, b) = (aggregate(&evals).unwrap(), aggregate(&shuffled).unwrap());
        prop_assert!((a.final_mean - b.final_mean).abs() < 1e-12);
        prop_assert!((a.final_std - b.final_std).abs() < 1e-12);
    }
}

#[test]
fn executor_keeps_job_order_and_names_the_failing_job() {
    let jobs: Vec<usize> = (0..30).collect();
    let out = Sequential.map(&jobs, |i, j| Ok(i * 100 + j)).unwrap();
    assert_eq!(out, (0..30).map(|j| j * 101).collect::<Vec<_>>());
    let err = Sequential.map(&jobs, |_, j| if *j == 17 { Err(Error::numeric("boom")) } else { Ok(()) }).unwrap_err();
    assert!(err.to_string().contains("job 17"), "{err}");
}

#[test]
fn single_seed_aggregate_has_zero_std() {
    let e = SeedEval { method: Method::Shaped, split: Split::Train, seed: 3, per_episode: vec![0.2, 0.4], final_success: 0.5, tasks: vec![] };
    let c = aggregate(&[e]).unwrap();
    assert_eq!(c.std, vec![0.0, 0.0]);
    assert_eq!(c.final_std, 0.0);
}
