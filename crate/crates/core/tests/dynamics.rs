use hardball_core::dynamics::jsonl::{parse_event_log, write_segment};
use hardball_core::dynamics::{simulate, EventKind, StopCondition};
use hardball_core::{sample_liouville, validate, ModelParams, PhasePoint};
use proptest::prelude::*;

const CONFIGS: [(usize, usize); 6] = [(2, 0), (2, 1), (2, 2), (3, 1), (3, 3), (4, 2)];

fn config_with_radius(r_min: f64) -> impl Strategy<Value = ModelParams> {
    (0..CONFIGS.len(), r_min..0.24).prop_map(|(i, r)| ModelParams::new(CONFIGS[i].0, CONFIGS[i].1, r).unwrap())
}

fn config() -> impl Strategy<Value = ModelParams> {
    config_with_radius(0.02)
}

#[test]
fn head_on_collision_on_the_torus() {
    let p = ModelParams::new(2, 0, 0.1).unwrap();
    let a = std::f64::consts::FRAC_1_SQRT_2;
    let x = PhasePoint::new(vec![0.3, 0.5], vec![0.7, 0.5], vec![a, 0.0], vec![-a, 0.0]);
    let seg = simulate(&x, &StopCondition::events(1), &p).unwrap();
    let ev = &seg.events[0];
    assert_eq!(ev.kind, EventKind::BallBall);
    // gap 0.4 - 2r closed at relative speed 2a
    assert!((ev.time - 0.2 / (2.0 * a)).abs() < 1e-14);
    assert!((ev.v1_post[0] + a).abs() < 1e-14 && (ev.v2_post[0] - a).abs() < 1e-14);
    assert!(ev.v1_post[1].abs() < 1e-14);
}

#[test]
fn wall_hits_in_order() {
    let p = ModelParams::new(2, 2, 0.1).unwrap();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let x = PhasePoint::new(vec![0.5, 0.3], vec![0.5, 0.75], vec![0.0, -s], vec![0.0, s]);
    let seg = simulate(&x, &StopCondition::events(2), &p).unwrap();
    assert_eq!(seg.events[0].kind, EventKind::Wall { ball: 1, axis: 1, face: 1 });
    assert!((seg.events[0].time - 0.25 / s).abs() < 1e-14);
    assert_eq!(seg.events[1].kind, EventKind::Wall { ball: 0, axis: 1, face: 0 });
    assert!((seg.events[1].time - 0.3 / s).abs() < 1e-14);
    assert_eq!(seg.events[1].v1_post[1], s);
}

#[test]
fn liouville_samples_satisfy_the_reductions() {
    for (nu, k) in CONFIGS {
        let p = ModelParams::new(nu, k, 0.15).unwrap();
        for seed in 0..50 {
            let x = sample_liouville(&p, seed).unwrap();
            assert!(validate(&p, &x).is_empty(), "({nu},{k}) seed {seed}");
            assert!((x.energy() - 1.0).abs() < 1e-14);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conserved_quantities(p in config(), seed in 0u64..1_000_000) {
        let x = sample_liouville(&p, seed).unwrap();
        let seg = simulate(&x, &StopCondition::events(400), &p).unwrap();
        for ev in &seg.events {
            let y = ev.post_state();
            prop_assert!((y.energy() - 1.0).abs() < 1e-12);
            for j in p.k..p.nu {
                prop_assert!((y.v1[j] + y.v2[j]).abs() < 1e-12);
            }
            prop_assert!(validate(&p, &y).is_empty());
        }
    }

    #[test]
    fn event_times_increase_and_replay(p in config(), seed in 0u64..1_000_000) {
        let x = sample_liouville(&p, seed).unwrap();
        let seg = simulate(&x, &StopCondition::events(200), &p).unwrap();
        prop_assert!(seg.events.windows(2).all(|w| w[0].time <= w[1].time));
        prop_assert!(seg.t_end > seg.events.last().unwrap().time);
        let end = seg.replay().unwrap();
        prop_assert!((&end.v1 - &seg.final_state.v1).amax() < 1e-12);
        prop_assert!(p.container().min_image(&end.q1, &seg.final_state.q1).amax() < 1e-12);
    }

    #[test]
    fn count_and_duration_stops_agree(p in config(), seed in 0u64..1_000_000, n in 1usize..300) {
        let x = sample_liouville(&p, seed).unwrap();
        let by_count = simulate(&x, &StopCondition::events(n), &p).unwrap();
        let by_time = simulate(&x, &StopCondition::duration(by_count.t_end), &p).unwrap();
        prop_assert_eq!(&by_count.events, &by_time.events);
        prop_assert_eq!(&by_count.final_state, &by_time.final_state);
    }

    // small radii amplify errors by about 2 / r per collision
    #[test]
    fn short_horizons_reverse(p in config_with_radius(0.1), seed in 0u64..1_000_000) {
        let x = sample_liouville(&p, seed).unwrap();
        let fwd = simulate(&x, &StopCondition::ball_collisions(3), &p).unwrap();
        let back = simulate(&fwd.final_state.reversed(), &StopCondition::duration(fwd.t_end), &p).unwrap();
        let end = back.final_state.reversed();
        prop_assert!((&end.v1 - &x.v1).amax() < 1e-8);
        prop_assert!(p.container().min_image(&end.q2, &x.q2).amax() < 1e-8);
    }

    #[test]
    fn event_logs_round_trip(p in config(), seed in 0u64..1_000_000) {
        let x = sample_liouville(&p, seed).unwrap();
        let seg = simulate(&x, &StopCondition::events(50), &p).unwrap();
        let log = parse_event_log(&write_segment(&seg, Some(seed), None)).unwrap();
        prop_assert_eq!(log.header.seed, Some(seed));
        prop_assert_eq!(log.to_segment().unwrap(), seg);
    }
}
