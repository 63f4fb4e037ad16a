use proptest::prelude::*;

use ovenlab::behavior::{extract_first_oven_checks, t_test, TestMode};
use ovenlab::env::{self, Action, TaskKind};
use ovenlab::neural::dft;
use ovenlab::train::TraceRow;

fn task() -> impl Strategy<Value = TaskKind> {
    prop_oneof![Just(TaskKind::SingleT), Just(TaskKind::DualTN)]
}

proptest! {
    #[test]
    fn random_play_keeps_invariants(task in task(), target in 7u32..=10, seed in any::<u64>(), actions in prop::collection::vec(0usize..6, 100)) {
        let (mut s, obs) = env::reset(task, target, seed).unwrap();
        prop_assert_eq!(obs.as_slice().len(), 90);
        let mut trial = 0;
        for &i in &actions {
            let r = s.step(Action::ALL[i]).unwrap();
            let agent_plane = &r.observation.as_slice()[15..30];
            prop_assert_eq!(agent_plane.iter().filter(|&&v| v == 1.0).count(), 1);
            prop_assert!(!r.info.take_soup || r.info.oven_timer.unwrap() >= target);
            prop_assert_eq!(r.info.trial_index, trial);
            trial += u32::from(r.info.delivery);
            prop_assert!(task == TaskKind::DualTN || r.info.number_value.is_none());
        }
        prop_assert!(s.is_done());
    }

    #[test]
    fn same_seed_same_episode(task in task(), seed in any::<u64>(), actions in prop::collection::vec(0usize..6, 100)) {
        let (mut a, _) = env::reset(task, 8, seed).unwrap();
        let (mut b, _) = env::reset(task, 8, seed).unwrap();
        for &i in &actions {
            prop_assert_eq!(a.step(Action::ALL[i]).unwrap(), b.step(Action::ALL[i]).unwrap());
        }
    }

    #[test]
    fn t_test_antisymmetry(a in prop::collection::vec(0.0f64..20.0, 2..30), b in prop::collection::vec(0.0f64..20.0, 2..30)) {
        if let (Ok(x), Ok(y)) = (t_test(&a, &b, TestMode::Welch), t_test(&b, &a, TestMode::Welch)) {
            prop_assert_eq!(x.t, -y.t);
            prop_assert_eq!(x.p_two_sided, y.p_two_sided);
            prop_assert!((0.0..=1.0).contains(&x.p_two_sided));
        }
    }

    #[test]
    fn dft_parseval(x in prop::collection::vec(-10.0f64..10.0, 2..200)) {
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let spectral: f64 = dft(&x).iter().map(|c| c.norm_sqr()).sum::<f64>() / x.len() as f64;
        prop_assert!((energy - spectral).abs() <= 1e-9 * energy.max(1.0));
    }

    #[test]
    fn extraction_respects_the_rule(task in task(), target in 7u32..=10, seed in any::<u64>(), actions in prop::collection::vec(0usize..6, 100)) {
        let (mut s, _) = env::reset(task, target, seed).unwrap();
        let rows: Vec<TraceRow> = actions.iter().enumerate().map(|(step, &i)| {
            let a = Action::ALL[i];
            let r = s.step(a).unwrap();
            TraceRow {
                episode: 0, step: step as u32, trial: r.info.trial_index, action: a,
                oven_timer: r.info.oven_timer, number_value: r.info.number_value, reward: r.reward,
                delivery: r.info.delivery, correct_number: r.info.correct_number,
                oven_check: r.info.oven_check, take_soup: r.info.take_soup,
            }
        }).collect();
        for c in extract_first_oven_checks(&rows, target).unwrap() {
            prop_assert!(c.timer_value >= 1);
            let trial: Vec<&TraceRow> = rows.iter().filter(|r| r.trial == c.trial).collect();
            prop_assert!(trial.iter().any(|r| r.oven_check));
            prop_assert!(trial.last().unwrap().delivery);
            if c.timer_value < target {
                let start = trial.iter().position(|r| r.oven_check && r.number_value.is_none() && r.oven_timer == Some(c.timer_value)).unwrap();
                let run: Vec<_> = trial[start..].iter().take_while(|r| r.oven_check).collect();
                prop_assert!(run.last().unwrap().take_soup);
            }
        }
    }
}
