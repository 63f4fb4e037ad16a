mod common;

use ovenlab::env::planner::{predicted_soups, scripted_episode};
use ovenlab::env::{TaskKind, TARGETS};

#[test]
fn fuzzed_episodes_respect_the_rules() {
    for task in TaskKind::ALL {
        for target in TARGETS {
            let mut soups = 0;
            for seed in 0..500u64 {
                let noise = (seed % 11) as f64 / 10.0;
                soups += common::fuzz_episode(task, target, seed, noise).unwrap().soups;
            }
            assert!(soups > 0, "{task} d{target}: fuzzing never delivered");
        }
    }
}

#[test]
fn planner_prediction_is_the_true_optimum() {
    for task in TaskKind::ALL {
        for target in TARGETS {
            assert_eq!(predicted_soups(task, target), common::max_soups(task, target), "{task} d{target}");
        }
    }
}

#[test]
fn scripted_policy_reaches_the_prediction() {
    for task in TaskKind::ALL {
        for target in TARGETS {
            for seed in 0..20 {
                let (soups, total) = scripted_episode(task, target, seed).unwrap();
                assert_eq!(soups, predicted_soups(task, target), "{task} d{target} seed {seed}");
                if task == TaskKind::SingleT {
                    assert_eq!(total, soups as f32);
                } else {
                    assert!(total > soups as f32);
                }
            }
        }
    }
}
