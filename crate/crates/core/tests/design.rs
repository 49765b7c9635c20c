use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use suba::design::{uniformly_inferior, DesignError};
use suba::{AllocationMode, Arm, DesignConfig, Phase, PriorParams, Scenario, StopReason, SubaTrial};

fn config(n_arms: usize, n_markers: usize, max_enrollment: usize, runin: usize) -> DesignConfig {
    DesignConfig {
        max_enrollment,
        runin,
        n_arms,
        prior: PriorParams::uniform(n_markers, 0.5).unwrap().with_max_rounds(2).unwrap(),
        grid_points: 4,
        seed: 5,
        ..DesignConfig::standard()
    }
}

/// Runs a trial to completion with outcomes drawn from `scenario`.
fn run(mut trial: SubaTrial, scenario: Scenario, seed: u64) -> SubaTrial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while !trial.is_stopped() {
        let x = scenario.draw_profile(&mut rng);
        let a = trial.enroll(&x).unwrap();
        let y = rng.random::<f64>() < scenario.true_response(a.arm, &x);
        trial.record_outcome(a.patient, y).unwrap();
    }
    trial
}

#[test]
fn single_arm_trial_runs_to_the_end() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut trial = SubaTrial::new(config(1, 2, 30, 10)).unwrap();
    for _ in 0..30 {
        let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let a = trial.enroll(&x).unwrap();
        assert_eq!(a.arm, Arm(0));
        let d = trial.record_outcome(a.patient, rng.random()).unwrap();
        assert!(d.dropped.is_empty());
    }
    assert_eq!(trial.stop_reason(), Some(StopReason::MaxEnrollment));
    assert!(matches!(trial.enroll(&[0.0, 0.0]), Err(DesignError::InvalidPhase(Phase::Stopped))));
}

#[test]
fn identical_predictions_drop_nothing() {
    let q = vec![vec![0.4, 0.6, 0.5]; 3];
    assert!(uniformly_inferior(&Arm::all(3), &q).is_empty());
    // Equal at a single point is enough to survive.
    let q = vec![vec![0.3, 0.5], vec![0.4, 0.5]];
    assert!(uniformly_inferior(&Arm::all(2), &q).is_empty());
    let q = vec![vec![0.3, 0.49], vec![0.4, 0.5]];
    assert_eq!(uniformly_inferior(&Arm::all(2), &q), vec![Arm(0)]);
}

#[test]
fn run_in_is_balanced_randomization() {
    let mut trial = SubaTrial::new(config(3, 2, 300, 300)).unwrap();
    let mut counts = [0usize; 3];
    for i in 0..300 {
        let x = [(i % 7) as f64 / 7.0, (i % 5) as f64 / 5.0];
        let a = trial.enroll(&x).unwrap();
        assert_eq!(a.phase, Phase::RunIn);
        counts[a.arm.index()] += 1;
        trial.record_outcome(a.patient, i % 3 == 0).unwrap();
    }
    assert_eq!(counts.iter().sum::<usize>(), 300);
    assert!(counts.iter().all(|&c| (70..=130).contains(&c)), "{counts:?}");
    let report = trial.final_report().unwrap();
    assert_eq!(report.enrolled, 300);
    assert_eq!(report.stop_reason, Some(StopReason::MaxEnrollment));
}

#[test]
fn clearly_inferior_arm_is_dropped() {
    let scenario = Scenario::new(4).unwrap();
    let trial = SubaTrial::new(DesignConfig {
        seed: 17,
        ..DesignConfig::standard()
    })
    .unwrap();
    let mut trial = run(trial, scenario, 17);
    assert!(trial.drops().iter().any(|d| d.arm == Arm(2)), "{:?}", trial.drops());
    let report = trial.final_report().unwrap();
    assert!(!report.active_arms.contains(&Arm(2)));
    let arm3 = &report.arms[2];
    assert!(!arm3.active);
    assert_eq!(arm3.dropped_at, trial.drops().iter().find(|d| d.arm == Arm(2)).map(|d| d.enrolled));
}

#[test]
fn adaptive_phase_follows_the_predictive_argmax() {
    let scenario = Scenario::new(1).unwrap();
    let mut trial = SubaTrial::new(config(3, 4, 80, 40)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    while !trial.is_stopped() {
        let x = scenario.draw_profile(&mut rng);
        let a = trial.enroll(&x).unwrap();
        if a.phase == Phase::Adaptive {
            let best = trial
                .active_arms()
                .iter()
                .map(|t| a.q[t.index()])
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(a.q[a.arm.index()], best);
        }
        let y = rng.random::<f64>() < scenario.true_response(a.arm, &x);
        trial.record_outcome(a.patient, y).unwrap();
    }
}

#[test]
fn power_randomization_spreads_assignments() {
    let scenario = Scenario::new(6).unwrap();
    let trial = SubaTrial::new(DesignConfig {
        allocation: AllocationMode::PowerRandomization { c: 0.5 },
        ..config(3, 4, 90, 30)
    })
    .unwrap();
    let trial = run(trial, scenario, 8);
    let arms = trial.dispositions();
    assert!(arms.iter().all(|d| d.assigned > 0));
}

#[test]
fn outcomes_out_of_order_are_accepted() {
    let mut trial = SubaTrial::new(config(2, 2, 20, 4)).unwrap();
    let a = trial.enroll(&[0.1, 0.2]).unwrap();
    let b = trial.enroll(&[-0.3, 0.5]).unwrap();
    trial.record_outcome(b.patient, true).unwrap();
    trial.record_outcome(a.patient, false).unwrap();
    assert_eq!(trial.data().n_observed(), 2);
    assert!(matches!(
        trial.record_outcome(a.patient, true),
        Err(DesignError::DuplicateOutcome(_))
    ));
}
