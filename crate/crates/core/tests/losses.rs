mod common;

use common::fixture;
use magnet_core::rng::derive_rng;
use magnet_core::training_losses::{
    check_toy, combined_loss, grad_combined, mdpo_loss, sft_loss, CategoricalPolicy, LossConfig, MdpoForm,
    TokenizedTrajectory, ToyInstance,
};

fn toy() -> ToyInstance {
    serde_json::from_str(&std::fs::read_to_string(fixture("toy_losses.json")).unwrap()).unwrap()
}

fn log_softmax(row: &[f64], a: usize) -> f64 {
    let z: f64 = row.iter().map(|x| x.exp()).sum();
    row[a] - z.ln()
}

#[test]
fn sft_matches_a_direct_softmax() {
    let t = toy();
    let (theta, _) = t.policies().unwrap();
    let chosen = &t.pairs[0].chosen;
    let want = -(log_softmax(&t.theta_logits[0], 1) + log_softmax(&t.theta_logits[1], 2)) / 2.0;
    assert!((sft_loss(&theta, chosen).unwrap() - want).abs() < 1e-12);
    // logits [0, ln 3, -0.5] at action 1
    let p1 = 3.0 / (1.0 + 3.0 + (-0.5f64).exp());
    assert!((log_softmax(&t.theta_logits[0], 1) - p1.ln()).abs() < 1e-12);
}

#[test]
fn both_forms_agree_with_direct_evaluation() {
    let t = toy();
    let (theta, reference) = t.policies().unwrap();
    let p = &t.pairs[2];
    let lr = |s: usize, a: usize| log_softmax(&t.theta_logits[s], a) - log_softmax(&t.ref_logits[s], a);
    let eta = 0.7;
    let w: f64 = [(0, 0), (1, 2), (2, 1)].iter().map(|&(s, a)| lr(s, a)).sum();
    let l: f64 = [(0, 1), (0, 2)].iter().map(|&(s, a)| lr(s, a)).sum();
    let want_log = (1.0 + (-eta * (w - l)).exp()).ln();
    let cfg = LossConfig {
        lambda: 1.0,
        eta,
        form: MdpoForm::LogRatio,
    };
    assert!((mdpo_loss(&theta, &reference, &p.chosen, &p.rejected, &cfg).unwrap() - want_log).abs() < 1e-12);

    let wr: f64 = [(0, 0), (1, 2), (2, 1)].iter().map(|&(s, a)| lr(s, a).exp()).sum();
    let lrr: f64 = [(0, 1), (0, 2)].iter().map(|&(s, a)| lr(s, a).exp()).sum();
    let want_printed = (1.0 + (-eta * (lrr - wr)).exp()).ln();
    let cfg = LossConfig {
        form: MdpoForm::AsPrinted,
        ..cfg
    };
    assert!((mdpo_loss(&theta, &reference, &p.chosen, &p.rejected, &cfg).unwrap() - want_printed).abs() < 1e-12);
}

#[test]
fn reference_equal_policy_gives_ln2() {
    let t = toy();
    let (theta, _) = t.policies().unwrap();
    let cfg = LossConfig::default();
    for p in &t.pairs {
        let v = mdpo_loss(&theta, &theta, &p.chosen, &p.rejected, &cfg).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }
    let report = check_toy(&t, &cfg, 1e-5).unwrap();
    assert!((report[1].mdpo_log_ratio - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn lambda_zero_is_pure_sft() {
    let t = toy();
    let (theta, reference) = t.policies().unwrap();
    let cfg = LossConfig {
        lambda: 0.0,
        ..LossConfig::default()
    };
    for p in &t.pairs {
        assert_eq!(
            combined_loss(&theta, &reference, &p.chosen, &p.rejected, &cfg).unwrap(),
            sft_loss(&theta, &p.chosen).unwrap()
        );
    }
}

#[test]
fn fixture_gradients_match_finite_differences() {
    let t = toy();
    for form in [MdpoForm::LogRatio, MdpoForm::AsPrinted] {
        for lambda in [0.0, 0.5, 2.0] {
            let cfg = LossConfig { lambda, eta: 1.3, form };
            for r in check_toy(&t, &cfg, 1e-5).unwrap() {
                assert!(r.fd_relative_error < 1e-6, "{form:?} {lambda}: {}", r.fd_relative_error);
            }
        }
    }
}

#[test]
fn random_instances_match_finite_differences() {
    let mut rng = derive_rng(5, "losses-test", 0);
    for _ in 0..10 {
        let t = ToyInstance::random(&mut rng, 4, 5, 3);
        for r in check_toy(&t, &LossConfig::default(), 1e-5).unwrap() {
            assert!(r.fd_relative_error < 1e-6);
        }
    }
}

#[test]
fn gradient_vanishes_off_the_visited_states() {
    let theta = CategoricalPolicy::uniform(3, 2);
    let t = TokenizedTrajectory::new(vec![(0, 1)], vec![true]).unwrap();
    let g = grad_combined(&theta, &theta, &t, &t, &LossConfig::default()).unwrap();
    assert_eq!(&g[2..], &[0.0; 4]);
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(TokenizedTrajectory::new(vec![(0, 0)], vec![false]).is_err());
    assert!(TokenizedTrajectory::new(vec![(0, 0)], vec![true, true]).is_err());
    assert!(CategoricalPolicy::new(vec![vec![0.0, 1.0], vec![0.0]]).is_err());
    assert!(CategoricalPolicy::new(vec![vec![f64::NAN]]).is_err());
    let p = CategoricalPolicy::uniform(1, 2);
    let t = TokenizedTrajectory::new(vec![(0, 0)], vec![true]).unwrap();
    let bad = LossConfig {
        eta: 0.0,
        ..LossConfig::default()
    };
    assert!(mdpo_loss(&p, &p, &t, &t, &bad).is_err());
    let oob = TokenizedTrajectory::new(vec![(3, 0)], vec![true]).unwrap();
    assert!(sft_loss(&p, &oob).is_err());
}
