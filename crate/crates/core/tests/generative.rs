//! Cross-module checks driven by the generative oracle: likelihoods evaluated
//! on data produced by the exact model they describe.

use cfcal_core::likelihood::{
    accel_loglik, joint_loglik, speed_loglik, DriverModel, LikelihoodMode, ObservationNoise,
};
use cfcal_core::prior::{log_posterior, HyperParams, ParamLayout};
use cfcal_core::stats::LN_2PI;
use cfcal_core::synth::{generate, recovery_ground_truth, truth_state, GroundTruth, LeaderProfile};
use cfcal_core::trajectory::{load_trajectories_from, write_trajectories_csv, CsvSchema, Trajectory};

fn single_driver_truth(seed: u64, sigma_eta: f64, p: usize) -> GroundTruth {
    let mut gt = recovery_ground_truth(1, seed);
    let ar = match p {
        0 => cfcal_core::ar::ArCoefficients::white(sigma_eta).unwrap(),
        2 => cfcal_core::ar::ArCoefficients::new(vec![0.5, 0.2], sigma_eta).unwrap(),
        _ => cfcal_core::ar::table1_ar5(sigma_eta),
    };
    gt.drivers[0].ar = ar;
    gt
}

#[test]
fn truth_beats_v0_perturbation_on_most_seeds() {
    // generative-process oracle: the likelihood at the generating parameters
    // exceeds the likelihood with v0 inflated by 20% on at least 95 of 100
    // seeds. The leader reaches speeds near v0 so the free-flow term carries
    // real information.
    let mut wins = 0;
    for seed in 0..100 {
        let mut gt = single_driver_truth(seed, 0.02, 5);
        gt.leader = LeaderProfile::Sawtooth { lo: 8.0, hi: 25.0, period: 40.0 };
        let (latent, _) = generate(&gt, 240.0, 0.2).unwrap().remove(0);
        let truth = &gt.drivers[0];
        let mut perturbed = truth.clone();
        perturbed.idm.v0 *= 1.2;
        let l_truth = accel_loglik(&latent, truth).unwrap();
        let l_pert = accel_loglik(&latent, &perturbed).unwrap();
        if l_truth > l_pert {
            wins += 1;
        }
    }
    assert!(wins >= 95, "truth won only {wins}/100");
}

#[test]
fn speed_loglik_per_step_matches_gaussian_entropy() {
    // on noise-free data generated by the model itself, the one-step speed
    // residual is exactly eta * dt, so the expected per-step log-density is
    // the negative Gaussian entropy -(1 + ln(2 pi var)) / 2
    let mut gt = single_driver_truth(7, 0.05, 5);
    gt.sigma_v = 0.0;
    gt.sigma_x = 0.0;
    let n_steps = 50_000usize;
    let (_, observed) = generate(&gt, n_steps as f64 * 0.2, 0.2).unwrap().remove(0);
    let noise = ObservationNoise::new(0.0, 0.0).unwrap();
    let m = &gt.drivers[0];
    let ll = speed_loglik(&observed, m, &noise).unwrap();
    let n_terms = (observed.len() - 1 - 5) as f64;
    let var = (m.ar.sigma_eta * 0.2).powi(2);
    let expect = -0.5 * (1.0 + LN_2PI + var.ln());
    let got = ll / n_terms;
    // the variance of one term's log-density is 1/2
    let se = (0.5f64 / n_terms).sqrt();
    assert!((got - expect).abs() < 3.0 * se, "per-step {got} vs entropy {expect} (se {se})");
}

#[test]
fn posterior_at_truth_beats_prior_center() {
    // 20-driver data: the log-posterior at the generative truth exceeds the
    // value at the unconstrained origin (the prior center) on >= 95/100 seeds
    let hp = HyperParams {
        lambda_eta: 50.0,
        lambda_v: 50.0,
        lambda_x: 50.0,
        ..HyperParams::default()
    };
    let layout = ParamLayout::new(20, 5).unwrap();
    let mut wins = 0;
    for seed in 0..100 {
        let gt = recovery_ground_truth(20, 1000 + seed);
        let pairs = generate(&gt, 20.0, 0.2).unwrap();
        let data: Vec<Trajectory> = pairs.into_iter().map(|(_, o)| o).collect();
        let truth = truth_state(&gt, 5).unwrap();
        let center = cfcal_core::prior::constrain(&vec![0.0; layout.dim()], &layout).unwrap();
        let lp_truth = log_posterior(&truth, &hp, &data, LikelihoodMode::Joint).unwrap();
        let lp_center = log_posterior(&center, &hp, &data, LikelihoodMode::Joint).unwrap();
        if lp_truth > lp_center {
            wins += 1;
        }
    }
    assert!(wins >= 95, "truth won only {wins}/100");
}

#[test]
fn synthetic_25hz_file_loads_with_expected_shape() {
    // 25 Hz, 1500 rows -> dt = 0.04, T = 1500 after the CSV round trip
    let mut gt = single_driver_truth(3, 0.05, 2);
    gt.sigma_v = 0.01;
    gt.sigma_x = 0.01;
    let (_, observed) = generate(&gt, 1499.0 * 0.04, 0.04).unwrap().remove(0);
    assert_eq!(observed.len(), 1500);
    let mut buf = Vec::new();
    write_trajectories_csv(&mut buf, std::slice::from_ref(&observed)).unwrap();
    let loaded = load_trajectories_from(buf.as_slice(), &CsvSchema::default()).unwrap();
    assert_eq!(loaded.len(), 1);
    assert_eq!(loaded[0].len(), 1500);
    assert!((loaded[0].dt - 0.04).abs() < 1e-9);
    // and the 5 Hz downsample keeps every 5th sample
    let down = cfcal_core::trajectory::downsample(&loaded[0], 5.0).unwrap();
    assert_eq!(down.len(), 300);
    assert!((down.dt - 0.2).abs() < 1e-9);
}

#[test]
fn joint_loglik_finite_at_truth_scale() {
    // guards the covariance conditioning at realistic parameter scales
    let gt = recovery_ground_truth(3, 5);
    let pairs = generate(&gt, 30.0, 0.2).unwrap();
    for (d, (_, observed)) in pairs.iter().enumerate() {
        let m: &DriverModel = &gt.drivers[d];
        let noise = ObservationNoise::new(5e-4, 5e-4).unwrap();
        let ll = joint_loglik(observed, m, &noise).unwrap();
        assert!(ll.is_finite(), "driver {d}: {ll}");
    }
}
