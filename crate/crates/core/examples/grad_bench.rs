use cfcal_core::likelihood::LikelihoodMode;
use cfcal_core::prior::{unconstrain, HyperParams, PosteriorTarget};
use cfcal_core::sampler::LogDensity;
use cfcal_core::synth::{generate, recovery_ground_truth, truth_state};
use std::time::Instant;

fn main() {
    let gt = recovery_ground_truth(20, 0);
    let pairs = generate(&gt, 60.0, 0.2).unwrap();
    let data: Vec<_> = pairs.into_iter().map(|(_, o)| o).collect();
    let hp = HyperParams { lambda_eta: 50.0, lambda_v: 50.0, lambda_x: 50.0, ..HyperParams::default() };
    let target = PosteriorTarget::new(&data, &hp, 5, LikelihoodMode::Joint).unwrap();
    let dim = target.layout().dim();
    println!("dim = {dim}");
    let u = unconstrain(&truth_state(&gt, 5).unwrap()).unwrap();
    let mut grad = vec![0.0; dim];
    // warm the tape
    let lp = target.grad_logp(&u, &mut grad);
    println!("logp at truth state = {lp:.1}");
    let t0 = Instant::now();
    let n = 200;
    let mut acc = 0.0;
    for i in 0..n {
        let mut uu = u.clone();
        uu[0] += 1e-9 * i as f64;
        acc += target.grad_logp(&uu, &mut grad);
    }
    let dt = t0.elapsed().as_secs_f64() / n as f64;
    println!("grad eval: {:.2} ms (checksum {acc:.1})", dt * 1e3);
    let t0 = Instant::now();
    for i in 0..n {
        let mut uu = u.clone();
        uu[0] += 1e-9 * i as f64;
        acc += target.logp(&uu);
    }
    println!("value eval: {:.3} ms", t0.elapsed().as_secs_f64() / n as f64 * 1e3);
}
