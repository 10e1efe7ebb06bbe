use cfcal_core::diagnostics::{diagnostics, posterior_summary};
use cfcal_core::likelihood::LikelihoodMode;
use cfcal_core::sampler::{calibrate, SamplerConfig};
use cfcal_core::synth::{generate, recovery_ground_truth, table1_population_truth};
use cfcal_core::prior::HyperParams;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let warmup: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let draws: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(400);
    let chains: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2);
    let gt = recovery_ground_truth(20, 0);
    let pairs = generate(&gt, 60.0, 0.2).unwrap();
    let data: Vec<_> = pairs.into_iter().map(|(_, o)| o).collect();
    let hp = HyperParams { lambda_eta: 50.0, lambda_v: 50.0, lambda_x: 50.0, ..HyperParams::default() };
    let cfg = SamplerConfig { chains, warmup, draws, seed: 1, ..SamplerConfig::default() };
    let t0 = Instant::now();
    let out = calibrate(&data, &hp, 5, LikelihoodMode::Joint, &cfg).unwrap();
    println!("calibration took {:.1} s; warmup divergences {}", t0.elapsed().as_secs_f64(), out.divergences_warmup);
    println!("post-warmup divergent: {}", out.divergent.iter().flatten().filter(|d| **d).count());
    println!("step sizes: {:?}", out.step_sizes);
    let names = out.names();
    let summary = posterior_summary(&out, &names);
    let (idm_t, ar_t) = table1_population_truth();
    let truth = idm_t.as_array();
    for (i, nm) in ["v0", "s0", "T", "alpha", "beta"].iter().enumerate() {
        let row = summary.iter().find(|r| r.name == *nm).unwrap();
        let ln_err = (row.mean.ln() - truth[i].ln()).abs() / truth[i].ln().abs();
        println!("{nm:6} mean {:8.3} truth {:8.3}  ln-rel-err {:.3}", row.mean, truth[i], ln_err);
    }
    let se_row = summary.iter().find(|r| r.name == "sigma_eta").unwrap();
    println!("sigma_eta mean {:.4} truth {:.4} rel {:.3}", se_row.mean, 0.016, (se_row.mean - 0.016f64).abs() / 0.016);
    for k in 1..=5 {
        let row = summary.iter().find(|r| r.name == format!("rho_{k}")).unwrap();
        println!("rho_{k} mean {:8.3} truth {:8.3}", row.mean, ar_t.rho[k - 1]);
    }
    let diags = diagnostics(&out);
    let worst = diags.iter().filter_map(|d| d.rhat).fold(0.0f64, f64::max);
    let worst_name = diags.iter().filter(|d| d.rhat == Some(worst)).map(|d| d.name.clone()).next();
    println!("worst rhat {worst:.3} ({worst_name:?})");
    let min_ess = diags.iter().filter_map(|d| d.ess).fold(f64::INFINITY, f64::min);
    println!("min ess {min_ess:.0}");
    println!("sigma_v mean {:.4}", summary.iter().find(|r| r.name == "sigma_v").unwrap().mean);
    println!("sigma_x mean {:.4}", summary.iter().find(|r| r.name == "sigma_x").unwrap().mean);
}
