use crate::args::ModelSourceArgs;
use crate::UsageError;
use anyhow::{bail, Context, Result};
use cfcal_core::ar::ArCoefficients;
use cfcal_core::idm::IdmParams;
use cfcal_core::likelihood::DriverModel;
use cfcal_core::prior::HierarchyState;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Parse "a,b,c" into floats.
pub fn parse_floats(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad {what} entry '{s}'")))
        .collect()
}

/// Resolved simulation models.
pub enum ResolvedSource {
    Fixed(DriverModel),
    Posterior { states: Vec<HierarchyState>, driver_level: bool, sigma_rho: f64 },
}

impl ResolvedSource {
    pub fn resolve(args: &ModelSourceArgs, sigma_rho: f64) -> Result<Self> {
        match (&args.posterior, &args.theta) {
            (Some(_), Some(_)) => {
                bail!(UsageError("--posterior conflicts with --theta".into()))
            }
            (None, None) => bail!(UsageError("need --posterior or --theta".into())),
            (None, Some(theta)) => {
                let th = parse_floats(theta, "theta")?;
                if th.len() != 5 {
                    bail!(UsageError("--theta needs exactly 5 values".into()));
                }
                let idm = IdmParams::from_array([th[0], th[1], th[2], th[3], th[4]])?;
                let rho = match &args.rho {
                    Some(r) => parse_floats(r, "rho")?,
                    None => vec![],
                };
                let ar = ArCoefficients::new(rho, args.sigma_eta)?;
                Ok(ResolvedSource::Fixed(DriverModel::new(idm, ar)))
            }
            (Some(path), None) => {
                let (_, states) = crate::posterior_io::read_draws_csv(path)?;
                let driver_level = match args.draw_mode.as_str() {
                    "population" => false,
                    "driver" => true,
                    other => bail!(UsageError(format!(
                        "unknown --draw-mode '{other}' (population|driver)"
                    ))),
                };
                Ok(ResolvedSource::Posterior { states, driver_level, sigma_rho })
            }
        }
    }

    /// Draw `n` vehicle models deterministically from the source.
    pub fn sample_models(&self, n: usize, seed: u64) -> Result<Vec<DriverModel>> {
        match self {
            ResolvedSource::Fixed(m) => Ok(vec![m.clone(); n]),
            ResolvedSource::Posterior { states, driver_level, sigma_rho } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(u64::MAX - 1); // reserved stream for model draws
                let normal = Normal::new(0.0, 1.0).unwrap();
                let mut out = Vec::with_capacity(n);
                for _ in 0..n {
                    let state = &states[rng.random_range(0..states.len())];
                    if *driver_level {
                        let d = rng.random_range(0..state.drivers.len());
                        out.push(state.driver_model(d)?);
                    } else {
                        // generate a fresh driver from the drawn hierarchy
                        let chol = state.chol_corr;
                        let z: Vec<f64> = (0..5).map(|_| normal.sample(&mut rng)).collect();
                        let mut theta = [0.0; 5];
                        for i in 0..5 {
                            let mut w = 0.0;
                            for j in 0..=i {
                                w += chol[i][j] * z[j];
                            }
                            theta[i] = (state.log_theta_pop[i] + state.sigma0[i] * w).exp();
                        }
                        let rho: Vec<f64> = state
                            .rho_pop
                            .iter()
                            .map(|r| r + sigma_rho * normal.sample(&mut rng))
                            .collect();
                        out.push(DriverModel::new(
                            IdmParams::from_array(theta)?,
                            ArCoefficients::new(rho, state.sigma_eta)?,
                        ));
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Parse a leader profile flag: "constant:V" or "sawtooth:LO:HI:PERIOD".
pub fn parse_leader_profile(text: &str) -> Result<cfcal_core::synth::LeaderProfile> {
    use cfcal_core::synth::LeaderProfile;
    let parts: Vec<&str> = text.split(':').collect();
    let parse = |s: &str| -> Result<f64> {
        s.parse::<f64>().with_context(|| format!("bad number '{s}' in leader profile"))
    };
    match parts.as_slice() {
        ["constant", v] => Ok(LeaderProfile::Constant { v: parse(v)? }),
        ["sawtooth", lo, hi, period] => Ok(LeaderProfile::Sawtooth {
            lo: parse(lo)?,
            hi: parse(hi)?,
            period: parse(period)?,
        }),
        _ => bail!(UsageError(format!(
            "leader profile '{text}' is not constant:V or sawtooth:LO:HI:PERIOD"
        ))),
    }
}
