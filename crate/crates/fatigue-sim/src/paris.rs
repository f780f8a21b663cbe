//! Crack-growth parameter sampling and lifetime integration.
//!
//! Growth follows da/dN = C·(ΔK)^m with ΔK = σ_max·√(πa) expressed in
//! MPa·√m (geometry factor 1), integrated with explicit 1-cycle Euler steps.
//! The closed-form Paris integral is provided as the analytic benchmark for
//! the integrator.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::MaterialConfig;
use crate::FatigueError;

/// Upper bound on integrated cycles; a draw that survives this long signals
/// a configuration far outside the intended regime rather than a structure
/// worth simulating.
pub const MAX_CYCLES: u64 = 50_000_000;

/// How many rejected draws to tolerate per structure before giving up.
const MAX_RESAMPLES_PER_DRAW: u64 = 10_000;

/// Material parameters of a single structure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrackParams {
    /// Initial crack length (m).
    pub a0: f64,
    /// Paris exponent.
    pub m: f64,
    /// Paris coefficient, (m/cycle)/(MPa·√m)^m.
    pub c: f64,
    /// Remote stress amplitude (Pa).
    pub sigma_max: f64,
}

/// Log-scale lognormal parameters derived from a config.
#[derive(Clone, Copy, Debug)]
pub struct LogCParams {
    pub mu_ln_c: f64,
    pub sigma_ln_c: f64,
}

/// Derives the lognormal parameters of C: the spread comes from moment
/// matching the mean/std ratio, σ²_lnC = ln(1 + (c_std/c_mean)²), while
/// `c_mean` anchors the geometric mean (μ_lnC = ln c_mean).
pub fn log_c_params(config: &MaterialConfig) -> LogCParams {
    let ratio = config.c_std / config.c_mean;
    let sigma_ln_c = (1.0 + ratio * ratio).ln().sqrt();
    LogCParams { mu_ln_c: config.c_mean.ln(), sigma_ln_c }
}

/// Draws one structure's parameters.
///
/// (m, lnC) are jointly Gaussian with correlation `rho_m_logc`, realized via
/// the Cholesky factor of the 2×2 correlation: lnC's shared component rides
/// on m's standard normal. σ_max is uniform on its range. a0 is Gaussian,
/// redrawn until it clears `a0_min`.
pub fn sample_crack_params(
    rng: &mut impl Rng,
    config: &MaterialConfig,
) -> Result<CrackParams, FatigueError> {
    let log_c = log_c_params(config);
    let rho = config.rho_m_logc;

    let z1: f64 = standard_normal(rng);
    let z2: f64 = standard_normal(rng);
    let m = config.m_mean + config.m_std * z1;
    let ln_c = log_c.mu_ln_c + log_c.sigma_ln_c * (rho * z1 + (1.0 - rho * rho).sqrt() * z2);
    let c = ln_c.exp();

    let sigma_max = rng.random_range(config.sigma_max_range.0..config.sigma_max_range.1);

    let a0_dist = Normal::new(config.a0_mean, config.a0_std)
        .map_err(|_| FatigueError::InvalidConfig { what: "a0 distribution".to_string() })?;
    let mut a0 = a0_dist.sample(rng);
    let mut tries = 0u64;
    while a0 < config.a0_min || a0 <= 0.0 {
        tries += 1;
        if tries > MAX_RESAMPLES_PER_DRAW {
            return Err(FatigueError::ResampleLimit { what: "a0".to_string() });
        }
        a0 = a0_dist.sample(rng);
    }

    Ok(CrackParams { a0, m, c, sigma_max })
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    // Normal::new(0,1) is infallible; unwrap via expect to keep call sites terse.
    Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
}

/// Critical crack size a_crit = (1/π)·(K_Ic/σ_max)² under K = σ√(πa).
pub fn critical_crack_size(sigma_max: f64, k_ic: f64) -> f64 {
    let ratio = k_ic / sigma_max;
    ratio * ratio / std::f64::consts::PI
}

/// Result of integrating one crack to failure.
#[derive(Clone, Debug, PartialEq)]
pub struct ParisIntegration {
    /// First cycle at which the crack reaches critical size (0 when the
    /// initial crack is already critical).
    pub failure_cycles: u64,
    /// Crack length at every `delta_k`-th cycle, i.e. at each measurement.
    pub crack_sizes: Vec<f64>,
}

/// Integrates da/dN = C·(ΔK)^m one cycle at a time, recording the crack
/// length at every `delta_k` cycles, and stopping at the first cycle where
/// the crack reaches `a_crit`.
pub fn integrate_paris(
    params: &CrackParams,
    k_ic: f64,
    delta_k: u64,
) -> Result<ParisIntegration, FatigueError> {
    debug_assert!(delta_k >= 1);
    let a_crit = critical_crack_size(params.sigma_max, k_ic);
    if params.a0 >= a_crit {
        return Ok(ParisIntegration { failure_cycles: 0, crack_sizes: Vec::new() });
    }
    // (ΔK)^m = (σ√(πa))^m = σ^m·π^(m/2)·a^(m/2) with σ in MPa: fold the
    // a-independent factor into one coefficient.
    let sigma_mpa = params.sigma_max / 1.0e6;
    let growth_coeff = params.c * sigma_mpa.powf(params.m) * std::f64::consts::PI.powf(params.m / 2.0);
    let half_m = params.m / 2.0;

    let mut a = params.a0;
    let mut crack_sizes = Vec::new();
    let mut cycle: u64 = 0;
    loop {
        cycle += 1;
        if cycle > MAX_CYCLES {
            return Err(FatigueError::CycleLimit { max_cycles: MAX_CYCLES });
        }
        a += growth_coeff * a.powf(half_m);
        if cycle % delta_k == 0 {
            crack_sizes.push(a);
        }
        if a >= a_crit {
            return Ok(ParisIntegration { failure_cycles: cycle, crack_sizes });
        }
    }
}

/// Analytic Paris lifetime
/// N_f = (a0^(1-m/2) − a_crit^(1-m/2)) / (C·σ^m·π^(m/2)·(m/2 − 1)),
/// the integrator's closed-form benchmark. Requires m > 2.
pub fn closed_form_lifetime(params: &CrackParams, k_ic: f64) -> f64 {
    let a_crit = critical_crack_size(params.sigma_max, k_ic);
    if params.a0 >= a_crit {
        return 0.0;
    }
    let sigma_mpa = params.sigma_max / 1.0e6;
    let exponent = 1.0 - params.m / 2.0;
    let numerator = params.a0.powf(exponent) - a_crit.powf(exponent);
    let denominator = params.c
        * sigma_mpa.powf(params.m)
        * std::f64::consts::PI.powf(params.m / 2.0)
        * (params.m / 2.0 - 1.0);
    numerator / denominator
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Mean parameters of the default config.
    fn mean_params() -> CrackParams {
        CrackParams { a0: 5.0e-4, m: 3.4, c: 1.0e-10, sigma_max: 80.0e6 }
    }

    #[test]
    fn critical_size_closed_form() {
        // (1/π)(19.7/80)² with both in MPa units
        let a_crit = critical_crack_size(80.0e6, 19.7e6);
        assert!((a_crit - 0.01930201308266677).abs() < 1e-15, "got {a_crit}");
    }

    #[test]
    fn critical_size_algebraic_identity() {
        // K_Ic = σ·√π makes a_crit exactly 1 m.
        let sigma = 42.0e6;
        let k_ic = sigma * std::f64::consts::PI.sqrt();
        assert!((critical_crack_size(sigma, k_ic) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn critical_size_quadratic_scaling() {
        let base = critical_crack_size(80.0e6, 19.7e6);
        let doubled = critical_crack_size(160.0e6, 19.7e6);
        assert!((base / doubled - 4.0).abs() < 1e-12);
    }

    #[test]
    fn euler_lifetime_matches_closed_form_at_mean_parameters() {
        let params = mean_params();
        let analytic = closed_form_lifetime(&params, 19.7e6);
        // Frozen oracle value for these parameters.
        assert!((analytic - 130_293.85).abs() < 1.0, "analytic lifetime moved: {analytic}");
        let integration = integrate_paris(&params, 19.7e6, 500).unwrap();
        let relative = (integration.failure_cycles as f64 - analytic).abs() / analytic;
        assert!(relative < 0.02, "Euler {} vs analytic {analytic}", integration.failure_cycles);
        assert_eq!(integration.crack_sizes.len() as u64, integration.failure_cycles / 500);
    }

    #[test]
    fn immediate_failure_when_initial_crack_is_critical() {
        let mut params = mean_params();
        params.a0 = critical_crack_size(params.sigma_max, 19.7e6);
        let integration = integrate_paris(&params, 19.7e6, 500).unwrap();
        assert_eq!(integration.failure_cycles, 0);
        assert!(integration.crack_sizes.is_empty());
        assert_eq!(closed_form_lifetime(&params, 19.7e6), 0.0);
    }

    #[test]
    fn crack_growth_is_strictly_increasing() {
        let integration = integrate_paris(&mean_params(), 19.7e6, 500).unwrap();
        for pair in integration.crack_sizes.windows(2) {
            assert!(pair[1] > pair[0]);
        }
        assert!(integration.crack_sizes[0] > mean_params().a0);
    }

    #[test]
    fn degenerate_a0_distribution_returns_mean_exactly() {
        let mut config = MaterialConfig::default();
        config.a0_std = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = sample_crack_params(&mut rng, &config).unwrap();
        assert_eq!(params.a0, 5.0e-4);
    }

    #[test]
    fn derived_log_c_parameters() {
        let config = MaterialConfig::default();
        let log_c = log_c_params(&config);
        // σ_lnC = sqrt(ln 1.25); μ_lnC anchors the geometric mean at c_mean.
        assert!((log_c.sigma_ln_c - 0.47238072707743883).abs() < 1e-15);
        assert!((log_c.mu_ln_c - (-23.025850929940457)).abs() < 1e-12);
    }

    #[test]
    fn m_log_c_correlation_matches_target() {
        let config = MaterialConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut ms = Vec::with_capacity(n);
        let mut log_cs = Vec::with_capacity(n);
        for _ in 0..n {
            let p = sample_crack_params(&mut rng, &config).unwrap();
            ms.push(p.m);
            log_cs.push(p.c.log10());
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mm, mc) = (mean(&ms), mean(&log_cs));
        let mut cov = 0.0;
        let mut var_m = 0.0;
        let mut var_c = 0.0;
        for i in 0..n {
            cov += (ms[i] - mm) * (log_cs[i] - mc);
            var_m += (ms[i] - mm) * (ms[i] - mm);
            var_c += (log_cs[i] - mc) * (log_cs[i] - mc);
        }
        let corr = cov / (var_m.sqrt() * var_c.sqrt());
        assert!((corr - (-0.996)).abs() < 0.01, "sample correlation {corr}");
    }

    #[test]
    fn a0_draws_respect_the_floor() {
        let config = MaterialConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let p = sample_crack_params(&mut rng, &config).unwrap();
            assert!(p.a0 >= config.a0_min);
        }
    }

    #[test]
    fn cycle_limit_guards_against_runaway_configs() {
        // Microscopic growth coefficient: the crack would outlive the cap.
        let params = CrackParams { a0: 5.0e-4, m: 3.4, c: 1.0e-16, sigma_max: 80.0e6 };
        let err = integrate_paris(&params, 19.7e6, 500).unwrap_err();
        assert!(matches!(err, FatigueError::CycleLimit { .. }));
    }
}
