//! Generation configuration: material constants, parameter distributions,
//! virtual gauge layout, and sampling cadence.

use serde::{Deserialize, Serialize};

use crate::FatigueError;

/// One virtual strain gauge: position in the plate frame (metres, crack grows
/// along +x from the origin) and measurement orientation in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeSpec {
    pub x: f64,
    pub y: f64,
    pub angle: f64,
}

/// Everything needed to synthesize a population of run-to-failure sequences.
/// Units are SI throughout (Pa, m, cycles) except `c_mean`/`c_std`, which are
/// crack-growth coefficients against a stress-intensity range expressed in
/// MPa·√m — the convention under which their magnitudes are quoted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialConfig {
    /// Young's modulus E (Pa).
    pub youngs_modulus: f64,
    /// Poisson's ratio ν.
    pub poisson_ratio: f64,
    /// Fracture toughness K_Ic (Pa·√m). Failure when K reaches this.
    pub fracture_toughness: f64,
    /// Per-structure maximum remote stress σ_max ~ Uniform(lo, hi), in Pa.
    pub sigma_max_range: (f64, f64),
    /// Initial crack length distribution: Normal(a0_mean, a0_std), metres.
    pub a0_mean: f64,
    pub a0_std: f64,
    /// Draws below this are rejected and redrawn (minimum equivalent initial
    /// flaw size). Keeps the lifetime distribution's a0^(1-m/2) factor
    /// bounded; set to ~0 to recover bare positivity truncation.
    pub a0_min: f64,
    /// Crack-growth exponent distribution: Normal(m_mean, m_std).
    pub m_mean: f64,
    pub m_std: f64,
    /// Crack-growth coefficient scale. `c_mean` is the geometric mean of the
    /// lognormal C; its log-scale spread is derived from the mean/std ratio
    /// by moment matching: σ²_lnC = ln(1 + (c_std/c_mean)²).
    pub c_mean: f64,
    pub c_std: f64,
    /// Correlation between m and log C (applied on the log scale, where it is
    /// base-invariant).
    pub rho_m_logc: f64,
    /// Virtual gauges; one strain channel per gauge.
    pub gauges: Vec<GaugeSpec>,
    /// Cycles between successive strain measurements (Δk).
    pub delta_k: u64,
    /// Base RNG seed; each structure index derives an independent substream.
    pub rng_seed: u64,
    /// Additive Gaussian measurement noise (strain units); 0 disables.
    pub noise_std: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        MaterialConfig {
            youngs_modulus: 71.7e9,
            poisson_ratio: 0.33,
            fracture_toughness: 19.7e6,
            sigma_max_range: (75.0e6, 85.0e6),
            a0_mean: 5.0e-4,
            a0_std: 2.5e-4,
            a0_min: 2.0e-4,
            m_mean: 3.4,
            m_std: 0.25,
            c_mean: 1.0e-10,
            c_std: 5.0e-11,
            rho_m_logc: -0.996,
            gauges: vec![
                GaugeSpec { x: 0.003, y: 0.014, angle: 45.0 },
                GaugeSpec { x: 0.014, y: 0.014, angle: 45.0 },
                GaugeSpec { x: 0.025, y: 0.014, angle: 45.0 },
            ],
            delta_k: 500,
            rng_seed: 0,
            noise_std: 0.0,
        }
    }
}

impl MaterialConfig {
    /// Parses a config from JSON, rejecting unknown keys, and validates it.
    pub fn from_json(text: &str) -> Result<Self, FatigueError> {
        let config: MaterialConfig =
            serde_json::from_str(text).map_err(|source| FatigueError::ConfigParse { source })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), FatigueError> {
        let fail = |what: &str| Err(FatigueError::InvalidConfig { what: what.to_string() });
        if !(self.youngs_modulus > 0.0) {
            return fail("youngs_modulus must be positive");
        }
        if !(self.poisson_ratio > 0.0 && self.poisson_ratio < 0.5) {
            return fail("poisson_ratio must lie in (0, 0.5)");
        }
        if !(self.fracture_toughness > 0.0) {
            return fail("fracture_toughness must be positive");
        }
        if !(self.sigma_max_range.0 > 0.0 && self.sigma_max_range.0 < self.sigma_max_range.1) {
            return fail("sigma_max_range must satisfy 0 < lo < hi");
        }
        if !(self.a0_std >= 0.0) {
            return fail("a0_std must be non-negative");
        }
        if !(self.a0_min >= 0.0) {
            return fail("a0_min must be non-negative");
        }
        if self.a0_std == 0.0 && self.a0_mean < self.a0_min {
            return fail("a0_mean below a0_min with a0_std = 0 can never yield a valid draw");
        }
        if !(self.m_std >= 0.0) {
            return fail("m_std must be non-negative");
        }
        if !(self.c_mean > 0.0) {
            return fail("c_mean must be positive");
        }
        // The derived log-scale spread σ_lnC = sqrt(ln(1 + (c_std/c_mean)²))
        // must come out positive, which requires a positive c_std.
        if !(self.c_std > 0.0) {
            return fail("c_std must be positive (derived sigma_logC would not be)");
        }
        if !(self.rho_m_logc.abs() <= 1.0) {
            return fail("rho_m_logc must lie in [-1, 1]");
        }
        if self.gauges.is_empty() {
            return fail("at least one gauge is required");
        }
        for (i, g) in self.gauges.iter().enumerate() {
            if !(g.angle >= 0.0 && g.angle < 360.0) {
                return Err(FatigueError::InvalidConfig {
                    what: format!("gauge {i} angle {} outside [0, 360)", g.angle),
                });
            }
            if !(g.x.is_finite() && g.y.is_finite()) {
                return Err(FatigueError::InvalidConfig {
                    what: format!("gauge {i} position must be finite"),
                });
            }
        }
        if self.delta_k < 1 {
            return fail("delta_k must be at least 1 cycle");
        }
        if !(self.noise_std >= 0.0) {
            return fail("noise_std must be non-negative");
        }
        Ok(())
    }

    /// Number of strain channels (one per gauge).
    pub fn n_gauges(&self) -> usize {
        self.gauges.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        MaterialConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = MaterialConfig::from_json(r#"{"delta_k": 500, "surprise": 1}"#).unwrap_err();
        assert!(err.to_string().contains("surprise"), "got: {err}");
    }

    #[test]
    fn partial_json_fills_defaults() {
        let config = MaterialConfig::from_json(r#"{"rng_seed": 7}"#).unwrap();
        assert_eq!(config.rng_seed, 7);
        assert_eq!(config.delta_k, 500);
        assert_eq!(config.gauges.len(), 3);
    }

    #[test]
    fn zero_c_std_is_rejected() {
        let mut config = MaterialConfig::default();
        config.c_std = 0.0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn bad_correlation_is_rejected() {
        let mut config = MaterialConfig::default();
        config.rho_m_logc = -1.5;
        assert!(config.validate().is_err());
    }

    #[test]
    fn config_json_round_trips() {
        let config = MaterialConfig::default();
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back = MaterialConfig::from_json(&text).unwrap();
        assert_eq!(config, back);
    }
}
