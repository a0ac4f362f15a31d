//! Run configuration: one structured text (TOML) file per run.

use serde::{Deserialize, Serialize};

use passlab::linalg::Matrix;
use passlab::market::MarketModel;
use passlab::paths::{PathConfig, StepScheme};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub market: Option<MarketSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payoff: Option<PayoffSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc: Option<McSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transform: Option<TransformSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub sigma: Vec<f64>,
    pub rho: Vec<Vec<f64>>,
    pub spot: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffSection {
    /// hinge | power | custom-table
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strike: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power: Option<i32>,
    /// normal | lognormal
    #[serde(default = "default_coordinates")]
    pub coordinates: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<[f64; 2]>>,
}

fn default_coordinates() -> String {
    "normal".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub horizon: f64,
    /// nodes per dimension (passport: [p, x]; symmetric: [z1, z2])
    pub nodes: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z1_lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z2_lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z2_hi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub paths: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default)]
    pub antithetic: bool,
    /// number of equally spaced path checkpoints written by `simulate`
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
}

fn default_scheme() -> String {
    "log-euler".to_string()
}

fn default_checkpoints() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// comparison | convexity | hormander | adjoint-identity | greens
    pub suite: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformSection {
    /// to-lognormal | to-normal
    pub direction: String,
    /// binary surface dump to transform
    pub input: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    /// gbm | index | account
    pub process: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn serialize(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// FNV-1a hash of the canonical serialisation; stamped into artifacts.
    pub fn hash(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for b in self.serialize().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        h
    }

    pub fn require_market(&self) -> Result<MarketModel, ConfigError> {
        let m = self
            .market
            .as_ref()
            .ok_or_else(|| ConfigError("missing [market] section".into()))?;
        let n = m.sigma.len();
        if m.rho.len() != n || m.rho.iter().any(|row| row.len() != n) {
            return Err(ConfigError("rho must be an n x n matrix".into()));
        }
        MarketModel::new(m.sigma.clone(), Matrix::from_rows(&m.rho), m.spot.clone())
            .map_err(|e| ConfigError(e.to_string()))
    }

    pub fn require_grid(&self) -> Result<&GridSection, ConfigError> {
        self.grid
            .as_ref()
            .ok_or_else(|| ConfigError("missing [grid] section".into()))
    }

    pub fn require_mc(&self, horizon: f64) -> Result<PathConfig, ConfigError> {
        let mc = self
            .mc
            .as_ref()
            .ok_or_else(|| ConfigError("missing [mc] section".into()))?;
        let mut cfg = PathConfig::new(horizon, mc.paths, self.seed)
            .map_err(|e| ConfigError(e.to_string()))?;
        if let Some(steps) = mc.steps {
            cfg = cfg.with_steps(steps);
        }
        cfg = match mc.scheme.as_str() {
            "log-euler" => cfg.with_scheme(StepScheme::LogEuler),
            "euler" => cfg.with_scheme(StepScheme::Euler),
            other => return Err(ConfigError(format!("unknown mc scheme '{other}'"))),
        };
        Ok(cfg.with_antithetic(mc.antithetic))
    }

    pub fn strike(&self) -> Result<f64, ConfigError> {
        self.payoff
            .as_ref()
            .and_then(|p| p.strike)
            .ok_or_else(|| ConfigError("payoff.strike is required".into()))
    }

    pub fn check_command(&self, expected: &str) -> Result<(), ConfigError> {
        if self.command != expected {
            return Err(ConfigError(format!(
                "config command '{}' does not match subcommand '{expected}'",
                self.command
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
command = "price-symmetric"
seed = 42

[market]
sigma = [0.2]
rho = [[1.0]]
spot = [1.0]

[payoff]
kind = "hinge"
strike = 1.0
coordinates = "lognormal"

[grid]
horizon = 1.0
nodes = [97, 97]
z1_lo = -3.0
z2_lo = -2.5
z2_hi = 2.5

[mc]
paths = 1000
steps = 64

[output]
dir = "out"
"#;

    #[test]
    fn parse_serialize_roundtrip_is_identity() {
        let cfg = RunConfig::parse(SAMPLE).unwrap();
        let again = RunConfig::parse(&cfg.serialize()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
    }

    #[test]
    fn hash_changes_with_content() {
        let cfg = RunConfig::parse(SAMPLE).unwrap();
        let mut other = cfg.clone();
        other.seed = 43;
        assert_ne!(cfg.hash(), other.hash());
    }

    #[test]
    fn missing_sections_are_reported() {
        let cfg = RunConfig::parse("command = \"simulate\"\nseed = 1\n").unwrap();
        assert!(cfg.require_market().is_err());
        assert!(cfg.require_grid().is_err());
    }

    #[test]
    fn rejects_unknown_fields() {
        assert!(RunConfig::parse("command = \"x\"\nseed = 1\nbogus = 2\n").is_err());
    }
}
