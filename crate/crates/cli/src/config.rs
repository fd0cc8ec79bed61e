//! Run configuration: a versioned TOML document, or the `config` field of a
//! JSON report written by an earlier run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bloch_dos::fibre::Convention;
use bloch_dos::lattice::Lattice;
use bloch_dos::potential::{CoefficientRecord, Potential};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CommandName {
    Bands,
    Ids,
    Window,
    Fraction,
    VerifyDecay,
    VerifyGradient,
}

impl CommandName {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandName::Bands => "bands",
            CommandName::Ids => "ids",
            CommandName::Window => "window",
            CommandName::Fraction => "fraction",
            CommandName::VerifyDecay => "verify-decay",
            CommandName::VerifyGradient => "verify-gradient",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<CommandName>,
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub potential: PotentialConfig,
    #[serde(default)]
    pub params: Params,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    /// Period vectors as rows, flattened row-major.
    pub basis: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub records: Vec<CoefficientRecord>,
    /// Shorthand for `amplitude * sum_i 2 cos(<g_i, x>)` over the listed
    /// dual generators; added to `records`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cosine: Option<CosineConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineConfig {
    pub amplitude: f64,
    pub axes: Vec<usize>,
}

/// A scalar or a list in the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(x) => vec![*x],
            OneOrMany::Many(xs) => xs.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<OneOrMany>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convention: Option<Convention>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kpoints: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bands: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<OneOrMany>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Fill the `wall_time_ms` column. Off by default so that repeated runs
    /// produce identical files.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub record_wall_time: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let config: RunConfig = if is_json {
            let mut doc: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let embedded = doc
                .get_mut("config")
                .map(serde_json::Value::take)
                .ok_or_else(|| CliError::Config(format!("{}: report has no `config` field", path.display())))?;
            serde_json::from_value(embedded).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        if config.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        Ok(config)
    }

    pub fn lattice(&self) -> Result<Lattice, CliError> {
        Ok(Lattice::from_row_major(&self.lattice.basis)?)
    }

    pub fn potential(&self, lattice: &Lattice) -> Result<Potential, CliError> {
        let mut coeffs: BTreeMap<Vec<i64>, Complex64> = BTreeMap::new();
        for r in &self.potential.records {
            *coeffs.entry(r.n.clone()).or_default() += Complex64::new(r.re, r.im);
        }
        if let Some(c) = &self.potential.cosine {
            let cos = Potential::cosine_sum(lattice, c.amplitude, &c.axes)?;
            for (n, v) in cos.coefficients() {
                *coeffs.entry(n.clone()).or_default() += v;
            }
        }
        Ok(Potential::new(lattice, coeffs)?)
    }
}

pub fn require<T: Clone>(value: &Option<T>, name: &str, command: CommandName) -> Result<T, CliError> {
    value
        .clone()
        .ok_or_else(|| CliError::Config(format!("`params.{name}` is required for `{}`", command.as_str())))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
schema_version = 1

[lattice]
basis = [6.283185307179586, 0.0, 0.0, 6.283185307179586]

[potential]
cosine = { amplitude = 1.0, axes = [0, 1] }

[params]
lambda = [60.0, 80.0]
epsilon = 0.5
grid = 16
"#;

    #[test]
    fn parses_and_round_trips_through_json() {
        let c: RunConfig = toml::from_str(SAMPLE).unwrap();
        assert_eq!(c.params.lambda.as_ref().unwrap().values(), vec![60.0, 80.0]);
        let json = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        let l = c.lattice().unwrap();
        assert!((c.potential(&l).unwrap().sup_norm_upper() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = SAMPLE.replace("grid = 16", "grid = 16\ngird = 3");
        assert!(toml::from_str::<RunConfig>(&bad).is_err());
    }
}
