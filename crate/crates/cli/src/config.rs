//! Run configuration: one JSON document, with command-line overrides for
//! seed, output directory, and the harmonic cutoff. Precedence is
//! flags > config file > built-in defaults; the hash recorded in outputs is
//! taken over the resolved configuration.

use noisespec_core::{ModelFamily, NoiseSpectrum, SequenceFamily, SpinMode, WindowPolicy};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OmegaGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum GridSpacing {
    Linear,
    Log,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TauGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
    #[serde(default = "default_spacing")]
    pub spacing: GridSpacing,
}

fn default_spacing() -> GridSpacing {
    GridSpacing::Log
}

impl TauGrid {
    pub fn values(&self) -> Result<Vec<f64>, String> {
        if !(self.min > 0.0 && self.max > self.min) || self.points < 1 {
            return Err("tau_grid needs 0 < min < max and at least one point".into());
        }
        if self.points == 1 {
            return Ok(vec![self.min]);
        }
        let n = self.points;
        Ok((0..n)
            .map(|i| {
                let f = i as f64 / (n - 1) as f64;
                match self.spacing {
                    GridSpacing::Linear => self.min + (self.max - self.min) * f,
                    GridSpacing::Log => self.min * (self.max / self.min).powf(f),
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub sigma2: f64,
    pub tau_c: f64,
    pub dt: f64,
    pub n_traj: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub model: ModelFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harmonics: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_starts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rel_residual: Option<f64>,
}

/// The configuration document. Every field is optional; each subcommand
/// validates the fields it needs before any computation starts.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<NoiseSpectrum>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spin_bath: Option<Vec<SpinMode>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<SequenceFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_grid: Option<OmegaGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_grid: Option<TauGrid>,
    /// Shortest realizable pulse spacing; sets the upper frequency bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulse_duration: Option<f64>,
    /// Echo decay time for the lower frequency bound; derived from the
    /// spectrum (2/S(0)) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2_se: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McConfig>,
    /// Sequences for the Monte Carlo validation suite.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_suite: Option<Vec<SequenceFamily>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
    /// Absolute tolerance on decay exponents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quad_abs_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability_rel_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

/// Configuration after applying flag overrides; this is what gets hashed.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub config: RunConfig,
    pub seed: u64,
    pub harmonics: usize,
    pub out_dir: String,
}

impl Resolved {
    /// Hash of everything that can influence results; the output directory
    /// stays out so relocated reruns compare byte-identical.
    pub fn hash_hex(&self) -> String {
        #[derive(Serialize)]
        struct HashView<'a> {
            config: &'a RunConfig,
            seed: u64,
            harmonics: usize,
        }
        let mut cfg = self.config.clone();
        cfg.out_dir = None;
        let view = HashView {
            config: &cfg,
            seed: self.seed,
            harmonics: self.harmonics,
        };
        let canon = serde_json::to_string(&view).expect("config serializes");
        format!("{:016x}", fnv1a64(canon.as_bytes()))
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
