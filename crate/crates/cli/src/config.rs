use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use otstab_core::constructions::CellInstanceDocument;
use otstab_core::stability::{log_grid, MIN_FIT_POINTS, SMALL_THETA_SAMPLES, DEFAULT_SAMPLES};
use otstab_core::{Budget, CellInstance, Experiment, Family};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::Failure;

const SMALL_THETA_FACTOR: usize = SMALL_THETA_SAMPLES / DEFAULT_SAMPLES;

/// Parameter grid of a sweep: rotation angles or cell indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GridSpec {
    Values { values: Vec<f64> },
    Log { lo: f64, hi: f64, points: usize },
    Indices { first: usize, last: usize },
}

impl GridSpec {
    pub fn points(&self) -> anyhow::Result<Vec<f64>> {
        match self {
            GridSpec::Values { values } => Ok(values.clone()),
            GridSpec::Log { lo, hi, points } => Ok(log_grid(*lo, *hi, *points)?),
            GridSpec::Indices { first, last } => {
                if first > last || *first == 0 {
                    bail!("index range {first}..={last} is empty or starts below 1");
                }
                Ok((*first..=*last).map(|i| i as f64).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WitnessConfig {
    pub c: f64,
    pub alpha: f64,
    /// Defaults to the experiment exponent.
    #[serde(default)]
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdotConfig {
    #[serde(default = "default_sdot_samples")]
    pub training_samples: usize,
    #[serde(default = "default_sdot_samples")]
    pub validation_samples: usize,
    #[serde(default = "default_min_agreement")]
    pub min_agreement: f64,
    /// Rotation angle of the target pair for angle families.
    #[serde(default = "default_sdot_theta")]
    pub theta: f64,
    /// Perturbed cell index for the cell family; the unperturbed atoms when absent.
    #[serde(default)]
    pub index: Option<usize>,
    /// Also run the semi-discrete comparison as part of `verify-maps`.
    #[serde(default)]
    pub verify: bool,
}

impl Default for SdotConfig {
    fn default() -> Self {
        Self {
            training_samples: default_sdot_samples(),
            validation_samples: default_sdot_samples(),
            min_agreement: default_min_agreement(),
            theta: default_sdot_theta(),
            index: None,
            verify: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_family", serialize_with = "ser_family", deserialize_with = "de_family")]
    pub family: Family,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Number of cells of the generated instance; ignored when `instance` is set.
    #[serde(default = "default_cells")]
    pub cells: usize,
    /// Cell instance document to load instead of generating one.
    #[serde(default)]
    pub instance: Option<PathBuf>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Budget for angles at or below 1e-5; ten times `samples` when absent.
    #[serde(default)]
    pub small_theta_samples: Option<usize>,
    #[serde(default = "default_certificate_samples")]
    pub certificate_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub witness: Option<WitnessConfig>,
    #[serde(default)]
    pub sdot: SdotConfig,
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
}

fn default_family() -> Family {
    Family::Rotating
}
fn default_d() -> usize {
    2
}
fn default_radius() -> f64 {
    2.0
}
fn default_delta() -> f64 {
    0.5
}
fn default_cells() -> usize {
    12
}
fn default_p() -> f64 {
    2.0
}
fn default_alphas() -> Vec<f64> {
    vec![0.4, 0.5]
}
fn default_samples() -> usize {
    DEFAULT_SAMPLES
}
fn default_certificate_samples() -> usize {
    100_000
}
fn default_sdot_samples() -> usize {
    100_000
}
fn default_min_agreement() -> f64 {
    0.995
}
fn default_sdot_theta() -> f64 {
    0.1
}

fn ser_family<S: Serializer>(f: &Family, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(f.as_str())
}

fn de_family<'de, D: Deserializer<'de>>(d: D) -> Result<Family, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

/// Flag values that override scalar config fields.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub family: Option<Family>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub out: Option<PathBuf>,
}

/// A validated configuration with everything it refers to loaded.
pub struct Resolved {
    pub config: ExperimentConfig,
    pub experiment: Experiment,
    pub grid: Vec<f64>,
    pub budget: Budget,
    pub instance_sha256: Option<String>,
    pub config_sha256: String,
}

impl Resolved {
    pub fn out_dir(&self) -> PathBuf {
        self.config.out.clone().unwrap_or_else(|| PathBuf::from("otstab-out"))
    }

    pub fn family(&self) -> Family {
        self.config.family
    }

    pub fn instance(&self) -> Option<&Arc<CellInstance>> {
        self.experiment.cells()
    }
}

pub fn load(path: Option<&Path>, overrides: Overrides) -> Result<Resolved, Failure> {
    let mut config = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display())).map_err(Failure::Config)?;
            serde_json::from_str::<ExperimentConfig>(&text).with_context(|| format!("parsing config {}", p.display())).map_err(Failure::Config)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(f) = overrides.family {
        config.family = f;
    }
    if let Some(s) = overrides.seed {
        config.seed = s;
    }
    if let Some(n) = overrides.samples {
        config.samples = n;
    }
    if overrides.out.is_some() {
        config.out = overrides.out;
    }
    let base = path.and_then(Path::parent).map(Path::to_path_buf).unwrap_or_default();
    resolve(config, &base).map_err(Failure::Config)
}

/// Relative instance paths are taken from the directory of the config file.
fn resolve(config: ExperimentConfig, base: &Path) -> anyhow::Result<Resolved> {
    if !(config.p >= 1.0 && config.p.is_finite()) {
        bail!("exponent p must be a finite number >= 1, got {}", config.p);
    }
    if let Some(a) = config.alphas.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
        bail!("every alpha must be positive and finite, got {a}");
    }
    if config.samples < 2 || config.certificate_samples < 2 {
        bail!("sample budgets must be at least 2");
    }
    let small = match config.small_theta_samples {
        Some(n) if n < 2 => bail!("small_theta_samples must be at least 2"),
        Some(n) => n,
        None => config.samples.saturating_mul(SMALL_THETA_FACTOR),
    };
    let sdot = &config.sdot;
    if sdot.training_samples < 2 || sdot.validation_samples < 2 {
        bail!("sdot sample budgets must be at least 2");
    }
    if !(sdot.min_agreement > 0.0 && sdot.min_agreement <= 1.0) {
        bail!("sdot.min_agreement must lie in (0, 1], got {}", sdot.min_agreement);
    }
    if let Some(w) = &config.witness {
        if !(w.c > 0.0 && w.c.is_finite() && w.alpha > 0.0 && w.alpha.is_finite()) {
            bail!("witness constant and exponent must be positive and finite");
        }
        if let Some(p) = w.p {
            if !(p >= 1.0 && p.is_finite()) {
                bail!("witness exponent p must be >= 1, got {p}");
            }
        }
    }

    let mut instance_sha256 = None;
    let experiment = match config.family {
        Family::Rotating => Experiment::rotating(config.d, config.radius)?,
        Family::PolyBlowup => Experiment::poly_blowup(config.d, config.radius, config.delta)?,
        Family::Control => Experiment::control(config.d, config.radius)?,
        Family::Cell => {
            let inst = match &config.instance {
                Some(path) => {
                    let path = base.join(path);
                    let bytes = fs::read(&path).with_context(|| format!("reading instance {}", path.display()))?;
                    instance_sha256 = Some(hex::encode(Sha256::digest(&bytes)));
                    load_instance(&bytes, &path)?
                }
                None => CellInstance::choose_sequences(config.cells, config.d)?,
            };
            Experiment::cell(Arc::new(inst))
        }
    };

    let grid = match &config.grid {
        Some(g) => g.points()?,
        None if config.family.is_rotating() => log_grid(1e-8, 1e-2, 7)?,
        None => {
            let n = experiment.cells().map(|c| c.n()).unwrap_or(0);
            (1..=n).map(|i| i as f64).collect()
        }
    };
    if grid.is_empty() {
        bail!("the parameter grid is empty");
    }
    for &t in &grid {
        experiment.check_parameter(t).map_err(|e| anyhow!("{e}"))?;
    }
    if config.family == Family::Cell {
        if let Some(i) = sdot.index {
            experiment.check_parameter(i as f64)?;
        }
    } else if !(sdot.theta.is_finite() && sdot.theta.abs() <= std::f64::consts::FRAC_PI_2) {
        bail!("sdot.theta must satisfy |theta| <= pi/2, got {}", sdot.theta);
    }

    let hashed = ExperimentConfig { instance: None, ..config.clone() };
    let config_sha256 = hex::encode(Sha256::digest(serde_json::to_vec(&hashed)?));
    let budget = Budget { samples: config.samples, small_theta_samples: small };
    Ok(Resolved { config, experiment, grid, budget, instance_sha256, config_sha256 })
}

/// Parse an instance document and reject it unless every construction constraint holds.
pub fn load_instance(bytes: &[u8], path: &Path) -> anyhow::Result<CellInstance> {
    let doc: CellInstanceDocument = serde_json::from_slice(bytes).with_context(|| format!("parsing instance {}", path.display()))?;
    let inst = CellInstance::from_document(doc).with_context(|| format!("instance {}", path.display()))?;
    let validation = inst.validate();
    if let Some(first) = validation.violations().first() {
        bail!("instance {} violates {} constraint(s); first: {first}", path.display(), validation.violations().len());
    }
    Ok(inst)
}

pub fn needs_fit(grid: &[f64]) -> bool {
    grid.len() >= MIN_FIT_POINTS
}
