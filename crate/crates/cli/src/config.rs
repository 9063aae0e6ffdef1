//! Declarative experiment configuration: strict TOML (JSON accepted) with
//! every default documented in [`defaults_table`].

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// The experiments the laboratory can reproduce end to end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    BalanceLinear,
    BalanceRelu,
    NoetherContrast,
    StationaryDepth0,
    StationaryDepth1,
    #[serde(rename = "stationary-generalD")]
    StationaryGeneralD,
    SignCoherenceTanh,
    RegimesGrid,
    FluctuationInversion,
    BayesCompare,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExperimentKind::BalanceLinear => "balance-linear",
            ExperimentKind::BalanceRelu => "balance-relu",
            ExperimentKind::NoetherContrast => "noether-contrast",
            ExperimentKind::StationaryDepth0 => "stationary-depth0",
            ExperimentKind::StationaryDepth1 => "stationary-depth1",
            ExperimentKind::StationaryGeneralD => "stationary-generalD",
            ExperimentKind::SignCoherenceTanh => "sign-coherence-tanh",
            ExperimentKind::RegimesGrid => "regimes-grid",
            ExperimentKind::FluctuationInversion => "fluctuation-inversion",
            ExperimentKind::BayesCompare => "bayes-compare",
        };
        f.write_str(s)
    }
}

/// Synthetic dataset specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// `gaussian-linear` (y = kx + noise) or `delta-zero` (y = kx - kc/x).
    #[serde(default = "defaults::dataset_kind")]
    pub kind: DatasetKind,
    #[serde(default = "defaults::one")]
    pub k: f64,
    #[serde(default = "defaults::one")]
    pub sigma: f64,
    /// Offset parameter of the `delta-zero` dataset; ignored otherwise.
    #[serde(default)]
    pub c: f64,
    #[serde(default = "defaults::dataset_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    GaussianLinear,
    DeltaZero,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::GaussianLinear,
            k: 1.0,
            sigma: 1.0,
            c: 0.0,
            n: defaults::dataset_n(),
            seed: 0,
        }
    }
}

/// Stepper specification, mirroring the core stepper configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepperSpec {
    pub eta: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    pub steps: usize,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "defaults::mode")]
    pub mode: ModeSpec,
    #[serde(default = "defaults::record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub noise_scale: f64,
    #[serde(default = "defaults::substeps")]
    pub substeps: usize,
    /// Optional redundant declaration of `T`; must equal `eta / batch_size`.
    #[serde(default)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeSpec {
    Sgd,
    Gd,
    LangevinGd,
    Sde,
    ReducedSde,
}

impl From<ModeSpec> for sgdlab_core::dynamics::Mode {
    fn from(m: ModeSpec) -> Self {
        use sgdlab_core::dynamics::Mode;
        match m {
            ModeSpec::Sgd => Mode::Sgd,
            ModeSpec::Gd => Mode::Gd,
            ModeSpec::LangevinGd => Mode::LangevinGd,
            ModeSpec::Sde => Mode::Sde,
            ModeSpec::ReducedSde => Mode::ReducedSde,
        }
    }
}

/// Closed-form density specification for `analytic-pdf` and `compare`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    #[serde(default = "defaults::density_case")]
    pub case: DensityCaseSpec,
    #[serde(default = "defaults::batch_size")]
    pub depth: usize,
    #[serde(default = "defaults::batch_size")]
    pub width: usize,
    /// Width-to-depth ratio of the infinite-depth limit.
    #[serde(default = "defaults::one")]
    pub ratio: f64,
    pub temperature: f64,
    #[serde(default)]
    pub gamma: f64,
    /// Delta-atom weight at zero.
    #[serde(default)]
    pub z: f64,
    /// Grid for `analytic-pdf`: `[lo, hi, points]`.
    #[serde(default = "defaults::grid")]
    pub grid: (f64, f64, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityCaseSpec {
    Depth0,
    Depth1,
    #[serde(rename = "generalD")]
    GeneralD,
    #[serde(rename = "infiniteD")]
    InfiniteD,
}

impl DensitySpec {
    pub fn to_case(&self) -> sgdlab_core::analytic::DensityCase {
        use sgdlab_core::analytic::DensityCase;
        match self.case {
            DensityCaseSpec::Depth0 => DensityCase::Depth0,
            DensityCaseSpec::Depth1 => DensityCase::Depth1,
            DensityCaseSpec::GeneralD => DensityCase::GeneralD {
                depth: self.depth,
                width: self.width,
            },
            DensityCaseSpec::InfiniteD => DensityCase::InfiniteD {
                width_depth_ratio: self.ratio,
            },
        }
    }
}

/// Top-level experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub stepper: Option<StepperSpec>,
    #[serde(default)]
    pub density: Option<DensitySpec>,
    /// Temperatures for stationary/grid experiments.
    #[serde(default)]
    pub temperatures: Vec<f64>,
    /// Sigma values for the regimes grid.
    #[serde(default)]
    pub sigmas: Vec<f64>,
    /// Number of independent trajectories where an ensemble is run.
    #[serde(default = "defaults::seeds")]
    pub seeds: u64,
    /// Initial `v` for reduced-SDE experiments.
    #[serde(default = "defaults::one")]
    pub v0: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::out")]
    pub out: String,
}

mod defaults {
    use super::*;

    pub fn one() -> f64 {
        1.0
    }
    pub fn dataset_kind() -> DatasetKind {
        DatasetKind::GaussianLinear
    }
    pub fn dataset_n() -> usize {
        2000
    }
    pub fn batch_size() -> usize {
        1
    }
    pub fn mode() -> ModeSpec {
        ModeSpec::Sgd
    }
    pub fn record_every() -> usize {
        1
    }
    pub fn substeps() -> usize {
        1
    }
    pub fn seeds() -> u64 {
        4
    }
    pub fn out() -> String {
        "out".into()
    }
    pub fn density_case() -> DensityCaseSpec {
        DensityCaseSpec::Depth0
    }
    pub fn grid() -> (f64, f64, usize) {
        (-2.0, 4.0, 500)
    }
}

/// One row of the documented defaults table shown by `validate --explain`.
pub fn defaults_table() -> &'static [(&'static str, &'static str)] {
    &[
        ("dataset.kind", "gaussian-linear"),
        ("dataset.k", "1.0"),
        ("dataset.sigma", "1.0"),
        ("dataset.c", "0.0"),
        ("dataset.n", "2000"),
        ("dataset.seed", "0"),
        ("stepper.batch_size", "1"),
        ("stepper.gamma", "0.0"),
        ("stepper.mode", "sgd"),
        ("stepper.record_every", "1"),
        ("stepper.noise_scale", "0.0"),
        ("stepper.substeps", "1"),
        ("density.case", "depth0"),
        ("density.depth", "1"),
        ("density.width", "1"),
        ("density.ratio", "1.0"),
        ("density.gamma", "0.0"),
        ("density.z", "0.0"),
        ("density.grid", "[-2.0, 4.0, 500]"),
        ("temperatures", "[] (experiment-specific fallback)"),
        ("sigmas", "[]"),
        ("seeds", "4"),
        ("v0", "1.0"),
        ("seed", "0"),
        ("out", "\"out\""),
    ]
}

/// Levenshtein distance, used to suggest the nearest valid key or name.
fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Append a "did you mean" hint to strict-parse errors that name an unknown
/// key or variant; the candidates are taken from the parser's own
/// "expected one of" list.
fn with_suggestion(msg: String) -> String {
    let unknown = ["unknown field `", "unknown variant `"]
        .iter()
        .find_map(|pat| {
            let start = msg.find(pat)? + pat.len();
            let end = msg[start..].find('`')? + start;
            Some(msg[start..end].to_string())
        });
    let Some(unknown) = unknown else {
        return msg;
    };
    let Some(list_start) = msg.find("expected one of ") else {
        return msg;
    };
    let candidates: Vec<&str> = msg[list_start..]
        .split('`')
        .skip(1)
        .step_by(2)
        .collect();
    let best = candidates
        .iter()
        .min_by_key(|c| edit_distance(&unknown, c));
    match best {
        Some(best) => format!("{msg}; did you mean `{best}`?"),
        None => msg,
    }
}

/// Parse a config file: TOML by default, JSON when the extension says so.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    let cfg: ExperimentConfig = if is_json {
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(with_suggestion(e.to_string())))?
    } else {
        toml::from_str(&text).map_err(|e| CliError::Config(with_suggestion(e.to_string())))?
    };
    validate_semantics(&cfg)?;
    Ok(cfg)
}

/// Cross-field checks that strict deserialization cannot express.
pub fn validate_semantics(cfg: &ExperimentConfig) -> Result<(), CliError> {
    if let Some(stepper) = &cfg.stepper {
        if stepper.eta <= 0.0 {
            return Err(CliError::Config("stepper.eta must be > 0".into()));
        }
        if stepper.batch_size == 0 || stepper.steps == 0 {
            return Err(CliError::Config(
                "stepper.batch_size and stepper.steps must be >= 1".into(),
            ));
        }
        if let Some(t) = stepper.temperature {
            let implied = stepper.eta / stepper.batch_size as f64;
            if (t - implied).abs() > 1e-12 * implied.max(1.0) {
                return Err(CliError::Config(format!(
                    "T must equal eta/S: declared {t}, but eta/batch_size = {implied}"
                )));
            }
        }
    }
    Ok(())
}

/// Additional requirements that only bind when the experiment is actually
/// run; `analytic-pdf` and `compare` reuse configs without a stepper.
pub fn validate_for_run(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let needs_stepper = matches!(
        cfg.experiment,
        ExperimentKind::BalanceLinear
            | ExperimentKind::BalanceRelu
            | ExperimentKind::NoetherContrast
            | ExperimentKind::StationaryDepth0
            | ExperimentKind::StationaryDepth1
            | ExperimentKind::StationaryGeneralD
            | ExperimentKind::SignCoherenceTanh
            | ExperimentKind::BayesCompare
    );
    if needs_stepper && cfg.stepper.is_none() {
        return Err(CliError::Config(format!(
            "experiment {} requires a [stepper] section",
            cfg.experiment
        )));
    }
    if cfg.experiment == ExperimentKind::RegimesGrid && cfg.sigmas.is_empty() {
        return Err(CliError::Config(
            "regimes-grid requires a nonempty `sigmas` list".into(),
        ));
    }
    if cfg.experiment == ExperimentKind::StationaryGeneralD && cfg.density.is_none() {
        return Err(CliError::Config(
            "stationary-generalD requires a [density] section for depth and width".into(),
        ));
    }
    Ok(())
}
