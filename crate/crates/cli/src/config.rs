//! Run configuration, read from a single TOML file.

use std::path::{Path, PathBuf};

use distreg::evalcv::{CvSpec, LambdaGrid, ModelConfig, Outcome, Transform};
use distreg::ingest::EpochWindow;
use distreg::represent::{GridSpec, RepresentOptions};
use distreg::sofr::{FitOptions, Link, SmoothingCriterion};
use distreg::splinebasis::BasisSpec;
use distreg::synthgen::{CohortDesign, HazardShape, OutcomeModel};
use distreg::RepresentationKind;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformChoice {
    Raw,
    Log1,
    #[default]
    Both,
}

impl TransformChoice {
    pub fn transforms(self) -> Vec<Transform> {
        match self {
            TransformChoice::Raw => vec![Transform::Raw],
            TransformChoice::Log1 => vec![Transform::Log1],
            TransformChoice::Both => Transform::BOTH.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub epochs: PathBuf,
    pub outcomes: PathBuf,
    #[serde(default)]
    pub window: EpochWindow,
    /// Subjects with fewer in-window epochs are dropped.
    #[serde(default = "default_min_epochs")]
    pub min_epochs: usize,
}

fn default_min_epochs() -> usize {
    60
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Decreasing-hazard group vs a mean-matched unimodal-hazard group.
    Table1Analog,
    /// Two identical groups drawn from `null_shape`.
    Null,
    /// The `design` table verbatim.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub preset: Preset,
    #[serde(default = "default_n")]
    pub n_per_group: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_shape")]
    pub null_shape: HazardShape,
    #[serde(default)]
    pub round_counts: bool,
    pub outcome: Option<OutcomeModel>,
    pub design: Option<CohortDesign>,
}

fn default_n() -> usize {
    100
}

fn default_m() -> usize {
    720
}

fn default_shape() -> HazardShape {
    HazardShape::Constant
}

impl SyntheticConfig {
    pub fn design(&self) -> Result<CohortDesign> {
        let mut design = match (self.preset, &self.design) {
            (Preset::Custom, Some(d)) => return Ok(*d),
            (Preset::Custom, None) => return Err(CliError::Config("preset `custom` needs a [synthetic.design] table".into())),
            (_, Some(_)) => return Err(CliError::Config("[synthetic.design] is only read with preset `custom`".into())),
            (Preset::Table1Analog, None) => CohortDesign::mean_matched(self.n_per_group, self.m)?,
            (Preset::Null, None) => CohortDesign::null(self.n_per_group, self.m, self.null_shape.params()),
        };
        if let Some(o) = self.outcome {
            design.outcome = o;
        }
        design.round_counts = self.round_counts;
        design.validate()?;
        Ok(design)
    }
}

/// CV settings; the seed comes from the top-level `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    pub folds: usize,
    pub replications: usize,
    pub stratified: bool,
    pub pool_folds: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        let d = CvSpec::default();
        CvConfig { folds: d.folds, replications: d.replications, stratified: d.stratified, pool_folds: d.pool_folds }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub transform: TransformChoice,
    pub representations: Vec<RepresentationKind>,
    pub outcome: Outcome,
    /// Optional; must agree with `outcome` when given.
    pub link: Option<Link>,
    pub input: Option<InputConfig>,
    pub synthetic: Option<SyntheticConfig>,
    pub grid: GridSpec,
    pub basis: BasisSpec,
    pub represent: RepresentOptions,
    pub lambda: LambdaGrid,
    pub criterion: SmoothingCriterion,
    pub fit: FitOptions,
    pub cv: CvConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            output_dir: PathBuf::from("out"),
            transform: TransformChoice::default(),
            representations: RepresentationKind::PREDICTORS.to_vec(),
            outcome: Outcome::Binary,
            link: None,
            input: None,
            synthetic: None,
            grid: GridSpec::default(),
            basis: BasisSpec::default(),
            represent: RepresentOptions::default(),
            lambda: LambdaGrid::default(),
            criterion: SmoothingCriterion::default(),
            fit: FitOptions::default(),
            cv: CvConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        if self.representations.is_empty() {
            return Err(CliError::Config("at least one representation is required".into()));
        }
        for (i, k) in self.representations.iter().enumerate() {
            if !RepresentationKind::PREDICTORS.contains(k) {
                return Err(CliError::Config(format!("`{k}` is not a predictor representation")));
            }
            if self.representations[..i].contains(k) {
                return Err(CliError::Config(format!("representation `{k}` listed twice")));
            }
        }
        if let Some(link) = self.link {
            if link != self.outcome.link() {
                return Err(CliError::Config(format!(
                    "link `{link:?}` does not fit a {} outcome (expected `{:?}`)",
                    self.outcome.name(),
                    self.outcome.link()
                )));
            }
        }
        match (&self.input, &self.synthetic) {
            (Some(_), Some(_)) => return Err(CliError::Config("give either [input] or [synthetic], not both".into())),
            (None, None) => return Err(CliError::Config("no data source: add an [input] or [synthetic] table".into())),
            (Some(input), None) => input.window.validate()?,
            (None, Some(s)) => {
                s.design()?;
            }
        }
        self.model().validate()?;
        CvSpec { seed: 0, ..self.cv_spec_unseeded() }.validate()?;
        Ok(())
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            grid: self.grid,
            basis: self.basis,
            represent: self.represent,
            lambda: self.lambda,
            criterion: self.criterion,
            fit: self.fit,
        }
    }

    fn cv_spec_unseeded(&self) -> CvSpec {
        CvSpec {
            folds: self.cv.folds,
            replications: self.cv.replications,
            seed: 0,
            stratified: self.cv.stratified,
            pool_folds: self.cv.pool_folds,
        }
    }

    pub fn cv_spec(&self) -> Result<CvSpec> {
        Ok(CvSpec { seed: self.require_seed("cross-validation")?, ..self.cv_spec_unseeded() })
    }

    pub fn require_seed(&self, step: &str) -> Result<u64> {
        self.seed.ok_or_else(|| CliError::Config(format!("{step} is stochastic; set `seed` or pass --seed")))
    }

    pub fn transforms(&self) -> Vec<Transform> {
        self.transform.transforms()
    }
}
