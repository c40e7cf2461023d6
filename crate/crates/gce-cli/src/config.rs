//! The TOML run-configuration grammar and its conversion into library
//! types. Config structs mirror the library's specification types but use
//! file-friendly spellings: snake_case tags, 1-based outcome indices, and
//! expression strings for custom summaries.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gce::contrast::{
    ContrastSpec, Direction, OutcomeRule, PriorityLevel, SummarySpec, TiePredicate,
};
use gce::data::{OutcomeSchema, OutcomeType};
use gce::error::{Error, Result};
use gce::estimator::EstimatorKind;
use gce::expr::Expr;
use gce::nuisance::{BoostConfig, LearnerConfig, PimConfig};
use gce::sim::{DgpParams, Preset, Scenario, TruthSpec};

/// A parsed run configuration file. Which sections are required depends on
/// the subcommand; unused sections are rejected only when malformed, so one
/// file can serve several commands. Serialized back into every report with
/// all resolved seeds filled in, so a report reproduces itself.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<SchemaConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contrast: Option<ContrastConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<SummaryConfig>,
    /// Estimator for `analyze`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorConfig>,
    /// Estimators for `simulate`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimators: Option<Vec<EstimatorConfig>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    /// Truth source for `simulate`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthConfig>,
    /// Oracle pair draws for `truth`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_pairs: Option<usize>,
    /// Oracle stream seed for `truth`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_seed: Option<u64>,
    /// Degrees-of-freedom correction dimension applied to simulated
    /// estimates (default 4; the imputation map fits four conditional
    /// means). Set to 0 to disable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df_p: Option<usize>,
    /// Which target(s) to report where a single estimate is produced.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetChoice>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    /// Optional sidecar file holding the `[schema]` block.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    /// Known assignment probability; omitted, the empirical treated
    /// fraction is used and a warning recorded.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pi: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    pub outcomes: Vec<OutcomeTypeConfig>,
    #[serde(default)]
    pub p_x: usize,
    #[serde(default)]
    pub p_c: usize,
    /// Assignment probability may live here instead of `[data]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pi: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum OutcomeTypeConfig {
    Real,
    Binary,
    Count,
    Ordinal { levels: Vec<i64> },
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TargetChoice {
    #[value(name = "C", alias = "c")]
    C,
    #[value(name = "I", alias = "i")]
    I,
    #[value(name = "both")]
    Both,
}

impl Default for TargetChoice {
    fn default() -> Self {
        TargetChoice::Both
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionConfig {
    HigherBetter,
    LowerBetter,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RuleConfig {
    StrictGreater,
    Heaviside,
    TieInclusiveWin,
    ThresholdWin {
        margin: f64,
        direction: DirectionConfig,
        /// Score when the comparison is lost by more than the margin
        /// (default 0, the win-probability convention).
        #[serde(default)]
        loss: f64,
    },
    Difference,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TieConfig {
    Equal,
    WithinMargin { margin: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelConfig {
    /// 1-based outcome index.
    pub outcome: usize,
    pub rule: RuleConfig,
    #[serde(default = "default_tie")]
    pub tie: TieConfig,
}

fn default_tie() -> TieConfig {
    TieConfig::Equal
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContrastConfig {
    /// Weighted sum of one rule per outcome, in schema order. Omitted
    /// weights mean equal weights.
    DimensionWise {
        rules: Vec<RuleConfig>,
        #[serde(skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
    },
    /// Sequential comparison; the first non-tied level decides.
    Prioritized { levels: Vec<LevelConfig>, tie_value: f64 },
    /// Pareto dominance over all outcomes jointly.
    Pareto { directions: Vec<DirectionConfig>, tie_value: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SummaryConfig {
    Difference,
    Ratio,
    /// Λ = f(λ₁, λ₀) with analytic partials, all three as expressions in
    /// `u` (= λ₁) and `v` (= λ₀).
    Custom { f: String, df_du: String, df_dv: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorName {
    #[value(name = "np")]
    Np,
    #[value(name = "mr")]
    Mr,
    #[value(name = "dml")]
    Dml,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PimTomlConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerTomlConfig {
    Pim {
        #[serde(skip_serializing_if = "Option::is_none")]
        max_iter: Option<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        tol: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        ridge: Option<f64>,
    },
    Boosted {
        #[serde(skip_serializing_if = "Option::is_none")]
        trees: Option<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        shrinkage: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        subsample: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsampleTomlConfig {
    pub r: usize,
    /// Arm-stratified subsampling (default on).
    #[serde(default = "default_true")]
    pub stratified: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub kind: EstimatorName,
    /// Cross-fitting folds (dml only; default 5).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Arm-stratified fold deal (dml only; default off, matching the plain
    /// description of the partition).
    #[serde(default)]
    pub stratified: bool,
    /// Cross-fitting seed (dml only); drawn and recorded when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Nuisance learner (dml only; default boosted stumps).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learner: Option<LearnerTomlConfig>,
    /// Index-model tuning (mr only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pim: Option<PimTomlConfig>,
    /// Incomplete-U-statistic subsampling wrapper (analyze only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsample: Option<SubsampleTomlConfig>,
    /// Degrees-of-freedom correction dimension (analyze only; default 4,
    /// 0 disables).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df_p: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    #[value(name = "study1")]
    Study1,
    #[value(name = "study2")]
    Study2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub preset: PresetName,
    pub m: usize,
    /// Master data seed; drawn and recorded when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    // Generator overrides; defaults reproduce the study settings.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_min: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_max: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c1_sd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x2_sd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_sd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha2: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y2_shift_per_n: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constant_size: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthConfig {
    /// Monte Carlo oracle over independent cluster pairs.
    Oracle {
        n_pairs: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// Externally known values, [λ₁, λ₀] per target.
    Known { c: [f64; 2], i: [f64; 2] },
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
    }
}

impl SchemaConfig {
    pub fn load(path: &Path) -> Result<SchemaConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read schema file {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("schema file {}: {e}", path.display())))
    }

    pub fn to_schema(&self) -> OutcomeSchema {
        OutcomeSchema {
            outcomes: self.outcomes.iter().map(OutcomeTypeConfig::to_type).collect(),
            p_x: self.p_x,
            p_c: self.p_c,
        }
    }
}

impl OutcomeTypeConfig {
    fn to_type(&self) -> OutcomeType {
        match self {
            OutcomeTypeConfig::Real => OutcomeType::Real,
            OutcomeTypeConfig::Binary => OutcomeType::Binary,
            OutcomeTypeConfig::Count => OutcomeType::Count,
            OutcomeTypeConfig::Ordinal { levels } => {
                OutcomeType::Ordinal { levels: levels.clone() }
            }
            OutcomeTypeConfig::Categorical => OutcomeType::Categorical,
        }
    }
}

impl DirectionConfig {
    fn to_direction(self) -> Direction {
        match self {
            DirectionConfig::HigherBetter => Direction::HigherBetter,
            DirectionConfig::LowerBetter => Direction::LowerBetter,
        }
    }
}

impl RuleConfig {
    fn to_rule(&self) -> OutcomeRule {
        match self {
            RuleConfig::StrictGreater => OutcomeRule::StrictGreater,
            RuleConfig::Heaviside => OutcomeRule::Heaviside,
            RuleConfig::TieInclusiveWin => OutcomeRule::TieInclusiveWin,
            RuleConfig::ThresholdWin { margin, direction, loss } => OutcomeRule::ThresholdWin {
                margin: *margin,
                direction: direction.to_direction(),
                loss: *loss,
            },
            RuleConfig::Difference => OutcomeRule::Difference,
        }
    }
}

impl ContrastConfig {
    /// Convert to the library spec; outcome indices are 1-based in the
    /// file and 0-based in the library.
    pub fn to_spec(&self) -> Result<ContrastSpec> {
        Ok(match self {
            ContrastConfig::DimensionWise { rules, weights } => {
                let w = match weights {
                    Some(w) => w.clone(),
                    None => vec![1.0; rules.len()],
                };
                ContrastSpec::DimensionWise {
                    rules: rules.iter().map(RuleConfig::to_rule).collect(),
                    weights: w,
                }
            }
            ContrastConfig::Prioritized { levels, tie_value } => {
                let mut out = Vec::with_capacity(levels.len());
                for level in levels {
                    if level.outcome == 0 {
                        return Err(Error::Config(
                            "contrast level outcome indices are 1-based; got 0".into(),
                        ));
                    }
                    out.push(PriorityLevel {
                        outcome: level.outcome - 1,
                        rule: level.rule.to_rule(),
                        tie: match &level.tie {
                            TieConfig::Equal => TiePredicate::Equal,
                            TieConfig::WithinMargin { margin } => {
                                TiePredicate::WithinMargin(*margin)
                            }
                        },
                    });
                }
                ContrastSpec::Prioritized { levels: out, tie_value: *tie_value }
            }
            ContrastConfig::Pareto { directions, tie_value } => ContrastSpec::Pareto {
                directions: directions.iter().map(|d| d.to_direction()).collect(),
                tie_value: *tie_value,
            },
        })
    }
}

impl SummaryConfig {
    pub fn to_spec(&self) -> Result<SummarySpec> {
        Ok(match self {
            SummaryConfig::Difference => SummarySpec::Difference,
            SummaryConfig::Ratio => SummarySpec::Ratio,
            SummaryConfig::Custom { f, df_du, df_dv } => SummarySpec::Custom {
                f: Expr::parse(f)?,
                df_du: Expr::parse(df_du)?,
                df_dv: Expr::parse(df_dv)?,
            },
        })
    }
}

impl EstimatorConfig {
    /// Bare default for a name given on the command line.
    pub fn from_name(kind: EstimatorName) -> EstimatorConfig {
        EstimatorConfig {
            kind,
            k: None,
            stratified: false,
            seed: None,
            learner: None,
            pim: None,
            subsample: None,
            df_p: None,
        }
    }

    pub fn to_kind(&self) -> EstimatorKind {
        match self.kind {
            EstimatorName::Np => EstimatorKind::Np,
            EstimatorName::Mr => {
                let mut c = PimConfig::default();
                if let Some(p) = &self.pim {
                    if let Some(v) = p.max_iter {
                        c.max_iter = v;
                    }
                    if let Some(v) = p.tol {
                        c.tol = v;
                    }
                    if let Some(v) = p.ridge {
                        c.ridge = v;
                    }
                }
                EstimatorKind::Mr(c)
            }
            EstimatorName::Dml => EstimatorKind::Dml {
                learner: match &self.learner {
                    None => LearnerConfig::Boosted(BoostConfig::default()),
                    Some(LearnerTomlConfig::Pim { max_iter, tol, ridge }) => {
                        let mut c = PimConfig::default();
                        if let Some(v) = max_iter {
                            c.max_iter = *v;
                        }
                        if let Some(v) = tol {
                            c.tol = *v;
                        }
                        if let Some(v) = ridge {
                            c.ridge = *v;
                        }
                        LearnerConfig::Pim(c)
                    }
                    Some(LearnerTomlConfig::Boosted { trees, shrinkage, subsample, seed }) => {
                        let mut c = BoostConfig::default();
                        if let Some(v) = trees {
                            c.trees = *v;
                        }
                        if let Some(v) = shrinkage {
                            c.shrinkage = *v;
                        }
                        if let Some(v) = subsample {
                            c.subsample = *v;
                        }
                        if let Some(v) = seed {
                            c.seed = *v;
                        }
                        LearnerConfig::Boosted(c)
                    }
                },
                k: self.k.unwrap_or(5),
                stratified: self.stratified,
            },
        }
    }
}

impl ScenarioConfig {
    /// Build the library scenario; the seed must already be resolved.
    pub fn to_scenario(&self) -> Result<Scenario> {
        let seed = self.seed.ok_or_else(|| {
            Error::Config("scenario seed unresolved; this is a bug in seed resolution".into())
        })?;
        let preset = match self.preset {
            PresetName::Study1 => Preset::Study1,
            PresetName::Study2 => Preset::Study2,
        };
        let mut params = DgpParams::default();
        if let Some(v) = self.n_min {
            params.n_min = v;
        }
        if let Some(v) = self.n_max {
            params.n_max = v;
        }
        if let Some(v) = self.pi {
            params.pi = v;
        }
        if let Some(v) = self.c1_sd {
            params.c1_sd = v;
        }
        if let Some(v) = self.x2_sd {
            params.x2_sd = v;
        }
        if let Some(v) = self.gamma_sd {
            params.gamma_sd = v;
        }
        if let Some(v) = self.alpha2 {
            params.alpha2 = v;
        }
        if let Some(v) = self.y2_shift_per_n {
            params.y2_shift_per_n = v;
        }
        if let Some(v) = self.constant_size {
            params.constant_size = Some(v);
        }
        Ok(Scenario { preset, m: self.m, seed, params })
    }
}

impl TruthConfig {
    /// Convert to the library truth source; oracle seeds must be resolved.
    pub fn to_spec(&self) -> Result<TruthSpec> {
        Ok(match self {
            TruthConfig::Oracle { n_pairs, seed } => TruthSpec::Oracle {
                n_pairs: *n_pairs,
                seed: seed.ok_or_else(|| {
                    Error::Config(
                        "truth oracle seed unresolved; this is a bug in seed resolution".into(),
                    )
                })?,
            },
            TruthConfig::Known { c, i } => TruthSpec::Known { c: *c, i: *i },
        })
    }
}
