//! The three subcommand drivers: `analyze` a trial dataset, `simulate` a
//! Monte Carlo study, and `truth` for oracle estimand values.
//!
//! Every seed the run needs is taken from the config when present, otherwise
//! derived from the `--seed` master, otherwise drawn once from OS entropy —
//! and in all cases written into the config echoed by the report, so any
//! report can be reproduced exactly.

use std::path::{Path, PathBuf};

use rand::RngCore as _;

use gce::contrast::CompiledContrast;
use gce::data::load_dataset;
use gce::error::{Error, Result};
use gce::estimate::{df_correct, GceEstimate, Target};
use gce::estimator::{run_estimator, run_estimator_both, EstimatorKind};
use gce::rng::StreamKey;
use gce::sim::{aggregate, run_study_range, true_estimands_both, TruthSpec};
use gce::subsample::estimate_subsampled;

use crate::config::{
    EstimatorConfig, EstimatorName, FileConfig, PresetName, ScenarioConfig, SchemaConfig,
    TargetChoice, TruthConfig,
};
use crate::report::{
    emit, raw_csv, study_csv, to_json, AnalyzeReport, SimulateReport, TruthReport, TruthResult,
    VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

/// Options shared by all subcommands, resolved by `main`.
pub struct GlobalOpts {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
}

/// Command-line overrides for `simulate`.
#[derive(Default)]
pub struct SimulateFlags {
    pub preset: Option<PresetName>,
    pub m: Option<usize>,
    pub reps: Option<usize>,
    pub estimators: Option<Vec<EstimatorName>>,
    pub raw: bool,
}

/// Command-line overrides for `truth`.
#[derive(Default)]
pub struct TruthFlags {
    pub preset: Option<PresetName>,
    pub m: Option<usize>,
    pub pairs: Option<usize>,
    pub target: Option<TargetChoice>,
}

/// Fills absent seeds. Config values win; otherwise each slot gets its own
/// stream derived from the `--seed` master; with no master either, a slot
/// is drawn once from OS entropy. Either way the value ends up in the
/// echoed config.
struct SeedSource {
    master: Option<u64>,
    counter: u64,
}

impl SeedSource {
    fn new(master: Option<u64>) -> Self {
        SeedSource { master, counter: 0 }
    }

    fn fill(&mut self, slot: &mut Option<u64>) -> u64 {
        if let Some(v) = *slot {
            return v;
        }
        self.counter += 1;
        let v = match self.master {
            Some(m) => StreamKey::root(m).child(self.counter).rng().next_u64(),
            None => rand::rng().next_u64(),
        };
        *slot = Some(v);
        v
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        Some(p) => FileConfig::load(p),
        None => Ok(FileConfig::default()),
    }
}

/// Degrees-of-freedom dimension from an optional config value: absent means
/// the default of 4 (the imputation map fits four conditional means), zero
/// disables the correction.
fn df_dimension(configured: Option<usize>) -> Option<usize> {
    match configured {
        None => Some(4),
        Some(0) => None,
        Some(p) => Some(p),
    }
}

pub fn analyze(opts: &GlobalOpts, target_flag: Option<TargetChoice>) -> Result<()> {
    if opts.format == OutputFormat::Csv {
        return Err(Error::Config(
            "analyze reports are not tabular; use --format json".into(),
        ));
    }
    let mut cfg = load_config(&opts.config)?;
    let mut seeds = SeedSource::new(opts.seed);
    if let Some(t) = target_flag {
        cfg.target = Some(t);
    }

    let data_cfg = cfg
        .data
        .clone()
        .ok_or_else(|| Error::Config("analyze needs a [data] section; pass --config".into()))?;
    let schema_cfg: SchemaConfig = match (&cfg.schema, &data_cfg.schema) {
        (Some(s), None) => s.clone(),
        (None, Some(path)) => SchemaConfig::load(path)?,
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "schema given both inline ([schema]) and as a sidecar (data.schema); \
                 keep exactly one"
                    .into(),
            ))
        }
        (None, None) => {
            return Err(Error::Config(
                "analyze needs a [schema] section or a data.schema sidecar path".into(),
            ))
        }
    };
    // Echo the resolved schema even when it came from a sidecar.
    cfg.schema = Some(schema_cfg.clone());
    let schema = schema_cfg.to_schema();
    let pi = data_cfg.pi.or(schema_cfg.pi);
    let dataset = load_dataset(&data_cfg.path, &schema, pi)?;

    let mut warnings = Vec::new();
    if dataset.pi_from_data {
        warnings.push(format!(
            "assignment probability not declared; using the empirical treated fraction {:.6}",
            dataset.pi
        ));
    }

    let contrast_cfg = cfg.contrast.clone().ok_or_else(|| {
        Error::Config("analyze needs a [contrast] section describing the pairwise rule".into())
    })?;
    let contrast = CompiledContrast::compile(contrast_cfg.to_spec()?, &schema)?;
    let summary_spec = cfg.summary.as_ref().map(|s| s.to_spec()).transpose()?;

    let mut est_cfg =
        cfg.estimator.clone().unwrap_or_else(|| EstimatorConfig::from_name(EstimatorName::Np));
    let est_seed = match est_cfg.kind {
        EstimatorName::Dml => seeds.fill(&mut est_cfg.seed),
        _ => est_cfg.seed.unwrap_or(0),
    };
    if let Some(sub) = &mut est_cfg.subsample {
        seeds.fill(&mut sub.seed);
    }
    cfg.estimator = Some(est_cfg.clone());
    let kind = est_cfg.to_kind();

    // Degrees-of-freedom correction: on by default, but when the dataset is
    // too small for the default it is skipped with a warning rather than
    // failing the run (an explicit df_p that does not fit still errors).
    let mut df_p = df_dimension(est_cfg.df_p);
    if let Some(p) = df_p {
        let limit = est_cfg.subsample.as_ref().map_or(p, |s| s.r * p);
        if dataset.m() <= limit && est_cfg.df_p.is_none() {
            warnings.push(format!(
                "degrees-of-freedom correction skipped: m = {} is too small for p = {p}",
                dataset.m()
            ));
            df_p = None;
        }
    }

    let targets: Vec<Target> = match cfg.target.unwrap_or_default() {
        TargetChoice::C => vec![Target::ClusterPair],
        TargetChoice::I => vec![Target::IndividualPair],
        TargetChoice::Both => vec![Target::ClusterPair, Target::IndividualPair],
    };

    let mut results: Vec<GceEstimate> = match &est_cfg.subsample {
        Some(sub) => {
            let seed = sub.seed.expect("subsample seed resolved above");
            targets
                .iter()
                .map(|&t| {
                    estimate_subsampled(
                        &dataset, &contrast, t, &kind, sub.r, seed, sub.stratified, df_p,
                    )
                })
                .collect::<Result<_>>()?
        }
        None if targets.len() == 2 => {
            let (c, i) = run_estimator_both(&dataset, &contrast, &kind, est_seed)?;
            let mut v = vec![c, i];
            if let Some(p) = df_p {
                v = v.into_iter().map(|e| df_correct(e, p)).collect::<Result<_>>()?;
            }
            v
        }
        None => {
            let mut est = run_estimator(&dataset, &contrast, targets[0], &kind, est_seed)?;
            if let Some(p) = df_p {
                est = df_correct(est, p)?;
            }
            vec![est]
        }
    };
    if let Some(spec) = &summary_spec {
        results =
            results.into_iter().map(|e| e.with_summary(spec)).collect::<Result<_>>()?;
    }

    let report = AnalyzeReport {
        version: VERSION,
        command: "analyze",
        config: &cfg,
        warnings,
        results,
    };
    emit(&to_json(&report)?, opts.out.as_deref())
}

/// Merge `--preset` / `--m` into the config's scenario, creating it when the
/// flags fully specify one.
fn merged_scenario(
    cfg: &mut FileConfig,
    preset: Option<PresetName>,
    m: Option<usize>,
    default_m: Option<usize>,
) -> Result<()> {
    if cfg.scenario.is_none() {
        let preset = preset.ok_or_else(|| {
            Error::Config("no [scenario] in the config; pass --preset (and --m)".into())
        })?;
        let m = m.or(default_m).ok_or_else(|| {
            Error::Config("no [scenario] in the config; pass --m as well".into())
        })?;
        cfg.scenario = Some(ScenarioConfig {
            preset,
            m,
            seed: None,
            n_min: None,
            n_max: None,
            pi: None,
            c1_sd: None,
            x2_sd: None,
            gamma_sd: None,
            alpha2: None,
            y2_shift_per_n: None,
            constant_size: None,
        });
        return Ok(());
    }
    let sc = cfg.scenario.as_mut().expect("checked above");
    if let Some(p) = preset {
        sc.preset = p;
    }
    if let Some(m) = m {
        sc.m = m;
    }
    Ok(())
}

pub fn simulate(opts: &GlobalOpts, flags: SimulateFlags) -> Result<()> {
    if flags.raw && opts.out.is_none() {
        return Err(Error::Config(
            "--raw writes a CSV next to the report; pass --out as well".into(),
        ));
    }
    let mut cfg = load_config(&opts.config)?;
    let mut seeds = SeedSource::new(opts.seed);

    merged_scenario(&mut cfg, flags.preset, flags.m, None)?;
    seeds.fill(&mut cfg.scenario.as_mut().expect("merged above").seed);
    let scenario = cfg.scenario.as_ref().expect("merged above").to_scenario()?;

    if let Some(reps) = flags.reps {
        cfg.replicates = Some(reps);
    }
    let replicates = cfg.replicates.ok_or_else(|| {
        Error::Config("simulate needs a replicate count; set replicates or pass --reps".into())
    })?;
    if replicates < 50 {
        return Err(Error::Config(format!(
            "study needs at least 50 replicates for stable summaries, got {replicates}"
        )));
    }

    if let Some(names) = &flags.estimators {
        cfg.estimators =
            Some(names.iter().map(|&n| EstimatorConfig::from_name(n)).collect());
    }
    if cfg.estimators.is_none() {
        // Default: the full estimator lineup.
        cfg.estimators = Some(
            [EstimatorName::Np, EstimatorName::Mr, EstimatorName::Dml]
                .into_iter()
                .map(EstimatorConfig::from_name)
                .collect(),
        );
    }
    let est_cfgs = cfg.estimators.clone().expect("defaulted above");
    for e in &est_cfgs {
        if e.subsample.is_some() {
            return Err(Error::Config(
                "subsampling is an analyze-time wrapper; remove it from simulate estimators"
                    .into(),
            ));
        }
    }
    let kinds: Vec<EstimatorKind> = est_cfgs.iter().map(EstimatorConfig::to_kind).collect();

    if cfg.truth.is_none() {
        cfg.truth = Some(TruthConfig::Oracle { n_pairs: 1_000_000, seed: None });
    }
    if let Some(TruthConfig::Oracle { seed, .. }) = &mut cfg.truth {
        seeds.fill(seed);
    }
    let truth_spec = cfg.truth.as_ref().expect("defaulted above").to_spec()?;
    let (truth_c, truth_i) = match truth_spec {
        TruthSpec::Known { c, i } => (c, i),
        TruthSpec::Oracle { n_pairs, seed } => {
            let (c, i) = true_estimands_both(&scenario, n_pairs, seed)?;
            (c.lambda, i.lambda)
        }
    };

    let df_p = df_dimension(cfg.df_p);
    let records = run_study_range(&scenario, &kinds, 0..replicates as u64, df_p)?;
    let study = aggregate(&scenario, &kinds, &records, truth_c, truth_i, 0.0);

    let report = SimulateReport {
        version: VERSION,
        command: "simulate",
        config: &cfg,
        study: &study,
    };
    let text = match opts.format {
        OutputFormat::Json => to_json(&report)?,
        OutputFormat::Csv => study_csv(&study),
    };
    emit(&text, opts.out.as_deref())?;

    if flags.raw {
        let out = opts.out.as_ref().expect("checked above");
        let names: Vec<&str> = kinds.iter().map(|k| k.name()).collect();
        let raw_path = raw_sibling(out);
        emit(&raw_csv(&records, &names), Some(&raw_path))?;
    }
    Ok(())
}

/// `report.json` → `report.raw.csv`; extensionless paths just append.
fn raw_sibling(out: &Path) -> PathBuf {
    out.with_extension("raw.csv")
}

pub fn truth(opts: &GlobalOpts, flags: TruthFlags) -> Result<()> {
    let mut cfg = load_config(&opts.config)?;
    let mut seeds = SeedSource::new(opts.seed);
    if let Some(t) = flags.target {
        cfg.target = Some(t);
    }

    // The oracle draws independent cluster pairs, so the trial size m plays
    // no role in the value; a placeholder keeps the scenario well-formed.
    merged_scenario(&mut cfg, flags.preset, flags.m, Some(60))?;
    seeds.fill(&mut cfg.scenario.as_mut().expect("merged above").seed);
    let scenario = cfg.scenario.as_ref().expect("merged above").to_scenario()?;

    if let Some(pairs) = flags.pairs {
        cfg.n_pairs = Some(pairs);
    }
    let n_pairs = cfg.n_pairs.unwrap_or(1_000_000);
    cfg.n_pairs = Some(n_pairs);
    let seed = seeds.fill(&mut cfg.truth_seed);

    let (c, i) = true_estimands_both(&scenario, n_pairs, seed)?;
    let results: Vec<TruthResult> = match cfg.target.unwrap_or_default() {
        TargetChoice::C => vec![TruthResult { target: Target::ClusterPair, truth: c }],
        TargetChoice::I => vec![TruthResult { target: Target::IndividualPair, truth: i }],
        TargetChoice::Both => vec![
            TruthResult { target: Target::ClusterPair, truth: c },
            TruthResult { target: Target::IndividualPair, truth: i },
        ],
    };

    let text = match opts.format {
        OutputFormat::Json => {
            let report =
                TruthReport { version: VERSION, command: "truth", config: &cfg, results };
            to_json(&report)?
        }
        OutputFormat::Csv => {
            let mut text =
                String::from("target,lambda_1,lambda_0,mc_se_1,mc_se_0,n_pairs\n");
            for r in &results {
                text.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.target,
                    r.truth.lambda[0],
                    r.truth.lambda[1],
                    r.truth.mc_se[0],
                    r.truth.mc_se[1],
                    r.truth.n_pairs,
                ));
            }
            text
        }
    };
    emit(&text, opts.out.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_slots_derive_distinct_reproducible_values() {
        let mut a = SeedSource::new(Some(7));
        let (mut s1, mut s2) = (None, None);
        let v1 = a.fill(&mut s1);
        let v2 = a.fill(&mut s2);
        assert_ne!(v1, v2);
        assert_eq!(s1, Some(v1));
        // Same master, same order → same values.
        let mut b = SeedSource::new(Some(7));
        let (mut t1, mut t2) = (None, None);
        assert_eq!(b.fill(&mut t1), v1);
        assert_eq!(b.fill(&mut t2), v2);
        // Explicit values are untouched.
        let mut c = SeedSource::new(Some(7));
        let mut pinned = Some(99);
        assert_eq!(c.fill(&mut pinned), 99);
        assert_eq!(pinned, Some(99));
    }

    #[test]
    fn df_dimension_defaults_to_four_and_zero_disables() {
        assert_eq!(df_dimension(None), Some(4));
        assert_eq!(df_dimension(Some(0)), None);
        assert_eq!(df_dimension(Some(7)), Some(7));
    }

    #[test]
    fn raw_path_lands_next_to_the_report() {
        assert_eq!(raw_sibling(Path::new("out/report.json")), Path::new("out/report.raw.csv"));
        assert_eq!(raw_sibling(Path::new("report")), Path::new("report.raw.csv"));
    }
}
