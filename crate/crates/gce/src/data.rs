//! Trial data model and flat-file ingestion.
//!
//! The canonical input is individual-level long format: one row per
//! individual with columns `cluster_id`, `treatment`, `outcome_1..outcome_Q`,
//! `x_1..x_{p_x}` (individual covariates), and `c_1..c_{p_c}` (cluster
//! covariates, repeated per row and checked for constancy). Rows belonging to
//! one cluster must be contiguous; a `cluster_id` reappearing after a
//! different id intervenes is rejected as a duplicate rather than merged.
//! Cluster size is inferred as the row count per cluster.
//!
//! Everything is immutable after validation, so datasets can be shared
//! freely across worker threads.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declared type of one outcome column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OutcomeType {
    /// Finite real number.
    Real,
    /// Ordered integer category; `levels` lists the admissible values in
    /// increasing order of the category.
    Ordinal { levels: Vec<i64> },
    /// Unordered label. Admitted at ingestion, but rejected by every
    /// contrast rule at spec-compilation time (no order to compare by).
    Categorical,
    /// Binary flag coded 0/1.
    Binary,
    /// Non-negative integer count.
    Count,
}

impl OutcomeType {
    /// Map a conforming value onto the real line for order-based
    /// comparisons: reals map to themselves, ordinals to their rank among
    /// the declared levels, binary to 0/1, counts to their value.
    /// Categorical values have no numeric image.
    pub fn numeric(&self, value: &OutcomeValue) -> Option<f64> {
        match (self, value) {
            (OutcomeType::Real, OutcomeValue::Real(v)) => Some(*v),
            (OutcomeType::Ordinal { levels }, OutcomeValue::Ordinal(v)) => {
                levels.iter().position(|l| l == v).map(|r| r as f64)
            }
            (OutcomeType::Binary, OutcomeValue::Binary(b)) => Some(f64::from(u8::from(*b))),
            (OutcomeType::Count, OutcomeValue::Count(n)) => Some(*n as f64),
            _ => None,
        }
    }

    fn describe(&self) -> &'static str {
        match self {
            OutcomeType::Real => "real",
            OutcomeType::Ordinal { .. } => "ordinal",
            OutcomeType::Categorical => "categorical",
            OutcomeType::Binary => "binary",
            OutcomeType::Count => "count",
        }
    }
}

/// Dataset-wide schema: outcome types plus covariate dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSchema {
    /// Per-outcome type declarations, length Q.
    pub outcomes: Vec<OutcomeType>,
    /// Number of individual-level covariate columns.
    pub p_x: usize,
    /// Number of cluster-level covariate columns.
    pub p_c: usize,
}

impl OutcomeSchema {
    /// Outcome dimension Q.
    pub fn q(&self) -> usize {
        self.outcomes.len()
    }

    fn validate(&self) -> Result<()> {
        if self.outcomes.is_empty() {
            return Err(Error::Schema("schema declares zero outcomes".into()));
        }
        for (q, ty) in self.outcomes.iter().enumerate() {
            if let OutcomeType::Ordinal { levels } = ty {
                if levels.is_empty() {
                    return Err(Error::Schema(format!(
                        "outcome_{} is ordinal with no declared levels",
                        q + 1
                    )));
                }
                let mut seen = levels.clone();
                seen.sort_unstable();
                seen.dedup();
                if seen.len() != levels.len() {
                    return Err(Error::Schema(format!(
                        "outcome_{} declares duplicate ordinal levels",
                        q + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One observed outcome value.
#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeValue {
    Real(f64),
    Ordinal(i64),
    Categorical(String),
    Binary(bool),
    Count(u64),
}

impl OutcomeValue {
    fn render(&self) -> String {
        match self {
            OutcomeValue::Real(v) => format!("{v}"),
            OutcomeValue::Ordinal(v) => format!("{v}"),
            OutcomeValue::Categorical(s) => s.clone(),
            OutcomeValue::Binary(b) => format!("{}", u8::from(*b)),
            OutcomeValue::Count(n) => format!("{n}"),
        }
    }
}

/// One individual: Q outcomes and p_x covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct IndividualRecord {
    pub outcomes: Vec<OutcomeValue>,
    pub x_covariates: Vec<f64>,
}

/// One cluster: treatment arm, cluster covariates, and its individuals.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRecord {
    pub id: String,
    /// Treatment arm, 0 or 1.
    pub treatment: u8,
    pub c_covariates: Vec<f64>,
    pub individuals: Vec<IndividualRecord>,
}

impl ClusterRecord {
    /// Cluster size N (number of individuals).
    pub fn size(&self) -> usize {
        self.individuals.len()
    }
}

/// A validated trial: immutable clusters plus schema and design information.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    pub clusters: Vec<ClusterRecord>,
    pub schema: OutcomeSchema,
    /// Treatment assignment probability. Known by design in a randomized
    /// trial; when the caller does not supply it, the empirical treated
    /// fraction is recorded instead and `pi_from_data` is set.
    pub pi: f64,
    /// True when `pi` was imputed from the data rather than declared.
    pub pi_from_data: bool,
}

impl TrialDataset {
    /// Validate and assemble a dataset from parts. Checks the schema, the
    /// per-cluster invariants, conformity of every value to the schema, and
    /// the design requirements (m >= 2, both arms present).
    pub fn new(
        clusters: Vec<ClusterRecord>,
        schema: OutcomeSchema,
        pi: Option<f64>,
    ) -> Result<Self> {
        schema.validate()?;
        if let Some(p) = pi {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!(
                    "assignment probability pi must lie strictly between 0 and 1, got {p}"
                )));
            }
        }
        for cluster in &clusters {
            if cluster.individuals.is_empty() {
                return Err(Error::Schema(format!("cluster {:?} has no individuals", cluster.id)));
            }
            if cluster.treatment > 1 {
                return Err(Error::Schema(format!(
                    "cluster {:?} has treatment {} outside {{0,1}}",
                    cluster.id, cluster.treatment
                )));
            }
            if cluster.c_covariates.len() != schema.p_c {
                return Err(Error::Schema(format!(
                    "cluster {:?} has {} cluster covariates, schema declares {}",
                    cluster.id,
                    cluster.c_covariates.len(),
                    schema.p_c
                )));
            }
            for v in &cluster.c_covariates {
                if !v.is_finite() {
                    return Err(Error::Parse(format!(
                        "non-finite cluster covariate in cluster {:?}",
                        cluster.id
                    )));
                }
            }
            for ind in &cluster.individuals {
                if ind.outcomes.len() != schema.q() {
                    return Err(Error::Schema(format!(
                        "individual in cluster {:?} has {} outcomes, schema declares {}",
                        cluster.id,
                        ind.outcomes.len(),
                        schema.q()
                    )));
                }
                if ind.x_covariates.len() != schema.p_x {
                    return Err(Error::Schema(format!(
                        "individual in cluster {:?} has {} covariates, schema declares {}",
                        cluster.id,
                        ind.x_covariates.len(),
                        schema.p_x
                    )));
                }
                for v in &ind.x_covariates {
                    if !v.is_finite() {
                        return Err(Error::Parse(format!(
                            "non-finite individual covariate in cluster {:?}",
                            cluster.id
                        )));
                    }
                }
                for (q, (val, ty)) in ind.outcomes.iter().zip(&schema.outcomes).enumerate() {
                    conforms(val, ty).map_err(|detail| {
                        Error::Parse(format!(
                            "outcome_{} in cluster {:?}: {detail}",
                            q + 1,
                            cluster.id
                        ))
                    })?;
                }
            }
        }
        let m1 = clusters.iter().filter(|c| c.treatment == 1).count();
        let m0 = clusters.len() - m1;
        if clusters.len() < 2 || m1 == 0 || m0 == 0 {
            return Err(Error::Degenerate(format!(
                "design needs at least one cluster per arm and m >= 2; got {} treated, {} control",
                m1, m0
            )));
        }
        let (pi, pi_from_data) = match pi {
            Some(p) => (p, false),
            None => (m1 as f64 / clusters.len() as f64, true),
        };
        Ok(TrialDataset { clusters, schema, pi, pi_from_data })
    }

    /// Number of clusters m.
    pub fn m(&self) -> usize {
        self.clusters.len()
    }

    /// Cluster counts per arm: (treated, control).
    pub fn arm_counts(&self) -> (usize, usize) {
        let m1 = self.clusters.iter().filter(|c| c.treatment == 1).count();
        (m1, self.clusters.len() - m1)
    }

    /// Total number of individuals across clusters.
    pub fn total_individuals(&self) -> usize {
        self.clusters.iter().map(ClusterRecord::size).sum()
    }

    /// Render the dataset back into its canonical long-format CSV. Floats
    /// use the shortest representation that parses back to the same value,
    /// so `load(serialize(d)) == d`.
    pub fn to_csv_string(&self) -> String {
        let schema = &self.schema;
        let mut out = String::new();
        out.push_str("cluster_id,treatment");
        for q in 1..=schema.q() {
            let _ = write!(out, ",outcome_{q}");
        }
        for j in 1..=schema.p_x {
            let _ = write!(out, ",x_{j}");
        }
        for k in 1..=schema.p_c {
            let _ = write!(out, ",c_{k}");
        }
        out.push('\n');
        for cluster in &self.clusters {
            for ind in &cluster.individuals {
                let _ = write!(out, "{},{}", csv_quote(&cluster.id), cluster.treatment);
                for v in &ind.outcomes {
                    let _ = write!(out, ",{}", csv_quote(&v.render()));
                }
                for v in &ind.x_covariates {
                    let _ = write!(out, ",{v}");
                }
                for v in &cluster.c_covariates {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        }
        out
    }
}

fn csv_quote(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn conforms(value: &OutcomeValue, ty: &OutcomeType) -> std::result::Result<(), String> {
    match (value, ty) {
        (OutcomeValue::Real(v), OutcomeType::Real) => {
            if v.is_finite() {
                Ok(())
            } else {
                Err("non-finite real value".into())
            }
        }
        (OutcomeValue::Ordinal(v), OutcomeType::Ordinal { levels }) => {
            if levels.contains(v) {
                Ok(())
            } else {
                Err(format!("value {v} is not among the declared ordinal levels"))
            }
        }
        (OutcomeValue::Categorical(_), OutcomeType::Categorical) => Ok(()),
        (OutcomeValue::Binary(_), OutcomeType::Binary) => Ok(()),
        (OutcomeValue::Count(_), OutcomeType::Count) => Ok(()),
        (v, t) => Err(format!("value {v:?} does not conform to declared {} type", t.describe())),
    }
}

/// Within-cluster mean of each individual covariate, length p_x.
pub fn cluster_summary_covariates(cluster: &ClusterRecord) -> Vec<f64> {
    let n = cluster.individuals.len();
    if n == 0 {
        return Vec::new();
    }
    let p = cluster.individuals[0].x_covariates.len();
    let mut means = vec![0.0; p];
    for ind in &cluster.individuals {
        for (m, v) in means.iter_mut().zip(&ind.x_covariates) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    means
}

/// Read a long-format delimited file into a validated [`TrialDataset`].
///
/// `pi` is the known assignment probability; pass `None` to fall back to the
/// empirical treated fraction (recorded on the dataset via `pi_from_data`).
pub fn load_dataset(
    path: impl AsRef<Path>,
    schema: &OutcomeSchema,
    pi: Option<f64>,
) -> Result<TrialDataset> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| {
        Error::Parse(format!("cannot open dataset {}: {e}", path.as_ref().display()))
    })?;
    load_dataset_from_reader(file, schema, pi)
}

/// [`load_dataset`] over any reader (in-memory buffers, pipes, ...).
pub fn load_dataset_from_reader(
    reader: impl io::Read,
    schema: &OutcomeSchema,
    pi: Option<f64>,
) -> Result<TrialDataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("cannot read header row: {e}")))?
        .clone();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, name) in headers.iter().enumerate() {
        if index.insert(name, i).is_some() {
            return Err(Error::Schema(format!("duplicate column {name:?} in header")));
        }
    }
    let col = |name: &str| -> Result<usize> {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("missing required column {name:?}")))
    };
    let id_col = col("cluster_id")?;
    let trt_col = col("treatment")?;
    let outcome_cols: Vec<usize> = (1..=schema.q())
        .map(|q| col(&format!("outcome_{q}")))
        .collect::<Result<_>>()?;
    let x_cols: Vec<usize> =
        (1..=schema.p_x).map(|j| col(&format!("x_{j}"))).collect::<Result<_>>()?;
    let c_cols: Vec<usize> =
        (1..=schema.p_c).map(|k| col(&format!("c_{k}"))).collect::<Result<_>>()?;

    let mut clusters: Vec<ClusterRecord> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();

    for (row_idx, record) in rdr.records().enumerate() {
        let line = row_idx + 2; // 1-based, after the header
        let record = record.map_err(|e| Error::Parse(format!("line {line}: {e}")))?;
        let field = |i: usize| -> Result<&str> {
            record
                .get(i)
                .ok_or_else(|| Error::Parse(format!("line {line}: row has too few fields")))
        };

        let id = field(id_col)?.to_string();
        let treatment = parse_binary(field(trt_col)?)
            .ok_or_else(|| Error::Parse(format!("line {line}: treatment must be 0 or 1")))?;
        let c_covariates: Vec<f64> = c_cols
            .iter()
            .map(|&i| parse_real(field(i)?, line, "cluster covariate"))
            .collect::<Result<_>>()?;
        let x_covariates: Vec<f64> = x_cols
            .iter()
            .map(|&i| parse_real(field(i)?, line, "individual covariate"))
            .collect::<Result<_>>()?;
        let outcomes: Vec<OutcomeValue> = outcome_cols
            .iter()
            .zip(&schema.outcomes)
            .enumerate()
            .map(|(q, (&i, ty))| {
                parse_outcome(field(i)?, ty).map_err(|detail| {
                    Error::Parse(format!("line {line}, outcome_{}: {detail}", q + 1))
                })
            })
            .collect::<Result<_>>()?;

        let individual = IndividualRecord { outcomes, x_covariates };

        match clusters.last_mut() {
            Some(current) if current.id == id => {
                if current.treatment != treatment {
                    return Err(Error::Schema(format!(
                        "line {line}: cluster {id:?} changes treatment within the file"
                    )));
                }
                if current.c_covariates != c_covariates {
                    return Err(Error::Schema(format!(
                        "line {line}: cluster {id:?} changes cluster covariates within the file"
                    )));
                }
                current.individuals.push(individual);
            }
            _ => {
                if seen.contains_key(&id) {
                    return Err(Error::Schema(format!(
                        "line {line}: cluster id {id:?} reappears after other clusters; \
                         rows for one cluster must be contiguous"
                    )));
                }
                seen.insert(id.clone(), clusters.len());
                clusters.push(ClusterRecord {
                    id,
                    treatment,
                    c_covariates,
                    individuals: vec![individual],
                });
            }
        }
    }

    if clusters.is_empty() {
        return Err(Error::Degenerate("input contains no data rows".into()));
    }
    TrialDataset::new(clusters, schema.clone(), pi)
}

fn parse_binary(s: &str) -> Option<u8> {
    match s {
        "0" => Some(0),
        "1" => Some(1),
        _ => {
            let v: f64 = s.parse().ok()?;
            if v == 0.0 {
                Some(0)
            } else if v == 1.0 {
                Some(1)
            } else {
                None
            }
        }
    }
}

fn parse_real(s: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Parse(format!("line {line}: {what} {s:?} is not a number")))?;
    if !v.is_finite() {
        return Err(Error::Parse(format!("line {line}: {what} {s:?} is not finite")));
    }
    Ok(v)
}

fn parse_outcome(s: &str, ty: &OutcomeType) -> std::result::Result<OutcomeValue, String> {
    match ty {
        OutcomeType::Real => {
            let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a real number"))?;
            if !v.is_finite() {
                return Err(format!("{s:?} is not finite"));
            }
            Ok(OutcomeValue::Real(v))
        }
        OutcomeType::Ordinal { levels } => {
            let v: i64 = s.parse().map_err(|_| format!("{s:?} is not an integer level"))?;
            if !levels.contains(&v) {
                return Err(format!("level {v} is not among the declared ordinal levels"));
            }
            Ok(OutcomeValue::Ordinal(v))
        }
        OutcomeType::Categorical => Ok(OutcomeValue::Categorical(s.to_string())),
        OutcomeType::Binary => match parse_binary(s) {
            Some(b) => Ok(OutcomeValue::Binary(b == 1)),
            None => Err(format!("{s:?} is not a 0/1 flag")),
        },
        OutcomeType::Count => {
            let v: u64 = s.parse().map_err(|_| format!("{s:?} is not a non-negative count"))?;
            Ok(OutcomeValue::Count(v))
        }
    }
}
