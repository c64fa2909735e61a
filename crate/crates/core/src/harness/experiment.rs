//! Experiment orchestration: profit-versus-`L` tables for every method,
//! rounding variants, surplus, bootstrap bands, solve traces and a manifest.
//!
//! Every output is rendered into memory first; [`ReportBundle::write_to`]
//! only copies the strings to disk. Nothing in the bundle depends on the
//! size of the worker pool.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bootstrap::{resample_indices, Resample};
use super::io::{load_population, write_population};
use super::synth::{generate_population, SynthConfig};
use crate::benchmarks::{
    ab_test_policy, blanket, segment_then_personalize, standard_arms, Feature, KMeansOptions,
};
use crate::granular::Problem;
use crate::lloyd::{round_policy_expost, Solution, Solver, SolverConfig, UpdateRule};
use crate::model::{FeasibleTreatment, Population, TreatmentSpace};
use crate::numeric::{mean_sd, mix_seed};
use crate::surplus::surplus_decomposition;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Coarse,
    KMeansOptimalLevels,
    KMeansPreferences,
    KMeansCovariates,
    AbTest,
    Blanket,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Coarse,
        Method::KMeansOptimalLevels,
        Method::KMeansPreferences,
        Method::KMeansCovariates,
        Method::AbTest,
        Method::Blanket,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Coarse => "coarse",
            Method::KMeansOptimalLevels => "kmeans-optimal-levels",
            Method::KMeansPreferences => "kmeans-preferences",
            Method::KMeansCovariates => "kmeans-covariates",
            Method::AbTest => "abtest",
            Method::Blanket => "blanket",
        }
    }

    fn feature(self) -> Option<Feature> {
        match self {
            Method::KMeansOptimalLevels => Some(Feature::OptimalLevels),
            Method::KMeansPreferences => Some(Feature::Preferences),
            Method::KMeansCovariates => Some(Feature::Covariates),
            _ => None,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

fn default_bounds() -> Vec<f64> {
    vec![5.0, 20.0]
}
fn default_segments() -> usize {
    10
}
fn default_methods() -> Vec<String> {
    Method::ALL.iter().map(|m| m.name().to_string()).collect()
}
fn default_steps() -> Vec<f64> {
    vec![0.25, 0.5, 1.0]
}
fn default_starts() -> usize {
    5
}
fn default_update() -> String {
    "exact".into()
}
fn default_iterations() -> usize {
    1000
}
fn default_tolerance() -> f64 {
    1e-6
}
fn default_kmeans_starts() -> usize {
    3
}

/// Flat key-value experiment description (TOML syntax).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Population file, relative to the spec's directory.
    #[serde(default)]
    pub population: Option<String>,
    /// Size of a synthetic two-promotion population, used when no file is named.
    #[serde(default)]
    pub synth_n: Option<usize>,
    #[serde(default = "default_bounds")]
    pub bounds: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_segments")]
    pub max_segments: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_steps")]
    pub rounding_steps: Vec<f64>,
    #[serde(default)]
    pub bootstrap: usize,
    #[serde(default = "default_starts")]
    pub num_starts: usize,
    #[serde(default = "default_update")]
    pub update: String,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_kmeans_starts")]
    pub kmeans_starts: usize,
    #[serde(default)]
    pub zero_intercept: bool,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("experiment spec: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    fn methods(&self) -> Result<Vec<Method>> {
        let mut out: Vec<Method> = self
            .methods
            .iter()
            .map(|m| m.parse())
            .collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }

    fn solver_config(&self) -> Result<SolverConfig> {
        Ok(SolverConfig {
            num_treatments: self.max_segments,
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            num_starts: self.num_starts,
            update_rule: self.update.parse::<UpdateRule>()?,
            seed: self.seed,
            zero_intercept: self.zero_intercept,
            ..SolverConfig::default()
        })
    }

    fn population(&self, base_dir: &Path) -> Result<Population> {
        let space = TreatmentSpace::with_bounds(&self.bounds)?;
        match (&self.population, self.synth_n) {
            (Some(p), None) => load_population(&base_dir.join(p), &space),
            (None, Some(n)) => {
                if self.bounds.len() != 2 {
                    return Err(Error::Config(
                        "the synthetic preset has two dimensions".into(),
                    ));
                }
                let mut cfg = SynthConfig::promotions(n, self.seed);
                cfg.upper_bounds = self.bounds.clone();
                generate_population(&cfg)
            }
            _ => Err(Error::Config(
                "name exactly one of population or synth_n".into(),
            )),
        }
    }
}

/// Profit per method and `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfitTable {
    pub segments: Vec<usize>,
    pub granular: f64,
    pub columns: Vec<(Method, Vec<f64>)>,
}

impl ProfitTable {
    pub fn column(&self, m: Method) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(k, _)| *k == m)
            .map(|(_, v)| v.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundingRow {
    pub segments: usize,
    /// `none`, `ex-ante` or `ex-post`.
    pub variant: String,
    pub step: f64,
    pub profit: f64,
    pub effective_treatments: usize,
}

#[derive(Debug, Clone)]
pub struct ReportBundle {
    /// File name to contents.
    pub files: BTreeMap<String, String>,
    pub profits: ProfitTable,
    pub rounding: Vec<RoundingRow>,
    pub coarse: Vec<Solution>,
}

impl ReportBundle {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, text) in &self.files {
            std::fs::write(dir.join(name), text)?;
        }
        Ok(())
    }
}

struct Plan {
    methods: Vec<Method>,
    solver: SolverConfig,
    max_segments: usize,
    kmeans_starts: usize,
    seed: u64,
}

struct PathResult {
    table: ProfitTable,
    coarse: Vec<Solution>,
}

fn kmeans_options(plan: &Plan, l: usize, m: Method) -> KMeansOptions {
    KMeansOptions {
        starts: plan.kmeans_starts,
        seed: mix_seed(plan.seed, l as u64, m as u64),
        ..KMeansOptions::default()
    }
}

/// Every method for `L = 1..=max_segments`. The coarse solver receives the
/// benchmark treatments of each level as extra seeds.
fn run_path(problem: &Problem<'_>, plan: &Plan) -> Result<PathResult> {
    let segments: Vec<usize> = (1..=plan.max_segments).collect();
    let arms = if plan.methods.contains(&Method::AbTest) {
        standard_arms(problem.pop().space())?
    } else {
        Vec::new()
    };
    let mut columns: Vec<(Method, Vec<f64>)> = Vec::new();
    let mut seeds: Vec<Vec<Vec<FeasibleTreatment>>> = vec![Vec::new(); plan.max_segments];
    for &m in plan.methods.iter().filter(|m| **m != Method::Coarse) {
        let mut col = Vec::with_capacity(segments.len());
        match m {
            Method::Blanket => {
                let b = blanket(problem, None)?;
                for s in seeds.iter_mut() {
                    s.push(vec![b.treatment]);
                }
                col = vec![b.report.total_profit; segments.len()];
            }
            Method::AbTest => {
                for &l in &segments {
                    let ab = ab_test_policy(problem, &arms, l.min(arms.len()))?;
                    seeds[l - 1].push(ab.policy.treatments);
                    col.push(ab.report.total_profit);
                }
            }
            _ => {
                let feature = m.feature().expect("k-means method");
                for &l in &segments {
                    let b =
                        segment_then_personalize(problem, l, feature, &kmeans_options(plan, l, m))?;
                    seeds[l - 1].push(b.policy.treatments);
                    col.push(b.report.total_profit);
                }
            }
        }
        columns.push((m, col));
    }
    let mut coarse = Vec::new();
    if plan.methods.contains(&Method::Coarse) {
        let solver = Solver::new(problem, plan.solver.clone())?;
        coarse = solver.solve_path(plan.max_segments, &seeds)?;
        columns.insert(
            0,
            (
                Method::Coarse,
                coarse.iter().map(|s| s.report.total_profit).collect(),
            ),
        );
    }
    Ok(PathResult {
        table: ProfitTable {
            segments,
            granular: problem.granular().total(),
            columns,
        },
        coarse,
    })
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn run_experiment(spec: &ExperimentSpec, base_dir: &Path) -> Result<ReportBundle> {
    let pop = spec.population(base_dir)?;
    if spec.max_segments == 0 || spec.max_segments > pop.len() {
        return Err(Error::Config(format!(
            "max_segments {} outside 1..={}",
            spec.max_segments,
            pop.len()
        )));
    }
    if let Some(s) = spec
        .rounding_steps
        .iter()
        .find(|s| !(s.is_finite() && **s > 0.0))
    {
        return Err(Error::Config(format!("rounding step {s} must be positive")));
    }
    let plan = Plan {
        methods: spec.methods()?,
        solver: spec.solver_config()?,
        max_segments: spec.max_segments,
        kmeans_starts: spec.kmeans_starts,
        seed: spec.seed,
    };
    let problem = if spec.zero_intercept {
        Problem::zero_intercept(&pop)
    } else {
        Problem::new(&pop)
    };
    let path = run_path(&problem, &plan)?;
    let table = &path.table;
    let mut files = BTreeMap::new();

    // Profit by number of segments, with ratios to the granular ceiling.
    let mut header: Vec<String> = vec!["segments".into(), "granular".into()];
    header.extend(table.columns.iter().map(|(m, _)| m.name().to_string()));
    header.extend(
        table
            .columns
            .iter()
            .map(|(m, _)| format!("{}_ratio", m.name())),
    );
    let rows = table.segments.iter().enumerate().map(|(k, l)| {
        let mut r = vec![l.to_string(), num(table.granular)];
        r.extend(table.columns.iter().map(|(_, c)| num(c[k])));
        r.extend(
            table
                .columns
                .iter()
                .map(|(_, c)| num(c[k] / table.granular)),
        );
        r
    });
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    files.insert("profit_by_segments.csv".to_string(), csv_text(&h, rows)?);

    let rounding = rounding_rows(&problem, &plan, &path.coarse, &spec.rounding_steps)?;
    files.insert(
        "rounding.csv".to_string(),
        csv_text(
            &[
                "segments",
                "variant",
                "step",
                "profit",
                "ratio_to_granular",
                "effective_treatments",
            ],
            rounding.iter().map(|r| {
                vec![
                    r.segments.to_string(),
                    r.variant.clone(),
                    num(r.step),
                    num(r.profit),
                    num(r.profit / table.granular),
                    r.effective_treatments.to_string(),
                ]
            }),
        )?,
    );

    let (surplus, by_treatment) = surplus_tables(&problem, &path.coarse)?;
    files.insert("surplus.csv".to_string(), surplus);
    files.insert("surplus_by_treatment.csv".to_string(), by_treatment);

    let (replicates, summary) = bootstrap_tables(&pop, &plan, spec)?;
    files.insert("bootstrap.csv".to_string(), replicates);
    files.insert("bootstrap_summary.csv".to_string(), summary);

    files.insert("traces.jsonl".to_string(), trace_lines(&path.coarse)?);

    let mut pop_csv = Vec::new();
    write_population(&mut pop_csv, &pop)?;
    let file_hashes: BTreeMap<&String, String> = files
        .iter()
        .map(|(k, v)| (k, sha256_hex(v.as_bytes())))
        .collect();
    let spec_json = serde_json::to_string(spec)?;
    let manifest = serde_json::json!({
        "generator": format!("coarse {}", env!("CARGO_PKG_VERSION")),
        "seed": spec.seed,
        "spec": spec,
        "spec_sha256": sha256_hex(spec_json.as_bytes()),
        "population_sha256": sha256_hex(&pop_csv),
        "individuals": pop.len(),
        "files": file_hashes,
    });
    files.insert(
        "manifest.json".to_string(),
        serde_json::to_string_pretty(&manifest)? + "\n",
    );

    Ok(ReportBundle {
        files,
        profits: path.table,
        rounding,
        coarse: path.coarse,
    })
}

/// Ex-post rounding of the unrounded solutions, and ex-ante solves from the
/// coarsest step to the finest. A finer run is seeded with the coarser
/// solution when the coarser grid is contained in the finer one.
fn rounding_rows(
    problem: &Problem<'_>,
    plan: &Plan,
    coarse: &[Solution],
    steps: &[f64],
) -> Result<Vec<RoundingRow>> {
    let mut rows = Vec::new();
    if coarse.is_empty() {
        return Ok(rows);
    }
    for s in coarse {
        rows.push(RoundingRow {
            segments: s.policy.num_treatments(),
            variant: "none".into(),
            step: 0.0,
            profit: s.report.total_profit,
            effective_treatments: s.policy.unique_treatments(),
        });
    }
    let mut ordered = steps.to_vec();
    ordered.sort_by(|a, b| b.total_cmp(a));
    ordered.dedup();
    let mut previous: Option<(f64, Vec<Solution>)> = None;
    for &step in &ordered {
        let seeds: Vec<Vec<Vec<FeasibleTreatment>>> = match &previous {
            Some((prev, sols)) if nests(*prev, step) => sols
                .iter()
                .map(|s| vec![s.policy.treatments.clone()])
                .collect(),
            _ => Vec::new(),
        };
        let cfg = SolverConfig {
            round_step: step,
            ..plan.solver.clone()
        };
        let sols = Solver::new(problem, cfg)?.solve_path(plan.max_segments, &seeds)?;
        for s in &sols {
            rows.push(RoundingRow {
                segments: s.policy.num_treatments(),
                variant: "ex-ante".into(),
                step,
                profit: s.report.total_profit,
                effective_treatments: s.policy.unique_treatments(),
            });
        }
        for s in coarse {
            let r = round_policy_expost(problem, &s.policy, step)?;
            rows.push(RoundingRow {
                segments: s.policy.num_treatments(),
                variant: "ex-post".into(),
                step,
                profit: r.report.total_profit,
                effective_treatments: r.effective_treatments,
            });
        }
        previous = Some((step, sols));
    }
    Ok(rows)
}

/// Whether every multiple of `coarse` is a multiple of `fine`.
fn nests(coarse: f64, fine: f64) -> bool {
    let ratio = coarse / fine;
    (ratio - ratio.round()).abs() < 1e-9
}

fn surplus_tables(problem: &Problem<'_>, coarse: &[Solution]) -> Result<(String, String)> {
    let mut overall = Vec::new();
    let mut by_treatment = Vec::new();
    for s in coarse {
        let l = s.policy.num_treatments();
        let r = surplus_decomposition(problem, &s.policy)?;
        let o = &r.overall;
        overall.push(vec![
            l.to_string(),
            num(o.consumer),
            num(o.producer),
            num(o.total),
            num(o.consumer_positive_pct),
            num(o.producer_positive_pct),
            num(o.total_positive_pct),
        ]);
        for (k, (t, a)) in r.by_treatment.iter().enumerate() {
            let (dim, value) = t.map_or((String::new(), String::new()), |t| {
                ((t.dim + 1).to_string(), num(t.value))
            });
            by_treatment.push(vec![
                l.to_string(),
                k.to_string(),
                dim,
                value,
                a.members.to_string(),
                num(a.consumer),
                num(a.producer),
                num(a.total),
                num(a.consumer_positive_pct),
                num(a.producer_positive_pct),
                num(a.total_positive_pct),
            ]);
        }
    }
    let head = [
        "delta_cs",
        "delta_ps",
        "delta_ts",
        "cs_positive_pct",
        "ps_positive_pct",
        "ts_positive_pct",
    ];
    let mut h1 = vec!["segments"];
    h1.extend(head);
    let mut h2 = vec!["segments", "treatment", "dim", "value", "members"];
    h2.extend(head);
    Ok((csv_text(&h1, overall)?, csv_text(&h2, by_treatment)?))
}

fn bootstrap_tables(
    pop: &Population,
    plan: &Plan,
    spec: &ExperimentSpec,
) -> Result<(String, String)> {
    let b = spec.bootstrap;
    let tables: Vec<ProfitTable> = (0..b)
        .into_par_iter()
        .map(|r| {
            let sample = pop.subset(&resample_indices(
                pop.len(),
                spec.seed,
                r,
                Resample::WithReplacement,
            ));
            let problem = if spec.zero_intercept {
                Problem::zero_intercept(&sample)
            } else {
                Problem::owned(sample)
            };
            run_path(&problem, plan).map(|p| p.table)
        })
        .collect::<Result<_>>()?;
    let mut names: Vec<String> = vec!["granular".into()];
    names.extend(plan.methods.iter().map(|m| m.name().to_string()));
    let value = |t: &ProfitTable, name: &str, k: usize| -> f64 {
        if name == "granular" {
            t.granular
        } else {
            let m: Method = name.parse().expect("known method");
            t.column(m).expect("method column")[k]
        }
    };
    let mut reps = Vec::new();
    let mut summary = Vec::new();
    for l in 1..=plan.max_segments {
        for name in &names {
            let values: Vec<f64> = tables.iter().map(|t| value(t, name, l - 1)).collect();
            for (r, v) in values.iter().enumerate() {
                reps.push(vec![r.to_string(), l.to_string(), name.clone(), num(*v)]);
            }
            if !values.is_empty() {
                let (mean, sd) = mean_sd(&values);
                summary.push(vec![
                    l.to_string(),
                    name.clone(),
                    values.len().to_string(),
                    num(mean),
                    num(sd),
                ]);
            }
        }
    }
    Ok((
        csv_text(&["replicate", "segments", "method", "profit"], reps)?,
        csv_text(&["segments", "method", "replicates", "mean", "sd"], summary)?,
    ))
}

fn trace_lines(coarse: &[Solution]) -> Result<String> {
    let mut out = String::new();
    for s in coarse {
        let t = &s.trace;
        for it in &t.iterations {
            let treatments: Vec<serde_json::Value> = it
                .treatments
                .iter()
                .map(|x| serde_json::json!({ "dim": x.dim + 1, "value": x.value }))
                .collect();
            let line = serde_json::json!({
                "segments": t.num_treatments,
                "start": t.start,
                "start_kind": t.start_kind,
                "termination": t.termination,
                "iteration": it.iteration,
                "total_profit": it.total_profit,
                "squared_regret": it.squared_regret,
                "counts": it.counts,
                "treatments": treatments,
            });
            writeln!(out, "{}", serde_json::to_string(&line)?).expect("writing to a string");
        }
    }
    Ok(out)
}
