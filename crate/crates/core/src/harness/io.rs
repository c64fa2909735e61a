//! Delimited-text population and arm files, JSON policy files.
//!
//! Dimension suffixes in column names are one-based.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibrate::{ArmEstimates, ArmRow};
use crate::model::{FeasibleTreatment, Individual, Population, SegmentedPolicy, TreatmentSpace};
use crate::{Error, Result};

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    })
}

fn parse_num(field: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::data(line, format!("column {column}: '{field}' is not a number")))?;
    if !v.is_finite() {
        return Err(Error::data(
            line,
            format!("column {column}: non-finite value"),
        ));
    }
    Ok(v)
}

/// Fills missing cost scales with the per-dimension median of the observed ones.
fn impute_costs(costs: &mut [Vec<Option<f64>>], dims: usize) -> Result<()> {
    for d in 0..dims {
        let mut seen: Vec<f64> = costs.iter().filter_map(|c| c[d]).collect();
        if seen.len() == costs.len() {
            continue;
        }
        let m = median(&mut seen).ok_or_else(|| {
            Error::data(0, format!("cost_scale_{} is missing for every row", d + 1))
        })?;
        for c in costs.iter_mut() {
            c[d].get_or_insert(m);
        }
    }
    Ok(())
}

struct Layout {
    id: usize,
    alpha: Vec<usize>,
    beta: Vec<usize>,
    cost: Vec<usize>,
    covariates: Vec<(usize, String)>,
}

fn find(header: &csv::StringRecord, name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::data(1, format!("missing column {name}")))
}

fn population_layout(header: &csv::StringRecord, dims: usize) -> Result<Layout> {
    let cols = |prefix: &str| {
        (1..=dims)
            .map(|d| find(header, &format!("{prefix}_{d}")))
            .collect::<Result<Vec<_>>>()
    };
    Ok(Layout {
        id: find(header, "id")?,
        alpha: cols("alpha")?,
        beta: cols("beta")?,
        cost: cols("cost_scale")?,
        covariates: header
            .iter()
            .enumerate()
            .filter(|(_, h)| h.trim().starts_with("x_"))
            .map(|(i, h)| (i, h.trim().to_string()))
            .collect(),
    })
}

/// Reads a population; the number of `beta_*` columns must match `space`.
pub fn read_population<R: Read>(reader: R, space: &TreatmentSpace) -> Result<Population> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let dims = space.dims();
    let found = header
        .iter()
        .filter(|h| h.trim().starts_with("beta_"))
        .count();
    if found != dims {
        return Err(Error::data(
            1,
            format!("{found} beta columns for a {dims}-dimensional treatment space"),
        ));
    }
    let layout = population_layout(&header, dims)?;
    let mut ids = HashSet::new();
    let mut rows: Vec<(usize, Individual)> = Vec::new();
    let mut costs: Vec<Vec<Option<f64>>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let get = |i: usize| rec.get(i).ok_or_else(|| Error::data(line, "short row"));
        let id = get(layout.id)?.trim().to_string();
        if !ids.insert(id.clone()) {
            return Err(Error::data(line, format!("duplicate id {id}")));
        }
        let mut alpha = Vec::with_capacity(dims);
        let mut beta = Vec::with_capacity(dims);
        let mut cost = Vec::with_capacity(dims);
        for d in 0..dims {
            alpha.push(parse_num(
                get(layout.alpha[d])?,
                line,
                &format!("alpha_{}", d + 1),
            )?);
            let b = parse_num(get(layout.beta[d])?, line, &format!("beta_{}", d + 1))?;
            if b < 0.0 {
                return Err(Error::data(line, format!("beta_{} is negative", d + 1)));
            }
            beta.push(b);
            let raw = get(layout.cost[d])?;
            if raw.trim().is_empty() {
                cost.push(None);
            } else {
                let s = parse_num(raw, line, &format!("cost_scale_{}", d + 1))?;
                if s <= 0.0 {
                    return Err(Error::data(
                        line,
                        format!("cost_scale_{} must be positive", d + 1),
                    ));
                }
                cost.push(Some(s));
            }
        }
        let x = layout
            .covariates
            .iter()
            .map(|(i, name)| parse_num(get(*i)?, line, name))
            .collect::<Result<Vec<_>>>()?;
        rows.push((
            line,
            Individual::new(id, alpha, beta, vec![]).with_covariates(x),
        ));
        costs.push(cost);
    }
    impute_costs(&mut costs, dims)?;
    let names = layout.covariates.into_iter().map(|(_, n)| n).collect();
    let mut pop = Population::with_covariates(space.clone(), names);
    for ((line, mut ind), cost) in rows.into_iter().zip(costs) {
        ind.cost_scale = cost.into_iter().map(|c| c.expect("imputed")).collect();
        pop.push(ind)
            .map_err(|e| Error::data(line, e.to_string()))?;
    }
    Ok(pop)
}

pub fn load_population(path: &Path, space: &TreatmentSpace) -> Result<Population> {
    read_population(BufReader::new(File::open(path)?), space)
}

/// Shortest round-trip decimal form.
fn num(v: f64) -> String {
    format!("{v}")
}

pub fn write_population<W: Write>(writer: W, pop: &Population) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let d = pop.dims();
    let mut header = vec!["id".to_string()];
    for prefix in ["alpha", "beta", "cost_scale"] {
        header.extend((1..=d).map(|k| format!("{prefix}_{k}")));
    }
    header.extend(pop.covariate_names().iter().cloned());
    w.write_record(&header)?;
    for ind in pop.iter() {
        let mut row = vec![ind.id.to_string()];
        for field in [ind.alpha, ind.beta, ind.cost_scale, ind.covariates] {
            row.extend(field.iter().map(|v| num(*v)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_population(path: &Path, pop: &Population) -> Result<()> {
    write_population(BufWriter::new(File::create(path)?), pop)
}

/// A treatment as written to policy files; `dim` is one-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreatmentRecord {
    pub dim: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub treatments: Vec<TreatmentRecord>,
    pub assignment: Vec<usize>,
    pub masses: Vec<f64>,
    #[serde(default)]
    pub holdout: bool,
    pub seed: u64,
    /// Echo of the configuration that produced the policy.
    pub config: serde_json::Value,
}

impl PolicyFile {
    pub fn new(policy: &SegmentedPolicy, seed: u64, config: serde_json::Value) -> Self {
        Self {
            treatments: policy
                .treatments
                .iter()
                .map(|t| TreatmentRecord {
                    dim: t.dim + 1,
                    value: t.value,
                })
                .collect(),
            assignment: policy.assignment.clone(),
            masses: policy.masses.clone(),
            holdout: policy.holdout,
            seed,
            config,
        }
    }

    pub fn to_policy(&self) -> Result<SegmentedPolicy> {
        let treatments = self
            .treatments
            .iter()
            .map(|t| {
                if t.dim == 0 {
                    return Err(Error::Structural(
                        "policy dimensions are numbered from 1".into(),
                    ));
                }
                Ok(FeasibleTreatment {
                    dim: t.dim - 1,
                    value: t.value,
                })
            })
            .collect::<Result<_>>()?;
        Ok(SegmentedPolicy {
            treatments,
            assignment: self.assignment.clone(),
            masses: self.masses.clone(),
            holdout: self.holdout,
        })
    }
}

pub fn save_policy(path: &Path, file: &PolicyFile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, file)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<PolicyFile> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

fn level_label(v: f64) -> String {
    num(v)
}

/// Reads `id, tau_<dim>_<level>…, cost_scale_<dim>…` plus optional
/// `holdout_dim`, `holdout_level` and `x_*` columns.
pub fn read_arms<R: Read>(reader: R, space: &TreatmentSpace) -> Result<ArmEstimates> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let dims = space.dims();
    let mut arm_cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); dims];
    for (i, h) in header.iter().enumerate() {
        let Some(rest) = h.trim().strip_prefix("tau_") else {
            continue;
        };
        let (d, level) = rest
            .split_once('_')
            .ok_or_else(|| Error::data(1, format!("arm column {h} is not tau_<dim>_<level>")))?;
        let d: usize = d
            .parse()
            .map_err(|_| Error::data(1, format!("bad dimension in {h}")))?;
        if d == 0 || d > dims {
            return Err(Error::data(
                1,
                format!("arm column {h} names dimension outside 1..={dims}"),
            ));
        }
        arm_cols[d - 1].push((i, parse_num(level, 1, h)?));
    }
    let id_col = find(&header, "id")?;
    let cost_cols = (1..=dims)
        .map(|d| find(&header, &format!("cost_scale_{d}")))
        .collect::<Result<Vec<_>>>()?;
    let hd_col = header.iter().position(|h| h.trim() == "holdout_dim");
    let hl_col = header.iter().position(|h| h.trim() == "holdout_level");
    let cov: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.trim().starts_with("x_"))
        .map(|(i, h)| (i, h.trim().to_string()))
        .collect();
    let levels: Vec<Vec<f64>> = arm_cols
        .iter()
        .map(|c| c.iter().map(|(_, l)| *l).collect())
        .collect();

    let mut ids = HashSet::new();
    let mut rows = Vec::new();
    let mut costs: Vec<Vec<Option<f64>>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let get = |i: usize| rec.get(i).ok_or_else(|| Error::data(line, "short row"));
        let id = get(id_col)?.trim().to_string();
        if !ids.insert(id.clone()) {
            return Err(Error::data(line, format!("duplicate id {id}")));
        }
        let estimates = arm_cols
            .iter()
            .map(|cols| {
                cols.iter()
                    .map(|(i, _)| parse_num(get(*i)?, line, &header[*i]))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cost = Vec::with_capacity(dims);
        for (d, &c) in cost_cols.iter().enumerate() {
            let raw = get(c)?;
            if raw.trim().is_empty() {
                cost.push(None);
            } else {
                let s = parse_num(raw, line, &format!("cost_scale_{}", d + 1))?;
                if s <= 0.0 {
                    return Err(Error::data(
                        line,
                        format!("cost_scale_{} must be positive", d + 1),
                    ));
                }
                cost.push(Some(s));
            }
        }
        let holdout = match (hd_col, hl_col) {
            (Some(a), Some(b)) if !get(a)?.trim().is_empty() => {
                let d: usize = get(a)?
                    .trim()
                    .parse()
                    .map_err(|_| Error::data(line, "holdout_dim is not an integer"))?;
                if d == 0 || d > dims {
                    return Err(Error::data(
                        line,
                        format!("holdout_dim {d} outside 1..={dims}"),
                    ));
                }
                let level = parse_num(get(b)?, line, "holdout_level")?;
                let k = levels[d - 1]
                    .iter()
                    .position(|l| *l == level)
                    .ok_or_else(|| {
                        Error::data(
                            line,
                            format!("holdout level {level} is not an arm of dimension {d}"),
                        )
                    })?;
                Some((d - 1, k))
            }
            _ => None,
        };
        let covariates = cov
            .iter()
            .map(|(i, n)| parse_num(get(*i)?, line, n))
            .collect::<Result<Vec<_>>>()?;
        rows.push(ArmRow {
            id,
            estimates,
            cost_scale: vec![],
            holdout,
            covariates,
        });
        costs.push(cost);
    }
    impute_costs(&mut costs, dims)?;
    for (r, c) in rows.iter_mut().zip(costs) {
        r.cost_scale = c.into_iter().map(|v| v.expect("imputed")).collect();
    }
    ArmEstimates::new(
        space.clone(),
        levels,
        cov.into_iter().map(|(_, n)| n).collect(),
        rows,
    )
}

pub fn load_arms(path: &Path, space: &TreatmentSpace) -> Result<ArmEstimates> {
    read_arms(BufReader::new(File::open(path)?), space)
}

pub fn write_arms<W: Write>(writer: W, arms: &ArmEstimates) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let dims = arms.levels().len();
    let mut header = vec!["id".to_string()];
    for (d, lv) in arms.levels().iter().enumerate() {
        header.extend(
            lv.iter()
                .map(|l| format!("tau_{}_{}", d + 1, level_label(*l))),
        );
    }
    header.extend((1..=dims).map(|d| format!("cost_scale_{d}")));
    header.push("holdout_dim".into());
    header.push("holdout_level".into());
    header.extend(arms.covariate_names().iter().cloned());
    w.write_record(&header)?;
    for r in arms.rows() {
        let mut row = vec![r.id.clone()];
        for e in &r.estimates {
            row.extend(e.iter().map(|v| num(*v)));
        }
        row.extend(r.cost_scale.iter().map(|v| num(*v)));
        match r.holdout {
            Some((d, k)) => {
                row.push((d + 1).to_string());
                row.push(num(arms.levels()[d][k]));
            }
            None => {
                row.push(String::new());
                row.push(String::new());
            }
        }
        row.extend(r.covariates.iter().map(|v| num(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_arms(path: &Path, arms: &ArmEstimates) -> Result<()> {
    write_arms(BufWriter::new(File::create(path)?), arms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> TreatmentSpace {
        TreatmentSpace::promotions()
    }

    #[test]
    fn population_round_trip() {
        let cfg = crate::harness::synth::SynthConfig::promotions(50, 3);
        let pop = crate::harness::synth::generate_population(&cfg).unwrap();
        let mut buf = Vec::new();
        write_population(&mut buf, &pop).unwrap();
        assert_eq!(read_population(buf.as_slice(), &space()).unwrap(), pop);
    }

    #[test]
    fn nonpositive_cost_reports_line() {
        let text = "id,alpha_1,alpha_2,beta_1,beta_2,cost_scale_1,cost_scale_2\na,0,0,1,1,1,0.2\nb,0,0,1,1,0,0.2\n";
        match read_population(text.as_bytes(), &space()) {
            Err(Error::Data { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "id,alpha_1,alpha_2,beta_1,beta_2,cost_scale_1,cost_scale_2\na,0,0,1,1,1,0.2\na,0,0,1,1,1,0.2\n";
        assert!(matches!(
            read_population(text.as_bytes(), &space()),
            Err(Error::Data { line: 3, .. })
        ));
    }

    #[test]
    fn missing_cost_is_median_imputed() {
        let text = "id,alpha_1,alpha_2,beta_1,beta_2,cost_scale_1,cost_scale_2\n\
                    a,0,0,1,1,1,0.1\nb,0,0,1,1,1,0.3\nc,0,0,1,1,1,\nd,0,0,1,1,1,0.2\n";
        let pop = read_population(text.as_bytes(), &space()).unwrap();
        assert_eq!(pop.get(2).cost_scale[1], 0.2);
    }

    #[test]
    fn arms_round_trip() {
        let cfg = crate::harness::synth::SynthConfig::promotions(20, 5);
        let pop = crate::harness::synth::generate_population(&cfg).unwrap();
        let arms = crate::harness::synth::synthesize_arms(
            &pop,
            vec![vec![2.0, 3.0, 4.0, 5.0], vec![5.0, 10.0, 15.0, 20.0]],
            0.1,
            9,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_arms(&mut buf, &arms).unwrap();
        assert_eq!(read_arms(buf.as_slice(), &space()).unwrap(), arms);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn policy_round_trips(
                offers in proptest::collection::vec(crate::testing::treatment(), 1..6),
                picks in proptest::collection::vec(0..6usize, 1..50),
                holdout in any::<bool>(),
                seed in any::<u64>(),
            ) {
                let cells = offers.len() + usize::from(holdout);
                let assignment: Vec<usize> = picks.iter().map(|p| p % cells).collect();
                let policy = SegmentedPolicy::from_assignment(offers, assignment, holdout);
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("policy.json");
                let file = PolicyFile::new(&policy, seed, serde_json::json!({"seed": seed}));
                save_policy(&path, &file).unwrap();
                let back = load_policy(&path).unwrap();
                prop_assert_eq!(&back, &file);
                prop_assert_eq!(back.to_policy().unwrap(), policy);
            }

            #[test]
            fn population_file_round_trips(pop in crate::testing::population(1..30)) {
                let mut buf = Vec::new();
                write_population(&mut buf, &pop).unwrap();
                prop_assert_eq!(read_population(buf.as_slice(), pop.space()).unwrap(), pop);
            }
        }
    }
}
