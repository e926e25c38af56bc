//! Marginal and pairwise fidelity scores of synthetic against real rows.
//!
//! Every score is a complement of a distance, so 1.0 means the compared
//! distributions agree exactly on that statistic.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{FeatureKind, LevelPolicy, RawTable, Schema};

fn non_empty<T>(name: &str, a: &[T], b: &[T]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::data(format!("{name}: empty sample")));
    }
    Ok(())
}

/// `sup_x |F_n(x) - G_m(x)|` for two samples, by a sweep over the merged
/// sorted values.
pub fn ks_statistic(real: &[f64], synth: &[f64]) -> f64 {
    let mut a = real.to_vec();
    let mut b = synth.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut sup: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        sup = sup.max((i as f64 / n - j as f64 / m).abs());
    }
    sup
}

/// Complement of the two-sample Kolmogorov-Smirnov statistic.
pub fn ks_score(real: &[f64], synth: &[f64]) -> Result<f64> {
    non_empty("ks_score", real, synth)?;
    Ok(1.0 - ks_statistic(real, synth))
}

fn frequencies(codes: &[usize], levels: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; levels];
    for &c in codes {
        *counts
            .get_mut(c)
            .ok_or_else(|| Error::data(format!("code {c} out of range for {levels} levels")))? += 1;
    }
    let n = codes.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Complement of the total variation distance between level frequencies.
pub fn tvd_score(real: &[usize], synth: &[usize], levels: usize) -> Result<f64> {
    non_empty("tvd_score", real, synth)?;
    let r = frequencies(real, levels)?;
    let s = frequencies(synth, levels)?;
    let tvd = 0.5 * r.iter().zip(&s).map(|(a, b)| (a - b).abs()).sum::<f64>();
    Ok((1.0 - tvd).clamp(0.0, 1.0))
}

/// Complement of the total variation distance between joint (contingency
/// table) frequencies of two discrete columns.
pub fn pair_tvd_score(real: (&[usize], &[usize]), synth: (&[usize], &[usize])) -> Result<f64> {
    non_empty("pair_tvd_score", real.0, synth.0)?;
    if real.0.len() != real.1.len() || synth.0.len() != synth.1.len() {
        return Err(Error::data(
            "pair_tvd_score: paired columns differ in length",
        ));
    }
    let mut joint: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    let (n, m) = (real.0.len() as f64, synth.0.len() as f64);
    for (&a, &b) in real.0.iter().zip(real.1) {
        joint.entry((a, b)).or_default().0 += 1.0 / n;
    }
    for (&a, &b) in synth.0.iter().zip(synth.1) {
        joint.entry((a, b)).or_default().1 += 1.0 / m;
    }
    let tvd = 0.5 * joint.values().map(|(r, s)| (r - s).abs()).sum::<f64>();
    Ok((1.0 - tvd).clamp(0.0, 1.0))
}

/// Pearson correlation, `None` when either column is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// `1 - |corr(real) - corr(synth)| / 2`; `None` when a correlation is
/// undefined because a column is constant.
pub fn corr_score(real: (&[f64], &[f64]), synth: (&[f64], &[f64])) -> Result<Option<f64>> {
    non_empty("corr_score", real.0, synth.0)?;
    if real.0.len() != real.1.len() || synth.0.len() != synth.1.len() {
        return Err(Error::data("corr_score: paired columns differ in length"));
    }
    Ok(match (pearson(real.0, real.1), pearson(synth.0, synth.1)) {
        (Some(a), Some(b)) => Some((1.0 - (a - b).abs() / 2.0).clamp(0.0, 1.0)),
        _ => None,
    })
}

/// `1 - sum_l pi_l * KS_l` where `pi_l` is the real frequency of level `l` and
/// `KS_l` compares the numerical column conditioned on that level. Levels the
/// synthetic data never produces get `KS_l = 1`.
pub fn mixed_score(
    real_cat: &[usize],
    real_num: &[f64],
    synth_cat: &[usize],
    synth_num: &[f64],
) -> Result<f64> {
    if real_cat.is_empty() {
        return Err(Error::data("mixed_score: empty real sample"));
    }
    if real_cat.len() != real_num.len() || synth_cat.len() != synth_num.len() {
        return Err(Error::data("mixed_score: paired columns differ in length"));
    }
    let group = |cat: &[usize], num: &[f64]| {
        let mut g: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (&c, &x) in cat.iter().zip(num) {
            g.entry(c).or_default().push(x);
        }
        g
    };
    let real = group(real_cat, real_num);
    let synth = group(synth_cat, synth_num);
    let n = real_cat.len() as f64;
    let mut weighted = 0.0;
    for (level, values) in &real {
        let pi = values.len() as f64 / n;
        let ks = match synth.get(level) {
            Some(s) => ks_statistic(values, s),
            None => 1.0,
        };
        weighted += pi * ks;
    }
    Ok((1.0 - weighted).clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Categorical,
    Mixed,
    Correlation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalScore {
    pub feature: String,
    pub metric: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub first: String,
    pub second: String,
    pub kind: PairKind,
    pub score: f64,
}

/// Means per feature type, laid out as the usual results-table columns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub marginal_categorical: Option<f64>,
    pub marginal_numerical: Option<f64>,
    pub pairs_categorical: Option<f64>,
    pub pairs_mixed: Option<f64>,
    pub pairs_correlation: Option<f64>,
}

pub const SUMMARY_COLUMNS: [&str; 5] = [
    "marginal_categorical",
    "marginal_numerical",
    "pairs_categorical",
    "pairs_mixed",
    "pairs_correlation",
];

impl Summary {
    pub fn values(&self) -> [Option<f64>; 5] {
        [
            self.marginal_categorical,
            self.marginal_numerical,
            self.pairs_categorical,
            self.pairs_mixed,
            self.pairs_correlation,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub marginals: Vec<MarginalScore>,
    pub pairs: Vec<PairScore>,
    /// Numerical pairs whose correlation is undefined (a constant column).
    pub excluded_pairs: Vec<(String, String)>,
    pub summary: Summary,
}

impl FidelityReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Header plus one line with the five aggregate columns; undefined
    /// aggregates are left empty.
    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", SUMMARY_COLUMNS.join(","))?;
        let cells: Vec<String> = self
            .summary
            .values()
            .iter()
            .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
            .collect();
        writeln!(out, "{}", cells.join(","))?;
        Ok(())
    }

    /// Every score in the report, marginal and pairwise.
    pub fn all_scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.marginals
            .iter()
            .map(|m| m.score)
            .chain(self.pairs.iter().map(|p| p.score))
    }
}

enum EvalColumn {
    Codes(Vec<usize>, usize),
    Values(Vec<f64>),
}

fn eval_columns(schema: &Schema, table: &RawTable) -> Result<Vec<EvalColumn>> {
    let idx = table.column_indices(schema)?;
    let enc = crate::schema::encode(schema, table, LevelPolicy::Strict)?;
    schema
        .features
        .iter()
        .zip(&idx)
        .enumerate()
        .map(|(fi, (f, &ci))| {
            Ok(match f.kind {
                FeatureKind::Numerical => EvalColumn::Values(
                    table
                        .rows
                        .iter()
                        .map(|r| {
                            r[ci].trim().parse::<f64>().map_err(|_| {
                                Error::data(format!(
                                    "non-numeric token '{}' in '{}'",
                                    r[ci], f.name
                                ))
                            })
                        })
                        .collect::<Result<_>>()?,
                ),
                _ => EvalColumn::Codes(enc.codes(fi).expect("discrete").to_vec(), f.cardinality()),
            })
        })
        .collect()
}

fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Scores `synth` against `real` for every feature and every unordered
/// feature pair, routed by feature kinds.
pub fn evaluate(schema: &Schema, real: &RawTable, synth: &RawTable) -> Result<FidelityReport> {
    if real.is_empty() || synth.is_empty() {
        return Err(Error::data("evaluate: empty table"));
    }
    let rc = eval_columns(schema, real)?;
    let sc = eval_columns(schema, synth)?;
    let names = schema.names();

    let mut marginals = Vec::with_capacity(names.len());
    let (mut m_cat, mut m_num) = (Vec::new(), Vec::new());
    for ((name, r), s) in names.iter().zip(&rc).zip(&sc) {
        let (metric, score) = match (r, s) {
            (EvalColumn::Codes(a, c), EvalColumn::Codes(b, _)) => {
                let v = tvd_score(a, b, *c)?;
                m_cat.push(v);
                ("tvd", v)
            }
            (EvalColumn::Values(a), EvalColumn::Values(b)) => {
                let v = ks_score(a, b)?;
                m_num.push(v);
                ("ks", v)
            }
            _ => unreachable!("same schema"),
        };
        marginals.push(MarginalScore {
            feature: name.clone(),
            metric: metric.to_string(),
            score,
        });
    }

    let mut pairs = Vec::new();
    let mut excluded_pairs = Vec::new();
    let mut by_kind: HashMap<PairKind, Vec<f64>> = HashMap::new();
    for i in 0..names.len() {
        for j in (i + 1)..names.len() {
            let scored = match (&rc[i], &rc[j], &sc[i], &sc[j]) {
                (
                    EvalColumn::Codes(a, _),
                    EvalColumn::Codes(b, _),
                    EvalColumn::Codes(x, _),
                    EvalColumn::Codes(y, _),
                ) => Some((PairKind::Categorical, pair_tvd_score((a, b), (x, y))?)),
                (
                    EvalColumn::Values(a),
                    EvalColumn::Values(b),
                    EvalColumn::Values(x),
                    EvalColumn::Values(y),
                ) => corr_score((a, b), (x, y))?.map(|v| (PairKind::Correlation, v)),
                (
                    EvalColumn::Codes(c, _),
                    EvalColumn::Values(v),
                    EvalColumn::Codes(sc_, _),
                    EvalColumn::Values(sv),
                )
                | (
                    EvalColumn::Values(v),
                    EvalColumn::Codes(c, _),
                    EvalColumn::Values(sv),
                    EvalColumn::Codes(sc_, _),
                ) => Some((PairKind::Mixed, mixed_score(c, v, sc_, sv)?)),
                _ => unreachable!("same schema"),
            };
            match scored {
                Some((kind, score)) => {
                    by_kind.entry(kind).or_default().push(score);
                    pairs.push(PairScore {
                        first: names[i].clone(),
                        second: names[j].clone(),
                        kind,
                        score,
                    });
                }
                None => excluded_pairs.push((names[i].clone(), names[j].clone())),
            }
        }
    }
    let agg = |k: PairKind| by_kind.get(&k).and_then(|v| mean(v));
    Ok(FidelityReport {
        marginals,
        pairs,
        excluded_pairs,
        summary: Summary {
            marginal_categorical: mean(&m_cat),
            marginal_numerical: mean(&m_num),
            pairs_categorical: agg(PairKind::Categorical),
            pairs_mixed: agg(PairKind::Mixed),
            pairs_correlation: agg(PairKind::Correlation),
        },
    })
}
