//! Sampling synthetic rows from a trained model.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Block, Condition, HeadOutput, Mode, Model};
use crate::nn::{gauss_sample, Real, Rng};
use crate::schema::{format_number, FeatureKind, RawTable};

/// Rows decoded per independently seeded chunk.
pub const CHUNK_ROWS: usize = 1024;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisRequest {
    pub n_rows: usize,
    pub seed: u64,
    pub condition: Option<Condition>,
}

impl SynthesisRequest {
    pub fn new(n_rows: usize, seed: u64) -> Self {
        Self {
            n_rows,
            seed,
            condition: None,
        }
    }

    pub fn with_condition(mut self, condition: Condition) -> Self {
        self.condition = Some(condition);
        self
    }
}

/// Mapping from a reconstructed embedding to a level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingDecode {
    /// Nearest table row in Euclidean distance, ties to the lowest code.
    #[default]
    Nearest,
    /// Draw with probability proportional to `exp(-d^2 / temperature)`.
    SoftmaxDistance { temperature: f64 },
}

/// Mapping from a softmax head over 3+ levels to a level. Binary heads are
/// always sampled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OneHotDecode {
    #[default]
    Argmax,
    Sample,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleOptions {
    pub embedding: EmbeddingDecode,
    pub onehot: OneHotDecode,
}

/// Index of the row among the first `candidates` rows of `table` closest to
/// `point`; ties go to the lowest index.
pub fn nearest_row<T: Real>(table: &Array2<T>, candidates: usize, point: ArrayView1<T>) -> usize {
    let mut best = 0;
    let mut best_d = T::infinity();
    for (i, row) in table.rows().into_iter().take(candidates).enumerate() {
        let d = row
            .iter()
            .zip(point.iter())
            .map(|(&a, &b)| (a - b) * (a - b))
            .fold(T::zero(), |acc, v| acc + v);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

fn argmax<T: Real>(row: ArrayView1<T>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn draw<T: Real>(row: ArrayView1<T>, rng: &mut Rng) -> usize {
    let w: Vec<f64> = row.iter().map(|v| v.to_f64_lossy().max(0.0)).collect();
    rng.categorical(&w)
}

/// Draws `request.n_rows` rows from the prior and decodes them to raw values.
///
/// A conditional model sampled without a condition uses the all-mask vector.
pub fn sample<T: Real>(
    model: &Model<T>,
    request: &SynthesisRequest,
    options: &SampleOptions,
) -> Result<RawTable> {
    if request.n_rows == 0 {
        return Err(Error::Usage("n_rows must be at least 1".into()));
    }
    let cond_vec = match (model.mode(), &request.condition) {
        (Mode::Conditional, c) => Some(model.conditional_vector(&c.clone().unwrap_or_default())?),
        (_, Some(c)) if !c.is_empty() => {
            return Err(Error::Usage(
                "conditional sampling needs a conditional-mode checkpoint".into(),
            ))
        }
        _ => None,
    };
    let schema = model.data_schema();
    let base = Rng::new(request.seed);
    let mut rows = Vec::with_capacity(request.n_rows);
    let mut start = 0;
    let mut chunk = 0u64;
    while start < request.n_rows {
        let n = CHUNK_ROWS.min(request.n_rows - start);
        let mut rng = base.derive(chunk);
        let z = gauss_sample::<T>(&mut rng, n, model.latent_dim());
        let cond = cond_vec.as_ref().map(|v| model.condition_matrix(v, n));
        let outputs = model.decode_batch(&z, cond.as_ref())?;
        let mut chunk_rows = vec![Vec::with_capacity(schema.len()); n];
        for (fi, ((f, block), out)) in schema
            .features
            .iter()
            .zip(model.blocks())
            .zip(&outputs)
            .enumerate()
        {
            match (block, out) {
                (Block::Embedded { .. }, HeadOutput::Embedding(e)) => {
                    let table = model.embedding_table(fi).expect("embedded feature");
                    // the mask level, when present, is the extra last row
                    let candidates = f.cardinality();
                    for (r, row) in chunk_rows.iter_mut().enumerate() {
                        let code = match options.embedding {
                            EmbeddingDecode::Nearest => nearest_row(table, candidates, e.row(r)),
                            EmbeddingDecode::SoftmaxDistance { temperature } => {
                                let d: Vec<f64> = table
                                    .rows()
                                    .into_iter()
                                    .take(candidates)
                                    .map(|t| {
                                        t.iter()
                                            .zip(e.row(r).iter())
                                            .map(|(&a, &b)| ((a - b) * (a - b)).to_f64_lossy())
                                            .sum::<f64>()
                                    })
                                    .collect();
                                let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
                                let w: Vec<f64> =
                                    d.iter().map(|x| (-(x - min) / temperature).exp()).collect();
                                rng.categorical(&w)
                            }
                        };
                        row.push(f.levels[code].clone());
                    }
                }
                (Block::OneHot { .. }, HeadOutput::Probabilities(p)) => {
                    let sampled =
                        f.kind == FeatureKind::Binary || options.onehot == OneHotDecode::Sample;
                    for (r, row) in chunk_rows.iter_mut().enumerate() {
                        let code = if sampled {
                            draw(p.row(r), &mut rng)
                        } else {
                            argmax(p.row(r))
                        };
                        row.push(f.levels[code].clone());
                    }
                }
                (Block::Numeric { .. }, HeadOutput::Value(v)) => {
                    let mean = f.mean.unwrap_or(0.0);
                    let sd = f.sd.unwrap_or(1.0);
                    for (r, row) in chunk_rows.iter_mut().enumerate() {
                        row.push(format_number(v[[r, 0]].to_f64_lossy() * sd + mean));
                    }
                }
                _ => return Err(Error::schema("decoder output does not match feature block")),
            }
        }
        rows.extend(chunk_rows);
        start += n;
        chunk += 1;
    }
    Ok(RawTable::new(schema.names(), rows))
}

/// Sampling with the conditional embedding vector of `request.condition`
/// appended to every decoder input.
pub fn conditional_sample<T: Real>(
    model: &Model<T>,
    request: &SynthesisRequest,
    options: &SampleOptions,
) -> Result<RawTable> {
    if model.mode() != Mode::Conditional {
        return Err(Error::Usage(
            "conditional sampling needs a conditional-mode checkpoint".into(),
        ));
    }
    if request.condition.is_none() {
        return Err(Error::Usage(
            "conditional sampling needs a condition".into(),
        ));
    }
    sample(model, request, options)
}
