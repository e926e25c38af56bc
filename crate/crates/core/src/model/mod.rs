//! The variational autoencoder: dual-use embedding tables, encoder, decoder,
//! loss, training loop and the masked conditional variant.

mod checkpoint;
mod conditional;
mod config;
mod train;

use ndarray::{Array2, Axis};

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use conditional::{conditional_prepare, Condition, MASK_LEVEL};
pub use config::{EmbeddingDimRule, Mode, NumericHead, TrainConfig};
pub use train::{EpochLog, TrainLog};

use crate::error::{Error, Result};
use crate::nn::{
    column_variance_mean, softmax, DenseLayer, ParamId, ParamStore, Real, Rng, Tape, Var,
};
use crate::schema::{Column, EncodedDataset, FeatureKind, Schema};

/// How one feature enters the encoder and leaves the decoder.
#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    /// Embedding table row as input, tanh head reconstructing that row.
    Embedded {
        table: ParamId,
        cardinality: usize,
        dim: usize,
        head: DenseLayer,
        /// Position among embedded features (index into the frozen variances).
        slot: usize,
    },
    /// One-hot input, softmax head scored by cross-entropy.
    OneHot {
        cardinality: usize,
        head: DenseLayer,
    },
    /// Standardised scalar input, single-output head.
    Numeric { head: DenseLayer },
}

/// Decoder output for one feature.
#[derive(Clone, Debug)]
pub enum HeadOutput<T> {
    /// `n x k` reconstructed embedding coordinates in (-1, 1).
    Embedding(Array2<T>),
    /// `n x c` class probabilities.
    Probabilities(Array2<T>),
    /// `n x 1` standardised values.
    Value(Array2<T>),
}

/// A minibatch laid out per feature.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub n: usize,
    pub columns: Vec<BatchColumn<T>>,
}

#[derive(Clone, Debug)]
pub enum BatchColumn<T> {
    Codes(Vec<usize>),
    Values(Array2<T>),
}

impl<T: Real> Batch<T> {
    pub fn from_dataset(data: &EncodedDataset, rows: &[usize]) -> Self {
        let columns = data
            .columns
            .iter()
            .map(|c| match c {
                Column::Codes(v) => BatchColumn::Codes(rows.iter().map(|&i| v[i]).collect()),
                Column::Numeric(v) => {
                    BatchColumn::Values(Array2::from_shape_fn((rows.len(), 1), |(i, _)| {
                        T::lit(v[rows[i]])
                    }))
                }
            })
            .collect();
        Self {
            n: rows.len(),
            columns,
        }
    }

    pub fn full(data: &EncodedDataset) -> Self {
        let rows: Vec<usize> = (0..data.n_rows).collect();
        Self::from_dataset(data, &rows)
    }
}

/// Scalar loss components of one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub reg: f64,
}

/// `loss_factor * recon + kl_weight * kl + reg_weight * reg`.
pub fn combine_loss(config: &TrainConfig, recon: f64, kl: f64, reg: f64) -> f64 {
    config.loss_factor * recon + config.kl_weight * kl + config.reg_weight * reg
}

/// Handles to the loss nodes of a recorded forward pass.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
    pub reg: Var,
    pub mu: Var,
    pub logvar: Var,
}

impl LossVars {
    pub fn terms<T: Real>(&self, tape: &Tape<T>) -> LossTerms {
        LossTerms {
            total: tape.scalar(self.total).to_f64_lossy(),
            recon: tape.scalar(self.recon).to_f64_lossy(),
            kl: tape.scalar(self.kl).to_f64_lossy(),
            reg: tape.scalar(self.reg).to_f64_lossy(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Trunk {
    enc_in: DenseLayer,
    enc_hidden: DenseLayer,
    enc_mu: DenseLayer,
    enc_logvar: DenseLayer,
    dec_in: DenseLayer,
    dec_hidden: DenseLayer,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    data_schema: Schema,
    schema: Schema,
    config: TrainConfig,
    store: ParamStore<T>,
    blocks: Vec<Block>,
    trunk: Trunk,
    /// Coordinate-wise variance of each embedding table at initialisation.
    initial_variance: Vec<f64>,
    cond_width: usize,
}

impl<T: Real> Model<T> {
    /// Builds and initialises a model for `data_schema`.
    ///
    /// Embedding tables are uniform in (-0.5, 0.5) and their initial variances
    /// are frozen; dense layers use the fan-based uniform range with zero bias.
    pub fn new(data_schema: &Schema, config: TrainConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        data_schema.validate()?;
        let schema = match config.mode {
            Mode::Conditional => conditional_prepare(data_schema),
            _ => data_schema.clone(),
        };
        let embed = config.mode != Mode::BaselineOnehot;
        let mut store = ParamStore::new();
        let mut tables = Vec::new();
        let mut initial_variance = Vec::new();
        for f in &schema.features {
            if embed && f.kind == FeatureKind::Categorical {
                let k = config.embedding.dim(&f.name, f.cardinality());
                let t = Array2::from_shape_fn((f.cardinality(), k), |_| {
                    T::lit(rng.uniform_range(-0.5, 0.5))
                });
                initial_variance.push(column_variance_mean(&t).to_f64_lossy());
                tables.push(Some((store.add(format!("emb.{}", f.name), t), k)));
            } else {
                tables.push(None);
            }
        }
        let input_width: usize = schema
            .features
            .iter()
            .zip(&tables)
            .map(|(f, t)| match (t, f.kind) {
                (Some((_, k)), _) => *k,
                (None, FeatureKind::Numerical) => 1,
                (None, _) => f.cardinality(),
            })
            .sum();
        let cond_width = if config.mode == Mode::Conditional {
            tables.iter().flatten().map(|(_, k)| k).sum()
        } else {
            0
        };
        let h = config.hidden_dim;
        let a = config.latent_dim;
        let trunk = Trunk {
            enc_in: DenseLayer::new(&mut store, "enc.in", input_width + cond_width, h, rng),
            enc_hidden: DenseLayer::new(&mut store, "enc.hidden", h, h, rng),
            enc_mu: DenseLayer::new(&mut store, "enc.mu", h, a, rng),
            enc_logvar: DenseLayer::new(&mut store, "enc.logvar", h, a, rng),
            dec_in: DenseLayer::new(&mut store, "dec.in", a + cond_width, h, rng),
            dec_hidden: DenseLayer::new(&mut store, "dec.hidden", h, h, rng),
        };
        let mut blocks = Vec::with_capacity(schema.len());
        let mut slot = 0;
        for (f, t) in schema.features.iter().zip(&tables) {
            let name = format!("dec.head.{}", f.name);
            let block = match (t, f.kind) {
                (Some((table, k)), _) => {
                    let b = Block::Embedded {
                        table: *table,
                        cardinality: f.cardinality(),
                        dim: *k,
                        head: DenseLayer::new(&mut store, &name, h, *k, rng),
                        slot,
                    };
                    slot += 1;
                    b
                }
                (None, FeatureKind::Numerical) => Block::Numeric {
                    head: DenseLayer::new(&mut store, &name, h, 1, rng),
                },
                (None, _) => Block::OneHot {
                    cardinality: f.cardinality(),
                    head: DenseLayer::new(&mut store, &name, h, f.cardinality(), rng),
                },
            };
            blocks.push(block);
        }
        Ok(Self {
            data_schema: data_schema.clone(),
            schema,
            config,
            store,
            blocks,
            trunk,
            initial_variance,
            cond_width,
        })
    }

    /// Schema of the ingested data.
    pub fn data_schema(&self) -> &Schema {
        &self.data_schema
    }

    /// Schema the network is built on (with mask levels in conditional mode).
    pub fn model_schema(&self) -> &Schema {
        &self.schema
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn parameter_count(&self) -> usize {
        self.store.count()
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn cond_width(&self) -> usize {
        self.cond_width
    }

    pub fn initial_variances(&self) -> &[f64] {
        &self.initial_variance
    }

    /// Current coordinate-wise variance of each embedding table.
    pub fn current_variances(&self) -> Vec<f64> {
        self.embedded()
            .map(|(_, table, _)| column_variance_mean(self.store.value(table)).to_f64_lossy())
            .collect()
    }

    /// `(feature index, table, dim)` for every embedded feature, in slot order.
    pub fn embedded(&self) -> impl Iterator<Item = (usize, ParamId, usize)> + '_ {
        self.blocks.iter().enumerate().filter_map(|(i, b)| match b {
            Block::Embedded { table, dim, .. } => Some((i, *table, *dim)),
            _ => None,
        })
    }

    /// Width of the encoder input before any conditional vector is appended.
    pub fn input_width(&self) -> usize {
        self.trunk.enc_in.d_in - self.cond_width
    }

    pub fn embedding_table(&self, feature: usize) -> Option<&Array2<T>> {
        match &self.blocks[feature] {
            Block::Embedded { table, .. } => Some(self.store.value(*table)),
            _ => None,
        }
    }

    fn check_batch(&self, batch: &Batch<T>) -> Result<()> {
        if batch.n == 0 {
            return Err(Error::data("empty batch"));
        }
        if batch.columns.len() != self.blocks.len() {
            return Err(Error::schema(format!(
                "batch has {} columns, model expects {}",
                batch.columns.len(),
                self.blocks.len()
            )));
        }
        for ((col, f), data_f) in batch
            .columns
            .iter()
            .zip(&self.schema.features)
            .zip(&self.data_schema.features)
        {
            match col {
                BatchColumn::Codes(codes) => {
                    if f.kind == FeatureKind::Numerical || codes.len() != batch.n {
                        return Err(Error::schema(format!(
                            "column '{}' has the wrong type or length",
                            f.name
                        )));
                    }
                    let c = data_f.cardinality();
                    if let Some(bad) = codes.iter().find(|&&x| x >= c) {
                        return Err(Error::data(format!(
                            "label code {bad} out of range for '{}' ({c} levels)",
                            f.name
                        )));
                    }
                }
                BatchColumn::Values(v) => {
                    if f.kind != FeatureKind::Numerical || v.dim() != (batch.n, 1) {
                        return Err(Error::schema(format!(
                            "column '{}' has the wrong type or shape",
                            f.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn check_condition(&self, n: usize, cond: Option<&Array2<T>>) -> Result<()> {
        match (self.config.mode, cond) {
            (Mode::Conditional, Some(c)) if c.dim() == (n, self.cond_width) => Ok(()),
            (Mode::Conditional, Some(c)) => Err(Error::shape(format!(
                "conditional matrix {:?}, expected ({n}, {})",
                c.dim(),
                self.cond_width
            ))),
            (Mode::Conditional, None) => Err(Error::Usage(
                "conditional model needs a condition matrix".into(),
            )),
            (_, Some(_)) => Err(Error::Usage(
                "condition given to an unconditional model".into(),
            )),
            (_, None) => Ok(()),
        }
    }

    /// Records the encoder input. Returns the concatenated input and, per
    /// feature, the gathered embedding rows (also the reconstruction targets).
    fn record_input(
        &self,
        tape: &mut Tape<T>,
        batch: &Batch<T>,
        cond: Option<&Array2<T>>,
    ) -> Result<(Var, Vec<Option<Var>>, Vec<Var>)> {
        let mut parts = Vec::with_capacity(self.blocks.len() + 1);
        let mut targets = Vec::with_capacity(self.blocks.len());
        let mut tables = Vec::new();
        for (block, col) in self.blocks.iter().zip(&batch.columns) {
            match (block, col) {
                (Block::Embedded { table, .. }, BatchColumn::Codes(codes)) => {
                    let t = tape.param(&self.store, *table);
                    let e = tape.gather(t, codes)?;
                    tables.push(t);
                    parts.push(e);
                    targets.push(Some(e));
                }
                (Block::OneHot { cardinality, .. }, BatchColumn::Codes(codes)) => {
                    let mut oh = Array2::zeros((batch.n, *cardinality));
                    for (i, &c) in codes.iter().enumerate() {
                        oh[[i, c]] = T::one();
                    }
                    parts.push(tape.constant(oh));
                    targets.push(None);
                }
                (Block::Numeric { .. }, BatchColumn::Values(v)) => {
                    parts.push(tape.constant(v.clone()));
                    targets.push(None);
                }
                _ => return Err(Error::schema("batch column does not match feature block")),
            }
        }
        if let Some(c) = cond {
            if self.cond_width > 0 {
                parts.push(tape.constant(c.clone()));
            }
        }
        let x = tape.concat(&parts)?;
        Ok((x, targets, tables))
    }

    fn record_encoder(&self, tape: &mut Tape<T>, x: Var) -> Result<(Var, Var)> {
        let t = &self.trunk;
        let h = t.enc_in.forward(tape, &self.store, x)?;
        let h = tape.relu(h);
        let h = t.enc_hidden.forward(tape, &self.store, h)?;
        let h = tape.relu(h);
        let mu = t.enc_mu.forward(tape, &self.store, h)?;
        let logvar = t.enc_logvar.forward(tape, &self.store, h)?;
        Ok((mu, logvar))
    }

    /// Decoder trunk followed by the raw (pre-activation) head outputs.
    fn record_decoder(
        &self,
        tape: &mut Tape<T>,
        z: Var,
        cond: Option<&Array2<T>>,
    ) -> Result<Vec<Var>> {
        let t = &self.trunk;
        let input = match cond {
            Some(c) if self.cond_width > 0 => {
                let c = tape.constant(c.clone());
                tape.concat(&[z, c])?
            }
            _ => z,
        };
        let h = t.dec_in.forward(tape, &self.store, input)?;
        let h = tape.relu(h);
        let h = t.dec_hidden.forward(tape, &self.store, h)?;
        let h = tape.relu(h);
        self.blocks
            .iter()
            .map(|b| {
                let head = match b {
                    Block::Embedded { head, .. }
                    | Block::OneHot { head, .. }
                    | Block::Numeric { head } => head,
                };
                head.forward(tape, &self.store, h)
            })
            .collect()
    }

    /// Records the full loss for `batch` with reparameterisation noise `eps`
    /// (`n x latent_dim`). `cond` is required in conditional mode and is
    /// treated as a constant input.
    pub fn record_loss(
        &self,
        tape: &mut Tape<T>,
        batch: &Batch<T>,
        eps: &Array2<T>,
        cond: Option<&Array2<T>>,
    ) -> Result<LossVars> {
        self.check_batch(batch)?;
        self.check_condition(batch.n, cond)?;
        let n = batch.n;
        let a = self.config.latent_dim;
        if eps.dim() != (n, a) {
            return Err(Error::shape(format!(
                "noise {:?}, expected ({n}, {a})",
                eps.dim()
            )));
        }
        let (x, targets, tables) = self.record_input(tape, batch, cond)?;
        let (mu, logvar) = self.record_encoder(tape, x)?;

        let half = tape.scale(logvar, 0.5);
        let sigma = tape.exp(half);
        let eps_v = tape.constant(eps.clone());
        let noise = tape.mul(sigma, eps_v)?;
        let z = tape.add(mu, noise)?;

        let heads = self.record_decoder(tape, z, cond)?;
        let mut per_row: Option<Var> = None;
        for (((block, col), target), out) in self
            .blocks
            .iter()
            .zip(&batch.columns)
            .zip(&targets)
            .zip(heads)
        {
            let term = match (block, col) {
                (Block::Embedded { .. }, _) => {
                    let e_hat = tape.tanh(out);
                    let diff = tape.sub(target.expect("embedded target"), e_hat)?;
                    let sq = tape.square(diff);
                    tape.sum_cols(sq)
                }
                (Block::Numeric { .. }, BatchColumn::Values(v)) => {
                    let r_hat = match self.config.numeric_head {
                        NumericHead::Tanh => tape.tanh(out),
                        NumericHead::Linear => out,
                    };
                    let r = tape.constant(v.clone());
                    let diff = tape.sub(r, r_hat)?;
                    tape.square(diff)
                }
                (Block::OneHot { .. }, BatchColumn::Codes(codes)) => {
                    tape.softmax_xent(out, codes)?
                }
                _ => unreachable!("checked by check_batch"),
            };
            per_row = Some(match per_row {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        let inv_n = 1.0 / n as f64;
        let recon = match per_row {
            Some(r) => {
                let s = tape.sum_all(r);
                tape.scale(s, inv_n)
            }
            None => tape.constant(Array2::zeros((1, 1))),
        };

        // 0.5 * sum(mu^2 + sigma^2 - log sigma^2 - 1), averaged over rows
        let mu2 = tape.square(mu);
        let var = tape.exp(logvar);
        let k = tape.add(mu2, var)?;
        let k = tape.sub(k, logvar)?;
        let k = tape.add_scalar(k, -1.0);
        let k = tape.sum_all(k);
        let kl = tape.scale(k, 0.5 * inv_n);

        let reg = if tables.is_empty() {
            tape.constant(Array2::zeros((1, 1)))
        } else {
            let mut acc: Option<Var> = None;
            for (&t, &v0) in tables.iter().zip(&self.initial_variance) {
                let v = tape.col_var_mean(t);
                let d = tape.add_scalar(v, -v0);
                let d2 = tape.square(d);
                acc = Some(match acc {
                    None => d2,
                    Some(a) => tape.add(a, d2)?,
                });
            }
            let s = acc.expect("non-empty");
            tape.scale(s, 1.0 / tables.len() as f64)
        };

        let r = tape.scale(recon, self.config.loss_factor);
        let k = tape.scale(kl, self.config.kl_weight);
        let g = tape.scale(reg, self.config.reg_weight);
        let total = tape.add(r, k)?;
        let total = tape.add(total, g)?;
        if !tape.scalar(total).is_finite() {
            let terms = LossVars {
                total,
                recon,
                kl,
                reg,
                mu,
                logvar,
            }
            .terms(tape);
            return Err(Error::NonFinite(format!(
                "loss (recon={}, kl={}, reg={})",
                terms.recon, terms.kl, terms.reg
            )));
        }
        Ok(LossVars {
            total,
            recon,
            kl,
            reg,
            mu,
            logvar,
        })
    }

    /// Loss components for a batch without recording gradients for later use.
    pub fn loss(
        &self,
        batch: &Batch<T>,
        eps: &Array2<T>,
        cond: Option<&Array2<T>>,
    ) -> Result<LossTerms> {
        let mut tape = Tape::new();
        let vars = self.record_loss(&mut tape, batch, eps, cond)?;
        Ok(vars.terms(&tape))
    }

    /// Posterior mean and standard deviation, each `n x latent_dim`.
    pub fn encode_batch(
        &self,
        batch: &Batch<T>,
        cond: Option<&Array2<T>>,
    ) -> Result<(Array2<T>, Array2<T>)> {
        self.check_batch(batch)?;
        self.check_condition(batch.n, cond)?;
        let mut tape = Tape::new();
        let (x, _, _) = self.record_input(&mut tape, batch, cond)?;
        let (mu, logvar) = self.record_encoder(&mut tape, x)?;
        let sigma = tape.value(logvar).mapv(|v| (v * T::lit(0.5)).exp());
        Ok((tape.value(mu).clone(), sigma))
    }

    /// Decoder outputs per feature for latent codes `z` (`n x latent_dim`).
    pub fn decode_batch(
        &self,
        z: &Array2<T>,
        cond: Option<&Array2<T>>,
    ) -> Result<Vec<HeadOutput<T>>> {
        if z.ncols() != self.config.latent_dim {
            return Err(Error::shape(format!(
                "latent {:?}, expected width {}",
                z.dim(),
                self.config.latent_dim
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent input".into()));
        }
        self.check_condition(z.nrows(), cond)?;
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let heads = self.record_decoder(&mut tape, zv, cond)?;
        Ok(self
            .blocks
            .iter()
            .zip(heads)
            .map(|(b, h)| {
                let raw = tape.value(h);
                match b {
                    Block::Embedded { .. } => HeadOutput::Embedding(crate::nn::tanh(raw)),
                    Block::OneHot { .. } => HeadOutput::Probabilities(softmax(raw)),
                    Block::Numeric { .. } => HeadOutput::Value(match self.config.numeric_head {
                        NumericHead::Tanh => crate::nn::tanh(raw),
                        NumericHead::Linear => raw.clone(),
                    }),
                }
            })
            .collect())
    }

    /// Mean absolute drift of embedding-table variance from initialisation.
    pub fn mean_variance_drift(&self) -> f64 {
        let cur = self.current_variances();
        if cur.is_empty() {
            return 0.0;
        }
        cur.iter()
            .zip(&self.initial_variance)
            .map(|(c, v0)| (c - v0).abs())
            .sum::<f64>()
            / cur.len() as f64
    }

    /// Same model in another precision (optimiser state is not carried over).
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            data_schema: self.data_schema.clone(),
            schema: self.schema.clone(),
            config: self.config.clone(),
            store: self.store.cast(),
            blocks: self.blocks.clone(),
            trunk: self.trunk,
            initial_variance: self.initial_variance.clone(),
            cond_width: self.cond_width,
        }
    }
}

/// Row sums of a probability matrix, for sanity checks.
pub fn row_sums<T: Real>(p: &Array2<T>) -> Vec<f64> {
    p.sum_axis(Axis(1))
        .iter()
        .map(|v| v.to_f64_lossy())
        .collect()
}

/// Trainable parameter count of a freshly built model.
pub fn parameter_count(schema: &Schema, config: &TrainConfig) -> Result<usize> {
    Ok(Model::<f32>::new(schema, config.clone(), &mut Rng::new(0))?.parameter_count())
}

#[cfg(test)]
mod tests;
