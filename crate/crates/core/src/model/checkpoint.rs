use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{read_param_file, write_param_file, Real, Rng};
use crate::schema::Schema;

/// Everything stored next to the parameter tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema: Schema,
    pub config: TrainConfig,
    pub initial_variance: Vec<f64>,
    /// Rows of the ingested dataset (after dropping incomplete rows).
    pub n_rows: usize,
    /// Held-out row indices of the fitting run, in split order.
    pub test_indices: Vec<usize>,
}

/// A model restored from disk plus its metadata.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub meta: CheckpointMeta,
}

impl<T: Real> Model<T> {
    /// Writes the parameter file with schema, config and split metadata in
    /// its JSON header.
    pub fn save<W: Write>(&self, out: W, n_rows: usize, test_indices: &[usize]) -> Result<()> {
        let meta = CheckpointMeta {
            schema: self.data_schema.clone(),
            config: self.config.clone(),
            initial_variance: self.initial_variance.clone(),
            n_rows,
            test_indices: test_indices.to_vec(),
        };
        write_param_file(
            out,
            &self.store,
            &self.data_schema.hash(),
            serde_json::to_value(&meta)?,
        )
    }

    pub fn save_path(&self, path: &Path, n_rows: usize, test_indices: &[usize]) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.save(&mut w, n_rows, test_indices)?;
        w.flush()?;
        Ok(())
    }
}

impl Checkpoint {
    pub fn load<R: Read>(input: R) -> Result<Self> {
        let (header, store) = read_param_file::<f32, _>(input)?;
        let meta: CheckpointMeta = serde_json::from_value(header.extra)?;
        meta.schema.validate()?;
        if meta.schema.hash() != header.schema_hash {
            return Err(Error::Checkpoint(
                "schema hash does not match the embedded schema".into(),
            ));
        }
        let mut model = Model::<f32>::new(&meta.schema, meta.config.clone(), &mut Rng::new(0))?;
        let expected: Vec<_> = model
            .store
            .iter()
            .map(|p| (p.name.clone(), p.value.dim()))
            .collect();
        let found: Vec<_> = store
            .iter()
            .map(|p| (p.name.clone(), p.value.dim()))
            .collect();
        if expected != found {
            return Err(Error::Checkpoint(
                "parameter layout does not match schema and config".into(),
            ));
        }
        if meta.initial_variance.len() != model.initial_variance.len() {
            return Err(Error::Checkpoint(
                "wrong number of frozen embedding variances".into(),
            ));
        }
        model.store = store;
        model.initial_variance = meta.initial_variance.clone();
        Ok(Self { model, meta })
    }

    pub fn load_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
        Self::load(std::io::BufReader::new(file))
    }

    /// Errors unless `schema` is the one this checkpoint was trained on.
    pub fn check_schema(&self, schema: &Schema) -> Result<()> {
        if schema.hash() != self.meta.schema.hash() {
            return Err(Error::Checkpoint(
                "schema does not match checkpoint (hash mismatch)".into(),
            ));
        }
        Ok(())
    }
}
