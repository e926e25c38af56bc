use std::collections::BTreeMap;

use ndarray::{s, Array2};

use super::{Batch, BatchColumn, Block, Mode, Model};
use crate::error::{Error, Result};
use crate::nn::{Real, Rng};
use crate::schema::{FeatureKind, Schema};

/// Extra level appended to every categorical feature in conditional mode.
pub const MASK_LEVEL: &str = "⟨MASK⟩";

/// Requested levels for a subset of categorical features.
pub type Condition = BTreeMap<String, String>;

/// Appends [`MASK_LEVEL`] as the last level (code `c_j`) of every categorical
/// feature. Other features are left untouched.
pub fn conditional_prepare(schema: &Schema) -> Schema {
    let mut out = schema.clone();
    for f in &mut out.features {
        if f.kind == FeatureKind::Categorical {
            f.levels.push(MASK_LEVEL.to_string());
            f.cardinality = Some(f.levels.len());
        }
    }
    out
}

impl<T: Real> Model<T> {
    /// Code of the mask level for an embedded feature.
    fn mask_code(&self, feature: usize) -> Option<usize> {
        match (&self.blocks[feature], self.config.mode) {
            (Block::Embedded { cardinality, .. }, Mode::Conditional) => Some(cardinality - 1),
            _ => None,
        }
    }

    /// Concatenation over embedded features of either the requested level's
    /// embedding or the mask embedding. Values are copied out of the tables,
    /// so nothing downstream can push gradient into them through this vector.
    pub fn conditional_vector(&self, condition: &Condition) -> Result<Vec<T>> {
        if self.config.mode != Mode::Conditional {
            return Err(Error::Usage(
                "conditional vector requested from an unconditional model".into(),
            ));
        }
        let mut chosen: BTreeMap<usize, usize> = BTreeMap::new();
        for (name, level) in condition {
            let idx = self
                .data_schema
                .index_of(name)
                .ok_or_else(|| Error::data(format!("unknown feature '{name}' in condition")))?;
            let f = &self.data_schema.features[idx];
            if f.kind != FeatureKind::Categorical {
                return Err(Error::data(format!(
                    "cannot condition on '{name}': only categorical features (3+ levels) are conditionable"
                )));
            }
            let code = f.level_code(level).ok_or_else(|| {
                Error::data(format!("unknown level '{level}' for feature '{name}'"))
            })?;
            chosen.insert(idx, code);
        }
        let mut out = Vec::with_capacity(self.cond_width);
        for (i, table, _) in self.embedded() {
            let row = chosen
                .get(&i)
                .copied()
                .unwrap_or_else(|| self.mask_code(i).expect("conditional"));
            out.extend(self.store.value(table).row(row).iter().copied());
        }
        Ok(out)
    }

    /// Repeats a conditional vector over `n` rows.
    pub fn condition_matrix(&self, vector: &[T], n: usize) -> Array2<T> {
        let mut m = Array2::zeros((n, vector.len()));
        for mut row in m.rows_mut() {
            row.iter_mut().zip(vector).for_each(|(d, &v)| *d = v);
        }
        m
    }

    /// Training-time conditions: each row is conditioned on its own value of
    /// one categorical feature chosen uniformly, every other block masked.
    pub fn self_condition(&self, batch: &Batch<T>, rng: &mut Rng) -> Result<Array2<T>> {
        let embedded: Vec<_> = self.embedded().collect();
        let mut m = Array2::zeros((batch.n, self.cond_width));
        if embedded.is_empty() {
            return Ok(m);
        }
        let mut offsets = Vec::with_capacity(embedded.len());
        let mut off = 0;
        for &(_, _, k) in &embedded {
            offsets.push(off);
            off += k;
        }
        for r in 0..batch.n {
            let pick = rng.below(embedded.len());
            for (slot, &(feature, table, k)) in embedded.iter().enumerate() {
                let code = if slot == pick {
                    match &batch.columns[feature] {
                        BatchColumn::Codes(c) => c[r],
                        BatchColumn::Values(_) => {
                            return Err(Error::schema("embedded feature with numeric column"))
                        }
                    }
                } else {
                    self.mask_code(feature).expect("conditional")
                };
                let src = self.store.value(table).row(code);
                m.slice_mut(s![r, offsets[slot]..offsets[slot] + k])
                    .assign(&src);
            }
        }
        Ok(m)
    }
}
