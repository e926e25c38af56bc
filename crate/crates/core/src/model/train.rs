use std::io::Write;

use super::{Batch, Mode, Model};
use crate::error::Result;
use crate::nn::{gauss_sample, Real, Rng, Tape};
use crate::schema::EncodedDataset;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub reg: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    /// CSV with header `epoch,recon,kl,reg,total` and one line per epoch.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,recon,kl,reg,total")?;
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch, e.recon, e.kl, e.reg, e.total
            )?;
        }
        Ok(())
    }
}

impl<T: Real> Model<T> {
    /// Minibatch Adam training over `data` for `config.epochs` epochs.
    ///
    /// Rows are reshuffled every epoch; the final short batch is kept. Every
    /// parameter, embedding tables included, is updated at each step.
    pub fn train(&mut self, data: &EncodedDataset, rng: &mut Rng) -> Result<TrainLog> {
        let epochs = self.config.epochs;
        self.train_epochs(data, rng, epochs, |_| {})
    }

    /// As [`Model::train`] with an explicit epoch count and a per-epoch hook.
    pub fn train_epochs(
        &mut self,
        data: &EncodedDataset,
        rng: &mut Rng,
        epochs: usize,
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<TrainLog> {
        let n = data.n_rows;
        let bs = self.config.batch_size;
        let lr = self.config.learning_rate;
        let adam = self.config.adam;
        let mut order: Vec<usize> = (0..n).collect();
        let mut log = TrainLog::default();
        for epoch in 1..=epochs {
            rng.shuffle(&mut order);
            let mut sums = [0.0f64; 4];
            for chunk in order.chunks(bs) {
                let batch = Batch::from_dataset(data, chunk);
                let eps = gauss_sample::<T>(rng, batch.n, self.config.latent_dim);
                let cond = match self.config.mode {
                    Mode::Conditional => Some(self.self_condition(&batch, rng)?),
                    _ => None,
                };
                let mut tape = Tape::new();
                let vars = self.record_loss(&mut tape, &batch, &eps, cond.as_ref())?;
                let terms = vars.terms(&tape);
                tape.backward(vars.total, &mut self.store)?;
                self.store.adam_step(lr, &adam)?;
                let w = batch.n as f64;
                sums[0] += terms.recon * w;
                sums[1] += terms.kl * w;
                sums[2] += terms.reg * w;
                sums[3] += terms.total * w;
            }
            let nf = n.max(1) as f64;
            let entry = EpochLog {
                epoch,
                recon: sums[0] / nf,
                kl: sums[1] / nf,
                reg: sums[2] / nf,
                total: sums[3] / nf,
            };
            on_epoch(&entry);
            log.epochs.push(entry);
        }
        Ok(log)
    }
}
