use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::HttConfig;
use super::loss::{clip_loss, ClipTargets, LossBreakdown};
use super::network::HttModel;
use crate::autodiff::{AdamState, Graph, Scalar};
use crate::data::{FrameData, SequenceRecord};
use crate::error::{HttError, Result};
use crate::windowing::{plan_video_with_offset, sample_training_offset};

/// Optimization schedule. The learning rate halves every `halving_period` epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub epochs: usize,
    pub learning_rate: f64,
    pub halving_period: usize,
    /// Clips whose gradients are averaged before each optimizer step.
    pub batch_clips: usize,
    pub seed: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            epochs: 45,
            learning_rate: 3e-5,
            halving_period: 15,
            batch_clips: 2,
            seed: 0,
        }
    }
}

impl Schedule {
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * 0.5f64.powi((epoch / self.halving_period) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.halving_period == 0 || self.batch_clips == 0 {
            return Err(HttError::Config("halving_period and batch_clips must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(HttError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    /// Generator for one epoch's offsets and clip order. Derived from the seed
    /// and epoch alone, so a resumed run draws the same numbers.
    pub fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64 + 1);
        rng
    }
}

/// Loss means over the clips of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub total_loss: f64,
    pub loss_action: f64,
    pub mean_loss_hand: f64,
    pub mean_loss_object: f64,
    pub learning_rate: f64,
    pub clips: usize,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,total_loss,loss_action,mean_loss_hand,mean_loss_object,lr";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.total_loss, self.loss_action, self.mean_loss_hand, self.mean_loss_object, self.learning_rate
        )
    }
}

/// Checks that every record fits the model's joint count and label ranges.
pub fn check_records(records: &[SequenceRecord], cfg: &HttConfig) -> Result<()> {
    for r in records {
        r.validate(Some(cfg.num_objects), Some(cfg.num_actions))
            .map_err(|e| HttError::Compat(e.to_string()))?;
        if r.joints() != cfg.joints {
            return Err(HttError::Compat(format!(
                "{}: sequence has {} joints, model expects {}",
                r.id,
                r.joints(),
                cfg.joints
            )));
        }
    }
    Ok(())
}

/// Model plus optimizer state; `next_epoch` counts finished epochs.
#[derive(Clone, Debug)]
pub struct Trainer<F: Scalar = f64> {
    pub model: HttModel<F>,
    pub adam: AdamState<F>,
    pub schedule: Schedule,
    pub next_epoch: usize,
}

impl<F: Scalar> Trainer<F> {
    pub fn new(model: HttModel<F>, schedule: Schedule) -> Result<Self> {
        schedule.validate()?;
        let adam = AdamState::new(model.store.tensors(), schedule.learning_rate);
        Ok(Trainer {
            model,
            adam,
            schedule,
            next_epoch: 0,
        })
    }

    pub fn finished(&self) -> bool {
        self.next_epoch >= self.schedule.epochs
    }

    /// Forward, loss and backward of one clip, scaled by `weight`; gradients
    /// are added to the parameter store.
    pub fn accumulate_clip(&mut self, record: &SequenceRecord, frames: &[usize], weight: f64) -> Result<LossBreakdown> {
        let inputs: Vec<&FrameData> = frames.iter().map(|&f| &record.frames[f]).collect();
        let targets = ClipTargets::from_record(record, frames)?;
        let mut g = Graph::new();
        let p = self.model.store.bind(&mut g);
        let vars = self.model.forward_clip(&mut g, &p, &inputs)?;
        let loss = clip_loss(&mut g, &vars, &targets, &self.model.cfg)?;
        let scaled = g.scale(loss.total, F::of(weight));
        g.backward(scaled)?;
        self.model.store.accumulate(&g, &p)?;
        Ok(loss.breakdown(&g))
    }

    /// One optimizer step with the accumulated gradients.
    pub fn step(&mut self, learning_rate: f64) -> Result<()> {
        self.adam.learning_rate = learning_rate;
        self.adam.step(self.model.store.tensors_mut())
    }

    pub fn run_epoch(&mut self, data: &[SequenceRecord]) -> Result<EpochLog> {
        if data.is_empty() {
            return Err(HttError::data("training set is empty"));
        }
        let epoch = self.next_epoch;
        let cfg = &self.model.cfg;
        let lr = self.schedule.learning_rate_at(epoch);
        let mut rng = self.schedule.epoch_rng(epoch);
        let mut clips = Vec::new();
        for (v, r) in data.iter().enumerate() {
            let offset = sample_training_offset(cfg.segment_length, &mut rng)?.min(r.len() - 1);
            let plan = plan_video_with_offset(r.len(), cfg.clip_length, offset)?;
            clips.extend(plan.clips.into_iter().map(|c| (v, c.frames)));
        }
        clips.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        for batch in clips.chunks(self.schedule.batch_clips) {
            let w = 1.0 / batch.len() as f64;
            for (v, frames) in batch {
                let l = self.accumulate_clip(&data[*v], frames, w)?;
                for (s, x) in sums.iter_mut().zip([l.total, l.action, l.mean_hand, l.mean_object]) {
                    *s += x;
                }
            }
            self.step(lr)?;
        }
        self.next_epoch += 1;
        let n = clips.len() as f64;
        Ok(EpochLog {
            epoch,
            total_loss: sums[0] / n,
            loss_action: sums[1] / n,
            mean_loss_hand: sums[2] / n,
            mean_loss_object: sums[3] / n,
            learning_rate: lr,
            clips: clips.len(),
        })
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn run(
        &mut self,
        data: &[SequenceRecord],
        mut on_epoch: impl FnMut(&Trainer<F>, &EpochLog) -> Result<()>,
    ) -> Result<Vec<EpochLog>> {
        check_records(data, &self.model.cfg)?;
        let mut logs = Vec::new();
        while !self.finished() {
            let log = self.run_epoch(data)?;
            on_epoch(self, &log)?;
            logs.push(log);
        }
        Ok(logs)
    }
}

/// Trains a freshly initialized model for the whole schedule.
pub fn train<F: Scalar>(
    cfg: HttConfig,
    init_seed: u64,
    data: &[SequenceRecord],
    schedule: Schedule,
) -> Result<(HttModel<F>, Vec<EpochLog>)> {
    if data.is_empty() {
        return Err(HttError::data("training set is empty"));
    }
    let mut trainer = Trainer::new(HttModel::new(cfg, init_seed)?, schedule)?;
    let logs = trainer.run(data, |_, _| Ok(()))?;
    Ok((trainer.model, logs))
}
