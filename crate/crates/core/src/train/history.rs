use sha2::{Digest, Sha256};

use super::PlateauConfig;
use crate::error::{Error, Result};

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,val_acc,lr,seconds";

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Absent for the Siamese model.
    pub val_acc: Option<f64>,
    /// Base learning rate in effect during the epoch.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn push(&mut self, r: EpochRecord) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn best_val_loss(&self) -> Option<f64> {
        self.records.iter().map(|r| r.val_loss).reduce(f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for r in &self.records {
            let acc = r.val_acc.map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.val_loss, acc, r.lr, r.seconds
            ));
        }
        out
    }

    /// SHA-256 of the CSV with the wall-clock column blanked, so that two
    /// identical runs share a digest.
    pub fn digest(&self) -> String {
        let timeless = History {
            records: self
                .records
                .iter()
                .map(|r| EpochRecord { seconds: 0.0, ..r.clone() })
                .collect(),
        };
        hex::encode(Sha256::digest(timeless.to_csv().as_bytes()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HISTORY_HEADER) {
            return Err(Error::Config("history CSV header mismatch".into()));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Config(format!("history CSV row {}: {line:?}", i + 2));
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            records.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_loss: num(f[1])?,
                val_loss: num(f[2])?,
                val_acc: if f[3].is_empty() { None } else { Some(num(f[3])?) },
                lr: num(f[4])?,
                seconds: num(f[5])?,
            });
        }
        Ok(Self { records })
    }
}

/// Reduce-on-plateau bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauState {
    pub best: f64,
    pub wait: usize,
    pub lr: f64,
}

impl PlateauState {
    pub fn new(lr: f64) -> Self {
        Self {
            best: f64::INFINITY,
            wait: 0,
            lr,
        }
    }
}

/// Record one epoch's validation loss and return the learning rate for the
/// next epoch. After `patience` consecutive epochs without an improvement of
/// at least `min_delta` on the best loss, the rate is multiplied by `factor`
/// (floored at `min_lr`) and the counter restarts.
pub fn plateau_step(state: &mut PlateauState, val_loss: f64, cfg: &PlateauConfig) -> f64 {
    if val_loss < state.best - cfg.min_delta {
        state.best = val_loss;
        state.wait = 0;
    } else {
        state.wait += 1;
        if state.wait >= cfg.patience {
            if state.lr > cfg.min_lr {
                state.lr = (state.lr * cfg.factor).max(cfg.min_lr);
            }
            state.wait = 0;
        }
    }
    state.lr
}
