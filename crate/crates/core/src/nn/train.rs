//! Epoch loop with cosine learning rate, early stopping and best-state restore.

use serde::{Deserialize, Serialize};

use super::optim::{lr_at_epoch, TrainConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Zero-based epoch index.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// CSV with header `epoch,train_loss,val_loss,lr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_loss, r.lr));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops once `patience` consecutive epochs fail to beat the best validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if self.best_epoch.is_none() || val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = Some(epoch);
            self.since_best = 0;
            return StopDecision::Improved;
        }
        self.since_best += 1;
        if self.since_best >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// Runs up to `cfg.epochs` epochs of `run_epoch(epoch, lr, state)`, which
/// returns `(train_loss, val_loss)`. On return `state` holds a clone of the
/// state after the best validation epoch.
pub fn fit<S, F>(cfg: &TrainConfig, state: &mut S, mut run_epoch: F) -> Result<TrainHistory>
where
    S: Clone,
    F: FnMut(usize, f64, &mut S) -> Result<(f64, f64)>,
{
    cfg.validate()?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = TrainHistory::default();
    let mut best_state = state.clone();
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(epoch, cfg);
        let (train_loss, val_loss) = run_epoch(epoch, lr, state)?;
        for loss in [train_loss, val_loss] {
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, loss });
            }
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} lr {lr:.3e}");
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best_state = state.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                history.stopped_early = true;
                break;
            }
        }
    }
    history.best_epoch = stopper.best_epoch().unwrap_or(0);
    history.best_val_loss = stopper.best_loss();
    *state = best_state;
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scripted(losses: Vec<f64>, cfg: &TrainConfig) -> (TrainHistory, Vec<f64>) {
        // State records the epoch whose update produced it.
        let mut state: Vec<f64> = vec![-1.0];
        let h = fit(cfg, &mut state, |epoch, _lr, s| {
            s[0] = epoch as f64;
            Ok((losses[epoch] * 2.0, losses[epoch]))
        })
        .unwrap();
        (h, state)
    }

    #[test]
    fn stops_thirty_epochs_after_best() {
        let mut losses = vec![1.0, 0.8];
        losses.extend(std::iter::repeat(0.9).take(100));
        let cfg = TrainConfig::default();
        let (h, state) = scripted(losses, &cfg);
        assert_eq!(h.len(), 32);
        assert!(h.stopped_early);
        assert_eq!(h.best_epoch, 1);
        assert_eq!(h.best_val_loss, 0.8);
        assert_eq!(state, vec![1.0]);
    }

    #[test]
    fn equal_loss_is_not_an_improvement() {
        let mut losses = vec![0.5];
        losses.extend(std::iter::repeat(0.5).take(100));
        let (h, _) = scripted(losses, &TrainConfig::default());
        assert_eq!(h.best_epoch, 0);
        assert_eq!(h.len(), 31);
    }

    #[test]
    fn runs_all_epochs_while_improving() {
        let cfg = TrainConfig {
            epochs: 12,
            restarts: 3,
            ..Default::default()
        };
        let losses: Vec<f64> = (0..12).map(|e| 1.0 / (e as f64 + 1.0)).collect();
        let (h, state) = scripted(losses, &cfg);
        assert_eq!(h.len(), 12);
        assert!(!h.stopped_early);
        assert_eq!(state, vec![11.0]);
        for r in &h.epochs {
            assert_eq!(r.lr, lr_at_epoch(r.epoch, &cfg));
        }
    }

    #[test]
    fn non_finite_loss_aborts() {
        let cfg = TrainConfig::default();
        let mut s = ();
        let err = fit(&cfg, &mut s, |e, _, _| Ok((if e == 3 { f64::NAN } else { 1.0 }, 1.0))).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 3, .. }));
    }

    #[test]
    fn history_csv_has_one_row_per_epoch() {
        let cfg = TrainConfig {
            epochs: 5,
            ..Default::default()
        };
        let (h, _) = scripted(vec![5.0, 4.0, 3.0, 2.0, 1.0], &cfg);
        let csv = h.to_csv();
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.starts_with("epoch,train_loss,val_loss,lr\n0,10,5,0.001\n"));
    }
}
