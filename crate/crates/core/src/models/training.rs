use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{batch_tensor, Model};
use crate::error::{Error, Result};
use crate::features::MelSpectrogram;
use crate::nn::{apply_bn_updates, fit, AdamW, Mode, Tape, TrainConfig, TrainHistory};

/// Shuffled mini-batches of `order`. A trailing batch of one example is
/// merged into the previous batch so batch norm always sees two examples.
pub fn train_val_batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}

/// Trains on MSE reconstruction with AdamW, the warm-restart cosine schedule
/// and early stopping. On return `model` holds the best-validation weights.
pub fn train_model(
    model: &mut Model<f32>,
    train: &[&MelSpectrogram],
    val: &[&MelSpectrogram],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidInput(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let hw = model.input_hw();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step: u64 = 0;
    fit(cfg, model, |epoch, lr, model| {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in train_val_batches(&order, cfg.batch_size) {
            let specs: Vec<&MelSpectrogram> = batch.iter().map(|&i| train[i]).collect();
            let x = batch_tensor(&specs, hw)?;
            let (loss, grads, updates) = {
                let mut tape = Tape::with_seed(
                    model.params(),
                    Mode::Train,
                    cfg.seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15),
                );
                let xv = tape.input(x);
                let y = model.output(&mut tape, xv)?;
                let loss = tape.mse(y, xv)?;
                let value = tape.value(loss).data()[0] as f64;
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, loss: value });
                }
                let grads = tape.backward(loss)?;
                (value, grads, tape.take_bn_updates())
            };
            opt.step(model.params_mut(), &grads, lr);
            apply_bn_updates(model.params_mut(), &updates);
            total += loss * batch.len() as f64;
            step += 1;
        }
        let train_loss = total / train.len() as f64;
        let val_scores = model.anomaly_scores(val)?;
        let val_loss = val_scores.iter().sum::<f64>() / val.len() as f64;
        log::info!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} lr {lr:.2e}");
        Ok((train_loss, val_loss))
    })
}
