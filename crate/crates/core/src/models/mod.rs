//! The four reconstruction-based detectors, scoring and training.

mod build;
mod graph;
mod model;
mod training;

pub use build::{
    build, build_dcase_ae, build_duman_cae, build_skip_cae, build_skip_cae_transformer, ArchConfig, DenseConfig,
    TransformerConfig,
};
pub use graph::{Activation, Architecture, GraphPlan, LayerSpec, ModelGraph, NodeSpec, SkipEdge, TransformerSpec};
pub use model::Model;
pub use training::{train_model, train_val_batches};

use rayon::prelude::*;

use crate::error::{shape_err, Error, Result};
use crate::features::MelSpectrogram;
use crate::nn::checkpoint::tensor_table;
use crate::nn::{Checkpoint, CheckpointHeader, Mode, Tape, Tensor};

/// Examples per forward pass when scoring.
pub const SCORE_BATCH: usize = 16;

/// Stacks spectrograms into an `[N, 1, H, W]` batch.
pub fn batch_tensor(specs: &[&MelSpectrogram], hw: [usize; 2]) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(specs.len() * hw[0] * hw[1]);
    for s in specs {
        if s.shape() != hw {
            return Err(shape_err!(
                "clip `{}` has shape {:?}, the model expects {:?}",
                s.clip_id,
                s.shape(),
                hw
            ));
        }
        data.extend_from_slice(&s.values);
    }
    Tensor::new(vec![specs.len(), 1, hw[0], hw[1]], data)
}

impl Model<f32> {
    /// Eval-mode reconstructions of a batch.
    pub fn reconstruct_batch(&self, specs: &[&MelSpectrogram]) -> Result<Vec<MelSpectrogram>> {
        if specs.is_empty() {
            return Ok(Vec::new());
        }
        let hw = self.input_hw();
        let x = batch_tensor(specs, hw)?;
        let mut tape = Tape::new(self.params(), Mode::Eval);
        let xv = tape.input(x);
        let y = self.output(&mut tape, xv)?;
        let out = tape.value(y);
        specs
            .iter()
            .enumerate()
            .map(|(i, s)| MelSpectrogram::new(s.clip_id.clone(), hw[0], hw[1], out.example(i).to_vec()))
            .collect()
    }

    pub fn reconstruct(&self, spec: &MelSpectrogram) -> Result<MelSpectrogram> {
        Ok(self.reconstruct_batch(&[spec])?.remove(0))
    }

    /// Reconstruction MSE of one clip.
    pub fn anomaly_score(&self, spec: &MelSpectrogram) -> Result<f64> {
        Ok(self.anomaly_scores(&[spec])?[0])
    }

    /// Reconstruction MSE per clip, in input order.
    pub fn anomaly_scores(&self, specs: &[&MelSpectrogram]) -> Result<Vec<f64>> {
        let chunks: Vec<Vec<f64>> = specs
            .par_chunks(SCORE_BATCH)
            .map(|chunk| {
                let rec = self.reconstruct_batch(chunk)?;
                Ok(chunk.iter().zip(&rec).map(|(x, r)| mse(&x.values, &r.values)).collect())
            })
            .collect::<Result<_>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }

    pub fn to_checkpoint(&self, epoch: usize, best_val_loss: Option<f64>) -> Result<Checkpoint> {
        Ok(Checkpoint {
            header: CheckpointHeader {
                architecture: self.graph().architecture.as_str().to_string(),
                graph: serde_json::to_value(self.graph())?,
                seed: self.seed(),
                epoch,
                best_val_loss,
                tensors: tensor_table(self.params()),
            },
            params: self.params().clone(),
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let graph: ModelGraph = serde_json::from_value(ckpt.header.graph.clone())?;
        if graph.architecture.as_str() != ckpt.header.architecture {
            return Err(Error::Checkpoint(format!(
                "header says `{}` but the graph is `{}`",
                ckpt.header.architecture, graph.architecture
            )));
        }
        Model::with_params(graph, ckpt.params.clone(), ckpt.header.seed)
    }
}

/// Mean squared difference, accumulated in f64.
pub fn mse(a: &[f32], b: &[f32]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    s / a.len() as f64
}
