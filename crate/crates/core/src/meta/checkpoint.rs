//! Checkpoints: the full meta-state in the workspace archive format. The
//! manifest carries iteration, seed, fingerprint, and the alpha values in
//! layer order (shortest round-trip decimal); tensors hold the weights,
//! the alpha vector, and the optimizer accumulators.

use std::path::Path;

use crate::io::{self, ArchiveError};
use crate::net::{LayerParams, LayeredWeights};
use crate::tensor::{DType, Scalar, Tensor};

use super::state::{AdamState, MetaState};

pub const CHECKPOINT_MAGIC: &str = "lwau-checkpoint";

pub fn save_state<T: Scalar>(state: &MetaState<T>, path: &Path) -> Result<(), ArchiveError> {
    let alpha_tensor = Tensor::from_parts(vec![state.alpha.len()], state.alpha.clone());
    let alpha_text = state
        .alpha
        .iter()
        .map(|a| a.as_f64().to_string())
        .collect::<Vec<_>>()
        .join(" ");
    let fields = [
        ("iteration", state.iteration.to_string()),
        ("adam-step", state.opt.step.to_string()),
        ("seed", state.seed.to_string()),
        ("fingerprint", state.fingerprint.clone()),
        ("alpha", alpha_text),
    ];

    let mut entries: Vec<(String, &Tensor<T>)> = Vec::new();
    for (path, tensor) in state.weights.flatten() {
        entries.push((format!("theta/{path}"), tensor));
    }
    entries.push(("alpha".to_string(), &alpha_tensor));
    for (i, t) in state.opt.m.iter().enumerate() {
        entries.push((format!("adam/m/{i:03}"), t));
    }
    for (i, t) in state.opt.v.iter().enumerate() {
        entries.push((format!("adam/v/{i:03}"), t));
    }
    io::write_archive(path, CHECKPOINT_MAGIC, &fields, &entries)
}

pub fn load_state<T: Scalar>(path: &Path) -> Result<MetaState<T>, ArchiveError> {
    let archive = io::read_archive::<T>(path, CHECKPOINT_MAGIC)?;
    let bad = |detail: String| ArchiveError::BadManifest { line: 0, detail };

    let iteration: u64 = archive
        .field("iteration")?
        .parse()
        .map_err(|_| bad("bad iteration".into()))?;
    let adam_step: u64 = archive
        .field("adam-step")?
        .parse()
        .map_err(|_| bad("bad adam-step".into()))?;
    let seed: u64 = archive
        .field("seed")?
        .parse()
        .map_err(|_| bad("bad seed".into()))?;
    let fingerprint = archive.field("fingerprint")?.to_string();

    // Directory order is layer order; group consecutive theta entries by
    // their layer prefix.
    let mut layers: Vec<LayerParams<T>> = Vec::new();
    let mut last_layer: Option<String> = None;
    let mut alpha: Option<Vec<T>> = None;
    let mut m: Vec<Tensor<T>> = Vec::new();
    let mut v: Vec<Tensor<T>> = Vec::new();
    for (name, tensor) in archive.entries {
        if let Some(rest) = name.strip_prefix("theta/") {
            let (layer, entry) = rest
                .split_once('/')
                .ok_or_else(|| bad(format!("weight entry {name:?} lacks a layer prefix")))?;
            if last_layer.as_deref() != Some(layer) {
                layers.push(LayerParams {
                    entries: Vec::new(),
                });
                last_layer = Some(layer.to_string());
            }
            layers
                .last_mut()
                .expect("pushed above")
                .entries
                .push((entry.to_string(), tensor));
        } else if name == "alpha" {
            alpha = Some(tensor.into_data());
        } else if name.starts_with("adam/m/") {
            m.push(tensor);
        } else if name.starts_with("adam/v/") {
            v.push(tensor);
        } else {
            return Err(bad(format!("unexpected tensor {name:?}")));
        }
    }

    Ok(MetaState {
        weights: LayeredWeights { layers },
        alpha: alpha.ok_or_else(|| bad("checkpoint has no alpha tensor".into()))?,
        opt: AdamState {
            m,
            v,
            step: adam_step,
        },
        iteration,
        seed,
        fingerprint,
    })
}

pub fn peek_checkpoint_dtype(path: &Path) -> Result<DType, ArchiveError> {
    io::peek_dtype(path, CHECKPOINT_MAGIC)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meta::{TrainParams, Trainer};
    use crate::net::mlp;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let spec = mlp(6, 5, 3).unwrap();
        let params = TrainParams {
            ways: 3,
            shots: 2,
            queries: 2,
            meta_batch: 1,
            ..TrainParams::default()
        };
        let trainer: Trainer<f64> = Trainer::new(spec, params).unwrap();
        let mut state = trainer.init_state(11, "cafebabe");
        state.alpha = vec![0.1 + 0.2, 0.25, 1.0 / 3.0]; // awkward decimals on purpose
        state.iteration = 42;
        state.opt.step = 42;

        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("state.ckpt");
        save_state(&state, &path).unwrap();
        assert_eq!(peek_checkpoint_dtype(&path).unwrap(), DType::F64);
        let back: MetaState<f64> = load_state(&path).unwrap();
        assert!(state.state_bits_eq(&back));
        assert_eq!(back.fingerprint, "cafebabe");

        // Writing the loaded state again reproduces the file exactly.
        let path2 = tmp.path().join("state2.ckpt");
        save_state(&back, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }
}
