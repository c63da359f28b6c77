//! Class pools and episodic task sampling.
//!
//! A [`ClassPool`] is a split-labeled collection of classes, each with
//! enough instances to draw support and query sets from. Episodes are
//! N-way K-shot tasks with labels remapped to `0..N`, sampled without
//! replacement within a class. Pools come from two synthetic generators
//! (Gaussian blobs for flat inputs, procedural glyphs for the convolutional
//! path) or from an image-folder tree on disk.

mod blobs;
mod folder;
mod glyphs;
pub mod poolfile;

use thiserror::Error;

pub use blobs::{generate_blob_pool, BlobParams};
pub use folder::{load_image_folder, FolderParams, IngestReport};
pub use glyphs::{generate_glyph_pool, GlyphJitter, GlyphParams};

use crate::rng::{self, Stream};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "validation" | "val" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    SyntheticBlobs,
    SyntheticGlyphs,
    ImageFolder,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::SyntheticBlobs => "synthetic-blobs",
            Provenance::SyntheticGlyphs => "synthetic-glyphs",
            Provenance::ImageFolder => "image-folder",
        }
    }

    pub fn parse(s: &str) -> Option<Provenance> {
        match s {
            "synthetic-blobs" => Some(Provenance::SyntheticBlobs),
            "synthetic-glyphs" => Some(Provenance::SyntheticGlyphs),
            "image-folder" => Some(Provenance::ImageFolder),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassRecord<T: Scalar> {
    pub id: String,
    pub instances: Vec<Tensor<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassPool<T: Scalar> {
    pub split: Split,
    pub provenance: Provenance,
    pub classes: Vec<ClassRecord<T>>,
}

impl<T: Scalar> ClassPool<T> {
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn instance_shape(&self) -> Option<&[usize]> {
        self.classes
            .first()
            .and_then(|c| c.instances.first())
            .map(|t| t.shape())
    }
}

/// One N-way K-shot task. Support and query instances are stacked with a
/// leading batch axis, grouped by remapped label (all of label 0, then 1,
/// and so on); labels are parallel vectors.
#[derive(Clone, Debug)]
pub struct Episode<T: Scalar> {
    pub support_x: Tensor<T>,
    pub support_y: Vec<usize>,
    pub query_x: Tensor<T>,
    pub query_y: Vec<usize>,
    pub ways: usize,
    pub shots: usize,
    pub queries_per_way: usize,
    /// Source class identifiers in remapped-label order.
    pub class_ids: Vec<String>,
}

impl<T: Scalar> Episode<T> {
    pub fn support_size(&self) -> usize {
        self.ways * self.shots
    }

    pub fn query_size(&self) -> usize {
        self.ways * self.queries_per_way
    }

    /// Labels as a float tensor for graph bindings.
    pub fn labels_tensor(labels: &[usize]) -> Tensor<T> {
        Tensor::from_fn(&[labels.len()], |i| T::from_f64(labels[i] as f64))
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("pool has {have} classes, episode needs {need}")]
    NotEnoughClasses { have: usize, need: usize },
    #[error("class {id:?} has {have} instances, episode needs {need} (K+Q)")]
    NotEnoughInstances {
        id: String,
        have: usize,
        need: usize,
    },
    #[error("ways, shots and queries must all be at least 1")]
    DegenerateEpisode,
    #[error("image root {0:?} contains no class directories")]
    EmptyRoot(std::path::PathBuf),
    #[error("split manifest line {line}: expected `class<TAB>split`, got {content:?}")]
    BadManifestLine { line: usize, content: String },
    #[error("unknown split {0:?} in manifest (expected train/validation/test)")]
    BadSplit(String),
    #[error("split {0} ended up with no usable classes")]
    EmptySplit(&'static str),
    #[error("reading {path:?}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// Draws one episode: N distinct classes, K support + Q query instances per
/// class (disjoint, sampled without replacement), labels remapped to the
/// sorted order of the sampled class identifiers permuted by the stream.
pub fn sample_episode<T: Scalar>(
    pool: &ClassPool<T>,
    ways: usize,
    shots: usize,
    queries_per_way: usize,
    rng: &mut Stream,
) -> Result<Episode<T>, DataError> {
    if ways == 0 || shots == 0 || queries_per_way == 0 {
        return Err(DataError::DegenerateEpisode);
    }
    if pool.classes.len() < ways {
        return Err(DataError::NotEnoughClasses {
            have: pool.classes.len(),
            need: ways,
        });
    }
    let picked = rng::sample_indices(pool.classes.len(), ways, rng);
    let need = shots + queries_per_way;
    for &ci in &picked {
        let class = &pool.classes[ci];
        if class.instances.len() < need {
            return Err(DataError::NotEnoughInstances {
                id: class.id.clone(),
                have: class.instances.len(),
                need,
            });
        }
    }

    // Sort the sampled identifiers, then assign labels by a random
    // permutation so class identifier order carries no signal.
    let mut sorted: Vec<usize> = picked.clone();
    sorted.sort_by(|&a, &b| pool.classes[a].id.cmp(&pool.classes[b].id));
    let perm = rng::permutation(ways, rng);
    let mut by_label: Vec<usize> = vec![0; ways];
    for (rank, &ci) in sorted.iter().enumerate() {
        by_label[perm[rank]] = ci;
    }

    let mut support_refs = Vec::with_capacity(ways * shots);
    let mut query_refs = Vec::with_capacity(ways * queries_per_way);
    let mut support_y = Vec::with_capacity(ways * shots);
    let mut query_y = Vec::with_capacity(ways * queries_per_way);
    let mut class_ids = Vec::with_capacity(ways);
    for (label, &ci) in by_label.iter().enumerate() {
        let class = &pool.classes[ci];
        class_ids.push(class.id.clone());
        let chosen = rng::sample_indices(class.instances.len(), need, rng);
        for &idx in &chosen[..shots] {
            support_refs.push(&class.instances[idx]);
            support_y.push(label);
        }
        for &idx in &chosen[shots..] {
            query_refs.push(&class.instances[idx]);
            query_y.push(label);
        }
    }

    Ok(Episode {
        support_x: Tensor::stack(&support_refs),
        support_y,
        query_x: Tensor::stack(&query_refs),
        query_y,
        ways,
        shots,
        queries_per_way,
        class_ids,
    })
}
