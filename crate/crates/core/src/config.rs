//! Run configuration: a TOML file with explicit keys, canonicalized into a
//! sorted key-value text whose SHA-256 is the configuration fingerprint.
//! The fingerprint covers the semantic sections (seed, precision, network,
//! data, training); output-side settings (directories, intervals, worker
//! counts, report formats) deliberately stay outside it.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{
    generate_blob_pool, generate_glyph_pool, load_image_folder, BlobParams, ClassPool,
    FolderParams, GlyphJitter, GlyphParams, Split,
};
use crate::meta::{AdamParams, EngineMode, TrainParams};
use crate::net::{conv4, mlp, NetworkSpec};
use crate::rng;
use crate::tensor::{DType, Scalar};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(String),
    #[error("config field `{field}`: {detail}")]
    Field { field: &'static str, detail: String },
    #[error(transparent)]
    Net(#[from] crate::net::NetError),
    #[error(transparent)]
    Meta(#[from] crate::meta::MetaError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

fn field_err(field: &'static str, detail: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        detail: detail.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_precision")]
    pub precision: String,
    pub net: NetSection,
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_seed() -> u64 {
    0
}

fn default_precision() -> String {
    "f32".to_string()
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    /// `conv4` or `mlp`.
    pub arch: String,
    #[serde(default = "default_filters")]
    pub filters: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Image dimensions for conv4 over blob data; otherwise derived from
    /// the data section.
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub channels: Option<usize>,
}

fn default_filters() -> usize {
    32
}

fn default_hidden() -> usize {
    32
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// `blobs`, `glyphs`, or `image-folder`.
    pub kind: String,
    #[serde(default = "default_train_classes")]
    pub train_classes: usize,
    #[serde(default = "default_eval_classes")]
    pub val_classes: usize,
    #[serde(default = "default_eval_classes")]
    pub test_classes: usize,
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    // blobs
    pub dim: Option<usize>,
    pub separation: Option<f64>,
    // glyphs
    pub size: Option<usize>,
    // image-folder
    pub root: Option<String>,
    pub manifest: Option<String>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub channels: Option<usize>,
}

fn default_train_classes() -> usize {
    30
}

fn default_eval_classes() -> usize {
    10
}

fn default_per_class() -> usize {
    24
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub inner_steps_train: usize,
    pub inner_steps_test: usize,
    pub alpha_init: f64,
    /// `lwau` or `maml`.
    pub mode: String,
    pub alpha_trainable: bool,
    pub second_order: bool,
    pub meta_lr: f64,
    pub meta_batch: usize,
    pub iterations: u64,
    pub l1_coefficient: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_period: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub val_episodes: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let p = TrainParams::default();
        TrainSection {
            ways: p.ways,
            shots: p.shots,
            queries: p.queries,
            inner_steps_train: p.inner_steps_train,
            inner_steps_test: p.inner_steps_test,
            alpha_init: p.alpha_init,
            mode: "lwau".to_string(),
            alpha_trainable: p.alpha_trainable,
            second_order: p.second_order,
            meta_lr: p.meta_lr,
            meta_batch: p.meta_batch,
            iterations: p.iterations,
            l1_coefficient: p.l1_coefficient,
            lr_decay_factor: p.lr_decay_factor,
            lr_decay_period: p.lr_decay_period,
            adam_beta1: p.adam.beta1,
            adam_beta2: p.adam.beta2,
            adam_epsilon: p.adam.epsilon,
            val_episodes: p.val_episodes,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<String>,
    pub checkpoint_interval: u64,
    /// `csv` or `text`.
    pub format: String,
    /// 0 selects the core count.
    pub workers: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: None,
            checkpoint_interval: 500,
            format: "csv".to_string(),
            workers: 0,
        }
    }
}

/// A validated configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub raw: RawConfig,
    pub precision: Precision,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        RunConfig::from_raw(raw)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        RunConfig::from_toml(&text)
    }

    pub fn from_raw(raw: RawConfig) -> Result<RunConfig, ConfigError> {
        let precision = match raw.precision.as_str() {
            "f32" => Precision::F32,
            "f64" => Precision::F64,
            other => return Err(field_err("precision", format!("unknown precision {other:?}"))),
        };
        let config = RunConfig { raw, precision };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let r = &self.raw;
        match r.net.arch.as_str() {
            "conv4" | "mlp" => {}
            other => return Err(field_err("net.arch", format!("unknown architecture {other:?}"))),
        }
        if r.net.arch == "conv4" && r.net.filters == 0 {
            return Err(field_err("net.filters", "must be at least 1"));
        }
        if r.net.arch == "mlp" && r.net.hidden == 0 {
            return Err(field_err("net.hidden", "must be at least 1"));
        }
        match r.data.kind.as_str() {
            "blobs" => {
                if r.data.dim.unwrap_or(0) == 0 {
                    return Err(field_err("data.dim", "blobs need a positive dimension"));
                }
                if !r.data.separation.unwrap_or(4.0).is_finite()
                    || r.data.separation.unwrap_or(4.0) < 0.0
                {
                    return Err(field_err("data.separation", "must be finite and nonnegative"));
                }
            }
            "glyphs" => {
                let size = r.data.size.unwrap_or(0);
                if size < 20 || size % 4 != 0 {
                    return Err(field_err(
                        "data.size",
                        "glyphs need a size that is a multiple of 4 and at least 20",
                    ));
                }
            }
            "image-folder" => {
                if r.data.root.is_none() || r.data.manifest.is_none() {
                    return Err(field_err(
                        "data.root",
                        "image-folder needs `root` and `manifest` paths",
                    ));
                }
                let (h, w) = (r.data.height.unwrap_or(84), r.data.width.unwrap_or(84));
                if h == 0 || w == 0 {
                    return Err(field_err("data.height", "resolution must be positive"));
                }
                match r.data.channels.unwrap_or(3) {
                    1 | 3 => {}
                    other => {
                        return Err(field_err(
                            "data.channels",
                            format!("must be 1 or 3, got {other}"),
                        ))
                    }
                }
            }
            other => return Err(field_err("data.kind", format!("unknown data kind {other:?}"))),
        }
        if r.data.train_classes == 0 || r.data.val_classes == 0 || r.data.test_classes == 0 {
            return Err(field_err("data.train_classes", "every split needs classes"));
        }
        let t = &r.train;
        if t.per_class_needed() > r.data.per_class {
            return Err(field_err(
                "data.per_class",
                format!(
                    "episodes need shots + queries = {} instances per class, pool has {}",
                    t.per_class_needed(),
                    r.data.per_class
                ),
            ));
        }
        if EngineMode::parse(&t.mode).is_none() {
            return Err(field_err("train.mode", format!("unknown mode {:?}", t.mode)));
        }
        if t.meta_lr <= 0.0 || !t.meta_lr.is_finite() {
            return Err(field_err("train.meta_lr", "must be positive and finite"));
        }
        self.train_params()?.validate()?;
        self.network_spec()?;
        Ok(())
    }

    pub fn train_params(&self) -> Result<TrainParams, ConfigError> {
        let t = &self.raw.train;
        let mode = EngineMode::parse(&t.mode)
            .ok_or_else(|| field_err("train.mode", format!("unknown mode {:?}", t.mode)))?;
        Ok(TrainParams {
            ways: t.ways,
            shots: t.shots,
            queries: t.queries,
            inner_steps_train: t.inner_steps_train,
            inner_steps_test: t.inner_steps_test,
            alpha_init: t.alpha_init,
            mode,
            alpha_trainable: t.alpha_trainable && mode == EngineMode::Lwau,
            second_order: t.second_order,
            meta_lr: t.meta_lr,
            meta_batch: t.meta_batch,
            iterations: t.iterations,
            l1_coefficient: t.l1_coefficient,
            lr_decay_factor: t.lr_decay_factor,
            lr_decay_period: t.lr_decay_period,
            adam: AdamParams {
                beta1: t.adam_beta1,
                beta2: t.adam_beta2,
                epsilon: t.adam_epsilon,
            },
            val_episodes: t.val_episodes,
        })
    }

    /// Input shape implied by the data section (and net overrides for
    /// conv4 over flat blob vectors).
    fn input_dims(&self) -> Result<(usize, usize, usize), ConfigError> {
        let d = &self.raw.data;
        match d.kind.as_str() {
            "glyphs" => {
                let s = d.size.expect("validated");
                Ok((s, s, 1))
            }
            "image-folder" => Ok((
                d.height.unwrap_or(84),
                d.width.unwrap_or(84),
                d.channels.unwrap_or(3),
            )),
            "blobs" => {
                let (h, w, c) = (
                    self.raw.net.height.unwrap_or(0),
                    self.raw.net.width.unwrap_or(0),
                    self.raw.net.channels.unwrap_or(1),
                );
                if h * w * c != d.dim.expect("validated") {
                    return Err(field_err(
                        "net.height",
                        "conv4 over blobs needs net.height * net.width * net.channels \
                         to equal data.dim",
                    ));
                }
                Ok((h, w, c))
            }
            _ => unreachable!("validated"),
        }
    }

    pub fn network_spec(&self) -> Result<NetworkSpec, ConfigError> {
        let ways = self.raw.train.ways;
        match self.raw.net.arch.as_str() {
            "conv4" => {
                let (h, w, c) = self.input_dims()?;
                Ok(conv4(self.raw.net.filters, h, w, c, ways)?)
            }
            "mlp" => {
                let dim = match self.raw.data.kind.as_str() {
                    "blobs" => self.raw.data.dim.expect("validated"),
                    _ => {
                        let (h, w, c) = self.input_dims()?;
                        h * w * c
                    }
                };
                Ok(mlp(dim, self.raw.net.hidden, ways)?)
            }
            _ => unreachable!("validated"),
        }
    }

    /// Pools for the three splits, generated or ingested per the data
    /// section. Synthetic classes draw from split-tagged streams of the
    /// master seed, so the splits are class-disjoint by construction.
    pub fn build_pools<T: Scalar>(
        &self,
    ) -> Result<(ClassPool<T>, ClassPool<T>, ClassPool<T>), ConfigError> {
        let d = &self.raw.data;
        let seed = self.raw.seed;
        let counts = [
            (Split::Train, d.train_classes),
            (Split::Validation, d.val_classes),
            (Split::Test, d.test_classes),
        ];
        match d.kind.as_str() {
            "blobs" => {
                let mut pools = counts.map(|(split, classes)| {
                    let params = BlobParams {
                        classes,
                        per_class: d.per_class,
                        dim: d.dim.expect("validated"),
                        separation: d.separation.unwrap_or(4.0),
                    };
                    let mut stream =
                        rng::stream(seed, &format!("blob-pool-{}", split.name()), 0);
                    generate_blob_pool::<T>(&params, split, &mut stream)
                });
                // conv4 over flat vectors: reshape instances to the image
                // input when the element counts agree.
                if self.raw.net.arch == "conv4" {
                    let (h, w, c) = self.input_dims()?;
                    for pool in pools.iter_mut() {
                        for class in &mut pool.classes {
                            for inst in &mut class.instances {
                                *inst = inst.reshaped(&[h, w, c]).expect("dim validated");
                            }
                        }
                    }
                }
                let [train, val, test] = pools;
                Ok((train, val, test))
            }
            "glyphs" => {
                let size = d.size.expect("validated");
                let [train, val, test] = counts.map(|(split, classes)| {
                    let params = GlyphParams {
                        classes,
                        per_class: d.per_class,
                        size,
                        jitter: GlyphJitter::standard(size),
                    };
                    let mut stream =
                        rng::stream(seed, &format!("glyph-pool-{}", split.name()), 0);
                    generate_glyph_pool::<T>(&params, split, &mut stream)
                });
                Ok((train, val, test))
            }
            "image-folder" => {
                let root = PathBuf::from(d.root.as_ref().expect("validated"));
                let manifest = PathBuf::from(d.manifest.as_ref().expect("validated"));
                let params = FolderParams {
                    height: d.height.unwrap_or(84),
                    width: d.width.unwrap_or(84),
                    channels: d.channels.unwrap_or(3),
                    min_per_class: self.raw.train.per_class_needed(),
                };
                let pools = load_image_folder::<T>(&root, &manifest, &params)?;
                for (path, reason) in &pools.report.skipped_files {
                    eprintln!("warning: skipped {}: {reason}", path.display());
                }
                for (class, count) in &pools.report.excluded_classes {
                    eprintln!(
                        "warning: excluded class {class:?} with only {count} usable images"
                    );
                }
                Ok((pools.train, pools.validation, pools.test))
            }
            _ => unreachable!("validated"),
        }
    }

    /// Canonical key-sorted text of the semantic configuration.
    pub fn canonical_text(&self) -> String {
        let r = &self.raw;
        let mut lines: Vec<String> = vec![
            format!("data.kind = {}", r.data.kind),
            format!("data.per_class = {}", r.data.per_class),
            format!("data.test_classes = {}", r.data.test_classes),
            format!("data.train_classes = {}", r.data.train_classes),
            format!("data.val_classes = {}", r.data.val_classes),
            format!("net.arch = {}", r.net.arch),
            format!("precision = {}", r.precision),
            format!("seed = {}", r.seed),
        ];
        match r.data.kind.as_str() {
            "blobs" => {
                lines.push(format!("data.dim = {}", r.data.dim.unwrap_or(0)));
                lines.push(format!(
                    "data.separation = {}",
                    r.data.separation.unwrap_or(4.0)
                ));
            }
            "glyphs" => lines.push(format!("data.size = {}", r.data.size.unwrap_or(0))),
            "image-folder" => {
                lines.push(format!("data.channels = {}", r.data.channels.unwrap_or(3)));
                lines.push(format!("data.height = {}", r.data.height.unwrap_or(84)));
                lines.push(format!("data.width = {}", r.data.width.unwrap_or(84)));
            }
            _ => {}
        }
        match r.net.arch.as_str() {
            "conv4" => {
                lines.push(format!("net.filters = {}", r.net.filters));
                if r.data.kind == "blobs" {
                    lines.push(format!("net.channels = {}", r.net.channels.unwrap_or(1)));
                    lines.push(format!("net.height = {}", r.net.height.unwrap_or(0)));
                    lines.push(format!("net.width = {}", r.net.width.unwrap_or(0)));
                }
            }
            "mlp" => lines.push(format!("net.hidden = {}", r.net.hidden)),
            _ => {}
        }
        let t = &r.train;
        lines.extend([
            format!("train.adam_beta1 = {}", t.adam_beta1),
            format!("train.adam_beta2 = {}", t.adam_beta2),
            format!("train.adam_epsilon = {}", t.adam_epsilon),
            format!("train.alpha_init = {}", t.alpha_init),
            format!("train.alpha_trainable = {}", t.alpha_trainable),
            format!("train.inner_steps_test = {}", t.inner_steps_test),
            format!("train.inner_steps_train = {}", t.inner_steps_train),
            format!("train.iterations = {}", t.iterations),
            format!("train.l1_coefficient = {}", t.l1_coefficient),
            format!("train.lr_decay_factor = {}", t.lr_decay_factor),
            format!("train.lr_decay_period = {}", t.lr_decay_period),
            format!("train.meta_batch = {}", t.meta_batch),
            format!("train.meta_lr = {}", t.meta_lr),
            format!("train.mode = {}", t.mode),
            format!("train.queries = {}", t.queries),
            format!("train.second_order = {}", t.second_order),
            format!("train.shots = {}", t.shots),
            format!("train.val_episodes = {}", t.val_episodes),
            format!("train.ways = {}", t.ways),
        ]);
        lines.sort();
        let mut text = lines.join("\n");
        text.push('\n');
        text
    }

    /// SHA-256 of the canonical text, hex-encoded.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn workers(&self) -> usize {
        match self.raw.output.workers {
            0 => std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
            n => n,
        }
    }
}

impl TrainSection {
    pub fn per_class_needed(&self) -> usize {
        self.shots + self.queries
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GLYPH_TOML: &str = r#"
seed = 7
precision = "f32"

[net]
arch = "conv4"
filters = 16

[data]
kind = "glyphs"
size = 20
train_classes = 12
val_classes = 6
test_classes = 6
per_class = 20

[train]
ways = 5
shots = 1
queries = 5
iterations = 100
"#;

    #[test]
    fn parses_and_fingerprints_stably() {
        let cfg = RunConfig::from_toml(GLYPH_TOML).unwrap();
        assert_eq!(cfg.raw.seed, 7);
        let spec = cfg.network_spec().unwrap();
        assert_eq!(spec.layer_count(), 5);
        let fp1 = cfg.fingerprint();
        assert_eq!(fp1.len(), 64);
        // Reordering the source file does not change the fingerprint.
        let reordered = GLYPH_TOML.replace("seed = 7\nprecision = \"f32\"", "precision = \"f32\"\nseed = 7");
        let cfg2 = RunConfig::from_toml(&reordered).unwrap();
        assert_eq!(fp1, cfg2.fingerprint());
        // Output settings stay outside the fingerprint.
        let with_output = format!("{GLYPH_TOML}\n[output]\nworkers = 3\n");
        let cfg3 = RunConfig::from_toml(&with_output).unwrap();
        assert_eq!(fp1, cfg3.fingerprint());
        // Semantic changes move it.
        let other_seed = GLYPH_TOML.replace("seed = 7", "seed = 8");
        assert_ne!(fp1, RunConfig::from_toml(&other_seed).unwrap().fingerprint());
    }

    #[test]
    fn field_errors_name_the_field() {
        let bad = GLYPH_TOML.replace("size = 20", "size = 18");
        let err = RunConfig::from_toml(&bad).unwrap_err();
        assert!(err.to_string().contains("data.size"), "{err}");

        let bad = GLYPH_TOML.replace("kind = \"glyphs\"\nsize = 20", "kind = \"cubes\"\nsize = 20");
        let err = RunConfig::from_toml(&bad).unwrap_err();
        assert!(err.to_string().contains("data.kind"), "{err}");

        let unknown_key = format!("{GLYPH_TOML}\n[train2]\nx = 1\n");
        assert!(RunConfig::from_toml(&unknown_key).is_err());
    }

    #[test]
    fn builds_disjoint_pools() {
        let cfg = RunConfig::from_toml(GLYPH_TOML).unwrap();
        let (train, val, test) = cfg.build_pools::<f32>().unwrap();
        assert_eq!(train.class_count(), 12);
        assert_eq!(val.class_count(), 6);
        assert_eq!(test.class_count(), 6);
        let mut ids: Vec<&str> = train
            .classes
            .iter()
            .chain(&val.classes)
            .chain(&test.classes)
            .map(|c| c.id.as_str())
            .collect();
        let before = ids.len();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), before, "class identifiers repeat across splits");
    }

    #[test]
    fn maml_mode_forces_alpha_untrainable() {
        let toml = GLYPH_TOML.replace("[train]", "[train]\nmode = \"maml\"\nalpha_trainable = false");
        let cfg = RunConfig::from_toml(&toml).unwrap();
        let params = cfg.train_params().unwrap();
        assert_eq!(params.mode, EngineMode::Maml);
        assert!(!params.trains_alpha());
        assert_eq!(params.mode_label(), "MAML");
    }
}
