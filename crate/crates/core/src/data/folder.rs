//! Image-folder ingestion: `root/<class_name>/<image files>` plus a split
//! manifest of `class_name<TAB>split` lines.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;

use super::{ClassPool, ClassRecord, DataError, Provenance, Split};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct FolderParams {
    pub height: usize,
    pub width: usize,
    /// 1 for grayscale, 3 for RGB.
    pub channels: usize,
    /// Classes with fewer usable images than this are excluded (K+Q).
    pub min_per_class: usize,
}

/// What ingestion skipped, for the caller to surface.
#[derive(Clone, Debug, Default)]
pub struct IngestReport {
    pub skipped_files: Vec<(PathBuf, String)>,
    pub excluded_classes: Vec<(String, usize)>,
}

#[derive(Debug)]
pub struct FolderPools<T: Scalar> {
    pub train: ClassPool<T>,
    pub validation: ClassPool<T>,
    pub test: ClassPool<T>,
    pub report: IngestReport,
}

/// Loads the tree, decoding and bilinearly resizing every image to the
/// configured resolution with values scaled to [0, 1]. Classes and files
/// are processed in name order, so re-ingestion of the same tree is
/// reproducible.
pub fn load_image_folder<T: Scalar>(
    root: &Path,
    manifest: &Path,
    params: &FolderParams,
) -> Result<FolderPools<T>, DataError> {
    let manifest_text = fs::read_to_string(manifest).map_err(|source| DataError::Io {
        path: manifest.to_path_buf(),
        source,
    })?;
    let mut assignment: BTreeMap<String, Split> = BTreeMap::new();
    for (i, line) in manifest_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((class, split)) = line.split_once('\t') else {
            return Err(DataError::BadManifestLine {
                line: i + 1,
                content: line.to_string(),
            });
        };
        let split = Split::parse(split.trim())
            .ok_or_else(|| DataError::BadSplit(split.trim().to_string()))?;
        assignment.insert(class.trim().to_string(), split);
    }

    let entries = fs::read_dir(root).map_err(|source| DataError::Io {
        path: root.to_path_buf(),
        source,
    })?;
    let mut class_dirs: Vec<(String, PathBuf)> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path()))
        .collect();
    class_dirs.sort_by(|a, b| a.0.cmp(&b.0));
    if class_dirs.is_empty() {
        return Err(DataError::EmptyRoot(root.to_path_buf()));
    }

    let mut report = IngestReport::default();
    let mut pools: BTreeMap<&'static str, Vec<ClassRecord<T>>> = BTreeMap::new();
    for (name, dir) in class_dirs {
        let Some(&split) = assignment.get(&name) else {
            continue; // not listed in the manifest
        };
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|source| DataError::Io {
                path: dir.clone(),
                source,
            })?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();

        let mut instances = Vec::with_capacity(files.len());
        for file in files {
            match decode_one::<T>(&file, params) {
                Ok(t) => instances.push(t),
                Err(msg) => report.skipped_files.push((file, msg)),
            }
        }
        if instances.len() < params.min_per_class {
            report.excluded_classes.push((name, instances.len()));
            continue;
        }
        pools
            .entry(split.name())
            .or_default()
            .push(ClassRecord { id: name, instances });
    }

    let mut take = |split: Split| -> Result<ClassPool<T>, DataError> {
        let classes = pools.remove(split.name()).unwrap_or_default();
        if classes.is_empty() {
            return Err(DataError::EmptySplit(split.name()));
        }
        Ok(ClassPool {
            split,
            provenance: Provenance::ImageFolder,
            classes,
        })
    };
    Ok(FolderPools {
        train: take(Split::Train)?,
        validation: take(Split::Validation)?,
        test: take(Split::Test)?,
        report,
    })
}

fn decode_one<T: Scalar>(path: &Path, params: &FolderParams) -> Result<Tensor<T>, String> {
    let img = image::open(path).map_err(|e| e.to_string())?;
    let resized = img.resize_exact(
        params.width as u32,
        params.height as u32,
        FilterType::Triangle,
    );
    let (h, w, c) = (params.height, params.width, params.channels);
    let data: Vec<T> = match c {
        1 => resized
            .to_luma8()
            .into_raw()
            .into_iter()
            .map(|v| T::from_f64(v as f64 / 255.0))
            .collect(),
        3 => resized
            .to_rgb8()
            .into_raw()
            .into_iter()
            .map(|v| T::from_f64(v as f64 / 255.0))
            .collect(),
        other => return Err(format!("unsupported channel count {other}")),
    };
    Tensor::new(vec![h, w, c], data).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_png(path: &Path, side: u32, value: u8) {
        let img = image::RgbImage::from_pixel(side, side, image::Rgb([value, value / 2, 255 - value]));
        img.save(path).unwrap();
    }

    fn build_tree(root: &Path, classes: &[(&str, &str, usize)]) -> PathBuf {
        let manifest = root.join("splits.tsv");
        let mut mf = fs::File::create(&manifest).unwrap();
        for (i, (name, split, count)) in classes.iter().enumerate() {
            let dir = root.join(name);
            fs::create_dir_all(&dir).unwrap();
            for k in 0..*count {
                write_png(&dir.join(format!("img_{k:02}.png")), 12, (i * 40 + k * 9) as u8);
            }
            writeln!(mf, "{name}\t{split}").unwrap();
        }
        manifest
    }

    #[test]
    fn splits_follow_the_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = build_tree(
            tmp.path(),
            &[
                ("alpha", "train", 4),
                ("beta", "train", 4),
                ("gamma", "validation", 4),
                ("delta", "test", 4),
            ],
        );
        let params = FolderParams {
            height: 8,
            width: 8,
            channels: 3,
            min_per_class: 2,
        };
        let pools: FolderPools<f32> =
            load_image_folder(tmp.path(), &manifest, &params).unwrap();
        assert_eq!(pools.train.class_count(), 2);
        assert_eq!(pools.validation.class_count(), 1);
        assert_eq!(pools.test.class_count(), 1);
        assert_eq!(pools.train.instance_shape(), Some(&[8, 8, 3][..]));
        // Values scaled into [0, 1].
        let inst = &pools.train.classes[0].instances[0];
        assert!(inst.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn unreadable_files_skip_and_small_classes_drop() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = build_tree(
            tmp.path(),
            &[
                ("good", "train", 5),
                ("tiny", "train", 1),
                ("val", "validation", 3),
                ("tst", "test", 3),
            ],
        );
        fs::write(tmp.path().join("good/broken.png"), b"not an image").unwrap();
        let params = FolderParams {
            height: 8,
            width: 8,
            channels: 1,
            min_per_class: 3,
        };
        let pools: FolderPools<f32> =
            load_image_folder(tmp.path(), &manifest, &params).unwrap();
        assert_eq!(pools.train.class_count(), 1);
        assert_eq!(pools.report.skipped_files.len(), 1);
        assert_eq!(pools.report.excluded_classes.len(), 1);
        assert_eq!(pools.report.excluded_classes[0].0, "tiny");
    }

    #[test]
    fn reingestion_is_identical_and_empty_split_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = build_tree(
            tmp.path(),
            &[("a", "train", 3), ("b", "validation", 3)],
        );
        let params = FolderParams {
            height: 8,
            width: 8,
            channels: 3,
            min_per_class: 1,
        };
        let err = load_image_folder::<f32>(tmp.path(), &manifest, &params).unwrap_err();
        assert!(matches!(err, DataError::EmptySplit("test")));

        let manifest = build_tree(tmp.path(), &[("c", "test", 3)]);
        // Re-listing a and b restores the missing splits; c fills test.
        {
            use std::io::Write;
            let mut mf = fs::OpenOptions::new().append(true).open(&manifest).unwrap();
            writeln!(mf, "a\ttrain").unwrap();
            writeln!(mf, "b\tvalidation").unwrap();
        }
        let one: FolderPools<f32> = load_image_folder(tmp.path(), &manifest, &params).unwrap();
        let two: FolderPools<f32> = load_image_folder(tmp.path(), &manifest, &params).unwrap();
        assert_eq!(one.train, two.train);
        assert_eq!(one.test, two.test);
    }
}
