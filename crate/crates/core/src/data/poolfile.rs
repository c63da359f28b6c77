//! Class pools on disk, using the workspace archive convention. Instances
//! are stored as `class-id/NNNN` tensors in class order, so a round trip
//! reproduces the pool exactly.

use std::path::Path;

use super::{ClassPool, ClassRecord, Provenance, Split};
use crate::io::{self, ArchiveError};
use crate::tensor::{DType, Scalar};

pub const POOL_MAGIC: &str = "lwau-pool";

pub fn save_pool<T: Scalar>(pool: &ClassPool<T>, path: &Path) -> Result<(), ArchiveError> {
    let mut entries = Vec::new();
    for class in &pool.classes {
        for (i, inst) in class.instances.iter().enumerate() {
            entries.push((format!("{}/{i:04}", class.id), inst));
        }
    }
    let fields = [
        ("provenance", pool.provenance.name().to_string()),
        ("split", pool.split.name().to_string()),
        ("classes", pool.classes.len().to_string()),
    ];
    io::write_archive(path, POOL_MAGIC, &fields, &entries)
}

pub fn load_pool<T: Scalar>(path: &Path) -> Result<ClassPool<T>, ArchiveError> {
    let archive = io::read_archive::<T>(path, POOL_MAGIC)?;
    let provenance = Provenance::parse(archive.field("provenance")?).ok_or(
        ArchiveError::BadManifest {
            line: 0,
            detail: format!("unknown provenance {:?}", archive.field("provenance")?),
        },
    )?;
    let split = Split::parse(archive.field("split")?).ok_or(ArchiveError::BadManifest {
        line: 0,
        detail: format!("unknown split {:?}", archive.field("split")?),
    })?;

    let mut classes: Vec<ClassRecord<T>> = Vec::new();
    for (name, tensor) in archive.entries {
        let (class_id, _) = name.rsplit_once('/').ok_or(ArchiveError::BadManifest {
            line: 0,
            detail: format!("instance name {name:?} lacks a class prefix"),
        })?;
        match classes.last_mut() {
            Some(last) if last.id == class_id => last.instances.push(tensor),
            _ => classes.push(ClassRecord {
                id: class_id.to_string(),
                instances: vec![tensor],
            }),
        }
    }
    Ok(ClassPool {
        split,
        provenance,
        classes,
    })
}

pub fn peek_pool_dtype(path: &Path) -> Result<DType, ArchiveError> {
    io::peek_dtype(path, POOL_MAGIC)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_blob_pool, BlobParams};
    use crate::rng::stream;

    #[test]
    fn pool_round_trip_compares_equal() {
        let params = BlobParams {
            classes: 4,
            per_class: 6,
            dim: 8,
            separation: 2.0,
        };
        let pool: ClassPool<f32> =
            generate_blob_pool(&params, Split::Validation, &mut stream(5, "pool", 0));
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("pool.bin");
        save_pool(&pool, &path).unwrap();
        assert_eq!(peek_pool_dtype(&path).unwrap(), DType::F32);
        let back: ClassPool<f32> = load_pool(&path).unwrap();
        assert_eq!(pool, back);
    }

    #[test]
    fn same_seed_writes_identical_files() {
        let params = BlobParams {
            classes: 3,
            per_class: 4,
            dim: 5,
            separation: 1.0,
        };
        let tmp = tempfile::tempdir().unwrap();
        let (p1, p2) = (tmp.path().join("a.bin"), tmp.path().join("b.bin"));
        let a: ClassPool<f64> = generate_blob_pool(&params, Split::Test, &mut stream(3, "p", 1));
        let b: ClassPool<f64> = generate_blob_pool(&params, Split::Test, &mut stream(3, "p", 1));
        save_pool(&a, &p1).unwrap();
        save_pool(&b, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
