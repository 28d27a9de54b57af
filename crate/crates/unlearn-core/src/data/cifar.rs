//! CIFAR-10/100 binary format readers.
//!
//! CIFAR-10 records are 3073 bytes: one label byte then 1024 R, 1024 G,
//! 1024 B bytes. CIFAR-100 records are 3074 bytes: coarse label, fine label,
//! then the same 3072 pixel bytes. Files are read exactly as distributed and
//! record order is preserved.

use std::fs;
use std::path::{Path, PathBuf};

use super::{LabeledDataset, IMAGE_BYTES};
use crate::error::{Error, Result};

pub const CIFAR10_RECORD: usize = 1 + IMAGE_BYTES;
pub const CIFAR100_RECORD: usize = 2 + IMAGE_BYTES;

pub const CIFAR10_CLASS_NAMES: [&str; 10] = [
    "airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck",
];

const CIFAR10_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];

fn read_batch_file(path: &Path, record: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path)
        .map_err(|e| Error::input(format!("format error: cannot read {}: {e}", path.display())))?;
    if bytes.is_empty() || bytes.len() % record != 0 {
        return Err(Error::input(format!(
            "format error: {} has size {} which is not a positive multiple of {record}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes)
}

/// Locate the dataset directory: `dir` itself if it holds `probe`, else the
/// conventional subdirectory name used by the distributed archives.
fn resolve_dir(dir: &Path, probe: &str, subdir: &str) -> PathBuf {
    if dir.join(probe).exists() {
        dir.to_path_buf()
    } else {
        dir.join(subdir)
    }
}

fn decode_cifar10(bytes: &[u8], images: &mut Vec<u8>, labels: &mut Vec<u16>) {
    for rec in bytes.chunks_exact(CIFAR10_RECORD) {
        labels.push(u16::from(rec[0]));
        images.extend_from_slice(&rec[1..]);
    }
}

/// Load CIFAR-10 train (5 batches, in order) and test sets.
pub fn load_cifar10(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let dir = resolve_dir(dir, "data_batch_1.bin", "cifar-10-batches-bin");
    let mut images = Vec::with_capacity(50_000 * IMAGE_BYTES);
    let mut labels = Vec::with_capacity(50_000);
    for name in CIFAR10_TRAIN_FILES {
        let bytes = read_batch_file(&dir.join(name), CIFAR10_RECORD)?;
        decode_cifar10(&bytes, &mut images, &mut labels);
    }
    let train = LabeledDataset::new("cifar10-train", 10, images, labels)?;

    let bytes = read_batch_file(&dir.join("test_batch.bin"), CIFAR10_RECORD)?;
    let mut images = Vec::with_capacity(bytes.len() / CIFAR10_RECORD * IMAGE_BYTES);
    let mut labels = Vec::new();
    decode_cifar10(&bytes, &mut images, &mut labels);
    let test = LabeledDataset::new("cifar10-test", 10, images, labels)?;
    Ok((train, test))
}

/// Load CIFAR-100 train/test. The fine label is used for classification;
/// coarse labels are retained so records re-encode bit-exactly.
/// Normalization constants are computed from the training pixels and shared
/// with the test set.
pub fn load_cifar100(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let dir = resolve_dir(dir, "train.bin", "cifar-100-binary");
    let load = |file: &str, name: &str| -> Result<LabeledDataset> {
        let bytes = read_batch_file(&dir.join(file), CIFAR100_RECORD)?;
        let n = bytes.len() / CIFAR100_RECORD;
        let mut images = Vec::with_capacity(n * IMAGE_BYTES);
        let mut labels = Vec::with_capacity(n);
        let mut coarse = Vec::with_capacity(n);
        for rec in bytes.chunks_exact(CIFAR100_RECORD) {
            coarse.push(rec[0]);
            labels.push(u16::from(rec[1]));
            images.extend_from_slice(&rec[2..]);
        }
        let mut ds = LabeledDataset::new(name, 100, images, labels)?;
        ds.coarse_labels = Some(coarse);
        Ok(ds)
    };
    let mut train = load("train.bin", "cifar100-train")?;
    let mut test = load("test.bin", "cifar100-test")?;
    let (mean, std) = train.compute_channel_stats();
    train.norm_mean = mean;
    train.norm_std = std;
    test.norm_mean = mean;
    test.norm_std = std;
    Ok((train, test))
}

/// Re-encode record `i` in the source binary layout. Round-tripping a loaded
/// file through this reproduces its bytes exactly.
pub fn reencode_record(ds: &LabeledDataset, i: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(CIFAR100_RECORD);
    if let Some(coarse) = &ds.coarse_labels {
        out.push(coarse[i]);
    }
    out.push(ds.labels[i] as u8);
    out.extend_from_slice(ds.image_bytes(i));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_cifar10_file(path: &Path, labels: &[u8]) {
        let mut f = fs::File::create(path).unwrap();
        for (i, &l) in labels.iter().enumerate() {
            let mut rec = vec![l];
            rec.extend((0..IMAGE_BYTES).map(|p| ((p + i) % 251) as u8));
            f.write_all(&rec).unwrap();
        }
    }

    #[test]
    fn loads_synthetic_cifar10_layout() {
        let dir = tempfile::tempdir().unwrap();
        for name in CIFAR10_TRAIN_FILES {
            write_cifar10_file(&dir.path().join(name), &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        }
        write_cifar10_file(&dir.path().join("test_batch.bin"), &[7, 7]);
        let (train, test) = load_cifar10(dir.path()).unwrap();
        assert_eq!(train.len(), 50);
        assert_eq!(test.len(), 2);
        // first byte of a record is the label
        assert_eq!(test.label(0), 7);
        // order preserved exactly as on disk
        assert_eq!(train.label(0), 0);
        assert_eq!(train.label(9), 9);
        assert_eq!(train.label(10), 0);
    }

    #[test]
    fn record_count_is_size_over_3073() {
        let dir = tempfile::tempdir().unwrap();
        let labels: Vec<u8> = (0..100).map(|i| (i % 10) as u8).collect();
        write_cifar10_file(&dir.path().join("data_batch_1.bin"), &labels);
        let bytes = fs::read(dir.path().join("data_batch_1.bin")).unwrap();
        assert_eq!(bytes.len(), 100 * 3073);
        assert_eq!(bytes.len() / CIFAR10_RECORD, 100);
    }

    #[test]
    fn truncated_file_is_a_format_error_naming_the_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("data_batch_1.bin"), vec![0u8; 3072]).unwrap();
        let err = load_cifar10(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("data_batch_1.bin"), "got: {msg}");
        assert!(msg.contains("3073") || msg.contains("multiple"), "got: {msg}");
    }

    #[test]
    fn missing_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_cifar10(dir.path()).unwrap_err();
        assert!(err.to_string().contains("data_batch_1.bin"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn cifar100_fine_label_and_reencode_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = Vec::new();
        for i in 0..4u8 {
            bytes.push(i); // coarse
            bytes.push(0x63); // fine = 99
            bytes.extend((0..IMAGE_BYTES).map(|p| ((p as u8).wrapping_add(i))));
        }
        fs::write(dir.path().join("train.bin"), &bytes).unwrap();
        fs::write(dir.path().join("test.bin"), &bytes).unwrap();
        let (train, _test) = load_cifar100(dir.path()).unwrap();
        assert_eq!(train.len(), 4);
        assert_eq!(train.label(0), 99);
        let mut rebuilt = Vec::new();
        for i in 0..train.len() {
            rebuilt.extend(reencode_record(&train, i));
        }
        assert_eq!(rebuilt, bytes);
    }

    #[test]
    fn cifar100_bad_record_size_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("train.bin"), vec![0u8; 3073]).unwrap();
        fs::write(dir.path().join("test.bin"), vec![0u8; 3074]).unwrap();
        let err = load_cifar100(dir.path()).unwrap_err();
        assert!(err.to_string().contains("train.bin"));
    }
}
