//! Forget/retain splits and their persisted manifests.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;

const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SplitMode {
    /// Uniform sample without replacement of `round(fraction * N)` indices.
    Random { fraction: f64 },
    /// Exactly the indices whose label equals `class`.
    Class { class: usize },
}

/// Disjoint, exhaustive partition of a dataset into forget and retain sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ForgetSplit {
    pub forget: Vec<usize>,
    pub retain: Vec<usize>,
    pub mode: SplitMode,
    pub seed: u64,
    pub dataset: String,
}

impl ForgetSplit {
    pub fn forget_len(&self) -> usize {
        self.forget.len()
    }
    pub fn retain_len(&self) -> usize {
        self.retain.len()
    }
}

/// Partition `dataset` deterministically for a fixed `(mode, seed)`.
pub fn make_forget_split(
    dataset: &LabeledDataset,
    mode: SplitMode,
    seed: u64,
) -> Result<ForgetSplit> {
    let n = dataset.len();
    let mut in_forget = vec![false; n];
    match mode {
        SplitMode::Random { fraction } => {
            if !(0.0..=1.0).contains(&fraction) || !fraction.is_finite() {
                return Err(Error::config(format!(
                    "split fraction {fraction} outside [0, 1]"
                )));
            }
            let k = (fraction * n as f64).round() as usize;
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = rng::rng_for(seed, "forget-split", 0, 0);
            order.shuffle(&mut rng);
            for &i in order.iter().take(k) {
                in_forget[i] = true;
            }
        }
        SplitMode::Class { class } => {
            if class >= dataset.num_classes {
                return Err(Error::config(format!(
                    "split class {class} out of range for {} classes",
                    dataset.num_classes
                )));
            }
            for i in 0..n {
                in_forget[i] = dataset.label(i) == class;
            }
        }
    }
    let mut forget = Vec::new();
    let mut retain = Vec::new();
    for (i, &f) in in_forget.iter().enumerate() {
        if f {
            forget.push(i);
        } else {
            retain.push(i);
        }
    }
    Ok(ForgetSplit { forget, retain, mode, seed, dataset: dataset.name.clone() })
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    dataset: String,
    #[serde(flatten)]
    mode: SplitMode,
    seed: u64,
    forget_indices: Vec<usize>,
    total: usize,
}

/// Persist the split so a run can be reconstructed bit-exactly.
pub fn save_split_manifest(path: &Path, split: &ForgetSplit) -> Result<()> {
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        dataset: split.dataset.clone(),
        mode: split.mode,
        seed: split.seed,
        forget_indices: split.forget.clone(),
        total: split.forget.len() + split.retain.len(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::input(format!("cannot encode split manifest: {e}")))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_split_manifest(path: &Path) -> Result<ForgetSplit> {
    let json = fs::read_to_string(path)
        .map_err(|e| Error::input(format!("cannot read split manifest {}: {e}", path.display())))?;
    let m: Manifest = serde_json::from_str(&json)
        .map_err(|e| Error::input(format!("bad split manifest {}: {e}", path.display())))?;
    if m.format_version != MANIFEST_VERSION {
        return Err(Error::input(format!(
            "split manifest {} has unsupported version {}",
            path.display(),
            m.format_version
        )));
    }
    let mut in_forget = vec![false; m.total];
    for &i in &m.forget_indices {
        if i >= m.total {
            return Err(Error::input(format!(
                "split manifest {}: index {i} out of range {}",
                path.display(),
                m.total
            )));
        }
        in_forget[i] = true;
    }
    let retain = (0..m.total).filter(|&i| !in_forget[i]).collect();
    Ok(ForgetSplit {
        forget: m.forget_indices,
        retain,
        mode: m.mode,
        seed: m.seed,
        dataset: m.dataset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::IMAGE_BYTES;

    fn ds(labels: &[u16], k: usize) -> LabeledDataset {
        LabeledDataset::new("t", k, vec![0u8; labels.len() * IMAGE_BYTES], labels.to_vec())
            .unwrap()
    }

    fn assert_partition(split: &ForgetSplit, n: usize) {
        let mut seen = vec![0u8; n];
        for &i in &split.forget {
            seen[i] += 1;
        }
        for &i in &split.retain {
            seen[i] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1), "not a partition");
    }

    #[test]
    fn random_split_cardinality_and_determinism() {
        let labels: Vec<u16> = (0..100).map(|i| (i % 4) as u16).collect();
        let d = ds(&labels, 4);
        let a = make_forget_split(&d, SplitMode::Random { fraction: 0.1 }, 9).unwrap();
        let b = make_forget_split(&d, SplitMode::Random { fraction: 0.1 }, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.forget_len(), 10);
        assert_eq!(a.retain_len(), 90);
        assert_partition(&a, 100);
    }

    #[test]
    fn class_split_selects_exactly_that_class() {
        let labels: Vec<u16> = (0..40).map(|i| (i % 4) as u16).collect();
        let d = ds(&labels, 4);
        let s = make_forget_split(&d, SplitMode::Class { class: 2 }, 0).unwrap();
        assert_eq!(s.forget_len(), 10);
        assert!(s.forget.iter().all(|&i| d.label(i) == 2));
        assert_partition(&s, 40);
    }

    #[test]
    fn degenerate_fraction_zero() {
        let labels: Vec<u16> = (0..10).map(|i| (i % 2) as u16).collect();
        let d = ds(&labels, 2);
        let s = make_forget_split(&d, SplitMode::Random { fraction: 0.0 }, 3).unwrap();
        assert_eq!(s.forget_len(), 0);
        assert_eq!(s.retain_len(), 10);
    }

    #[test]
    fn invalid_configs_rejected() {
        let d = ds(&[0, 1], 2);
        assert!(make_forget_split(&d, SplitMode::Random { fraction: 1.5 }, 0).is_err());
        assert!(make_forget_split(&d, SplitMode::Random { fraction: -0.1 }, 0).is_err());
        assert!(make_forget_split(&d, SplitMode::Class { class: 2 }, 0).is_err());
    }

    #[test]
    fn manifest_roundtrip_is_exact() {
        let labels: Vec<u16> = (0..50).map(|i| (i % 5) as u16).collect();
        let d = ds(&labels, 5);
        let s = make_forget_split(&d, SplitMode::Random { fraction: 0.3 }, 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.manifest");
        save_split_manifest(&path, &s).unwrap();
        let loaded = load_split_manifest(&path).unwrap();
        assert_eq!(s, loaded);
    }

    #[test]
    fn partition_property_over_many_draws() {
        let labels: Vec<u16> = (0..200).map(|i| (i % 10) as u16).collect();
        let d = ds(&labels, 10);
        for seed in 0..25u64 {
            let frac = f64::from(seed as u32 % 11) / 10.0;
            let s = make_forget_split(&d, SplitMode::Random { fraction: frac }, seed).unwrap();
            assert_eq!(s.forget_len(), (frac * 200.0).round() as usize);
            assert_partition(&s, 200);
            let c = make_forget_split(&d, SplitMode::Class { class: (seed % 10) as usize }, seed)
                .unwrap();
            assert_eq!(c.forget_len(), 20);
            assert_partition(&c, 200);
        }
    }
}
