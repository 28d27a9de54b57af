//! Versioned binary container for checkpoints and saliency masks.
//!
//! Layout (all little-endian):
//!   magic "UNLRNCK1", u32 version, u8 kind,
//!   arch tag u8, u32 num_classes, u64 seed,
//!   named f32 array sections (params+buffers, then optional momenta),
//!   masks additionally carry a mode tag and sparsity.
//! Parameter bytes round-trip exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{build_classifier, ArchKind, ArchitectureSpec, Classifier};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::unlearn::{MaskMode, SaliencyMask};

const MAGIC: &[u8; 8] = b"UNLRNCK1";
const VERSION: u32 = 1;
const KIND_CHECKPOINT: u8 = 0;
const KIND_MASK: u8 = 1;

fn arch_tag(arch: &ArchKind) -> Result<u8> {
    match arch {
        ArchKind::SmallCnn => Ok(0),
        ArchKind::Resnet18Cifar => Ok(1),
        ArchKind::Custom(name) => Err(Error::config(format!(
            "custom architecture {name} is not checkpointable"
        ))),
    }
}

fn arch_from_tag(tag: u8) -> Result<ArchKind> {
    match tag {
        0 => Ok(ArchKind::SmallCnn),
        1 => Ok(ArchKind::Resnet18Cifar),
        t => Err(Error::input(format!("unknown architecture tag {t}"))),
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_named_arrays(w: &mut impl Write, arrays: &[(String, Tensor)]) -> Result<()> {
    write_u32(w, arrays.len() as u32)?;
    for (name, t) in arrays {
        write_u32(w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        write_u32(w, t.shape().len() as u32)?;
        for &d in t.shape() {
            write_u32(w, d as u32)?;
        }
        for &v in t.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_named_arrays(r: &mut impl Read) -> Result<Vec<(String, Tensor)>> {
    let n = read_u32(r)? as usize;
    if n > 1_000_000 {
        return Err(Error::input(format!("implausible array count {n}")));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = read_u32(r)? as usize;
        if name_len > 4096 {
            return Err(Error::input("implausible parameter name length"));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::input("parameter name is not utf-8"))?;
        let ndim = read_u32(r)? as usize;
        if ndim > 8 {
            return Err(Error::input("implausible tensor rank"));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(r)? as usize);
        }
        let len: usize = shape.iter().product();
        if len > 256 * 1024 * 1024 {
            return Err(Error::input("implausible tensor size"));
        }
        let mut bytes = vec![0u8; len * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((name, Tensor::from_vec(&shape, data)));
    }
    Ok(out)
}

fn header(w: &mut impl Write, kind: u8, spec: &ArchitectureSpec, seed: u64) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, VERSION)?;
    w.write_all(&[kind])?;
    w.write_all(&[arch_tag(&spec.arch)?])?;
    write_u32(w, spec.num_classes as u32)?;
    write_u64(w, seed)?;
    Ok(())
}

fn read_header(r: &mut impl Read, path: &Path, want_kind: u8) -> Result<(ArchitectureSpec, u64)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::input(format!("{} is not a checkpoint container", path.display())));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::input(format!(
            "{}: unsupported container version {version}",
            path.display()
        )));
    }
    let kind = read_u8(r)?;
    if kind != want_kind {
        return Err(Error::input(format!(
            "{}: wrong container kind {kind}, expected {want_kind}",
            path.display()
        )));
    }
    let arch = arch_from_tag(read_u8(r)?)?;
    let num_classes = read_u32(r)? as usize;
    let seed = read_u64(r)?;
    Ok((ArchitectureSpec { arch, num_classes }, seed))
}

/// Everything a checkpoint holds besides the model itself.
pub struct CheckpointExtras {
    pub momentum: Option<Vec<(String, Tensor)>>,
    pub seed: u64,
}

pub fn save_checkpoint(
    path: &Path,
    model: &Classifier,
    momentum: Option<&[(String, Tensor)]>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    header(&mut w, KIND_CHECKPOINT, &model.spec, model.build_seed())?;
    let mut arrays = Vec::new();
    model.visit_params(&mut |name, t| arrays.push((name.to_string(), t.clone())));
    // running statistics travel with the parameters
    model.visit_buffers(&mut |name, t| arrays.push((name.to_string(), t.clone())));
    write_named_arrays(&mut w, &arrays)?;
    match momentum {
        Some(m) => {
            w.write_all(&[1])?;
            write_named_arrays(&mut w, m)?;
        }
        None => w.write_all(&[0])?,
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Classifier, CheckpointExtras)> {
    let mut r = BufReader::new(File::open(path).map_err(|e| {
        Error::input(format!("cannot open checkpoint {}: {e}", path.display()))
    })?);
    let (spec, seed) = read_header(&mut r, path, KIND_CHECKPOINT)?;
    let arrays = read_named_arrays(&mut r)?;
    let has_momentum = read_u8(&mut r)? == 1;
    let momentum = if has_momentum { Some(read_named_arrays(&mut r)?) } else { None };

    let mut model = build_classifier(&spec, seed)?;
    let mut remaining: std::collections::HashMap<String, Tensor> = arrays.into_iter().collect();
    let mut missing = Vec::new();
    let mut shape_err = None;
    model.visit_params_mut(&mut |name, t| match remaining.remove(name) {
        Some(saved) if saved.same_shape(t) => *t = saved,
        Some(saved) => {
            shape_err = Some(format!(
                "{name}: shape {:?} in file, {:?} in model",
                saved.shape(),
                t.shape()
            ))
        }
        None => missing.push(name.to_string()),
    });
    model.visit_buffers_mut(&mut |name, t| match remaining.remove(name) {
        Some(saved) if saved.same_shape(t) => *t = saved,
        Some(_) => shape_err = Some(format!("{name}: buffer shape mismatch")),
        None => missing.push(name.to_string()),
    });
    if let Some(e) = shape_err {
        return Err(Error::input(format!("{}: {e}", path.display())));
    }
    if !missing.is_empty() {
        return Err(Error::input(format!(
            "{}: missing arrays for {:?}",
            path.display(),
            missing
        )));
    }
    if !remaining.is_empty() {
        let names: Vec<_> = remaining.keys().cloned().collect();
        return Err(Error::input(format!(
            "{}: unrecognized arrays {:?}",
            path.display(),
            names
        )));
    }
    Ok((model, CheckpointExtras { momentum, seed }))
}

fn mask_mode_tag(mode: &MaskMode) -> (u8, f32) {
    match mode {
        MaskMode::None => (0, 0.0),
        MaskMode::Hard => (1, 0.0),
        MaskMode::Soft => (2, 0.0),
    }
}

pub fn save_mask(path: &Path, spec: &ArchitectureSpec, mask: &SaliencyMask) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    header(&mut w, KIND_MASK, spec, 0)?;
    let (tag, _) = mask_mode_tag(&mask.mode);
    w.write_all(&[tag])?;
    w.write_all(&mask.hard_sparsity.unwrap_or(0.0).to_le_bytes())?;
    write_named_arrays(&mut w, mask.entries())?;
    w.flush()?;
    Ok(())
}

pub fn load_mask(path: &Path) -> Result<(ArchitectureSpec, SaliencyMask)> {
    let mut r = BufReader::new(File::open(path).map_err(|e| {
        Error::input(format!("cannot open mask {}: {e}", path.display()))
    })?);
    let (spec, _seed) = read_header(&mut r, path, KIND_MASK)?;
    let tag = read_u8(&mut r)?;
    let mut qb = [0u8; 4];
    r.read_exact(&mut qb)?;
    let q = f32::from_le_bytes(qb);
    let mode = match tag {
        0 => MaskMode::None,
        1 => MaskMode::Hard,
        2 => MaskMode::Soft,
        t => return Err(Error::input(format!("unknown mask mode tag {t}"))),
    };
    let entries = read_named_arrays(&mut r)?;
    let mask = SaliencyMask::from_entries(entries, mode, (tag == 1).then_some(q))?;
    Ok((spec, mask))
}
