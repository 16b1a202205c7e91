//! On-disk formats: the image dataset and the parameter checkpoint.
//!
//! Both files open with a plain-text header describing shapes, followed by a
//! `payload` marker line and the raw little-endian 32-bit floats in header
//! order. Writers emit fields in a fixed order so identical data produces
//! identical bytes.
//!
//! Dataset (`FAMEC-DS v1`):
//!
//! ```text
//! FAMEC-DS v1
//! images <count>
//! image <height> <width> <real|imag> <min> <max> <degenerate 0|1>
//! ...
//! payload
//! <f32-le pixels, row-major, image order>
//! ```
//!
//! Checkpoint (`FAMEC-CKPT v1`): same layout with
//! `tensor <name> <ndim> <dims...>` lines.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayD, ArrayViewD, ArrayViewMutD};
use thiserror::Error;

use crate::csnet::{ChannelImage, NormMeta, Part};

pub const DATASET_MAGIC: &str = "FAMEC-DS v1";
pub const CHECKPOINT_MAGIC: &str = "FAMEC-CKPT v1";

#[derive(Debug, Error)]
pub enum IoFormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected `{expected}`, found `{found}`")]
    BadMagic { expected: &'static str, found: String },
    #[error("malformed header line {line}: {text}")]
    MalformedHeader { line: usize, text: String },
    #[error("payload truncated: needed {need} floats, file holds {got}")]
    Truncated { need: usize, got: usize },
    #[error("header dimensions inconsistent with payload length")]
    DimensionMismatch,
    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {got:?}, expected {expected:?}")]
    ShapeMismatch { name: String, got: Vec<usize>, expected: Vec<usize> },
}

/// Write one image dataset.
pub fn save_dataset(path: &Path, images: &[ChannelImage]) -> Result<(), IoFormatError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{DATASET_MAGIC}")?;
    writeln!(w, "images {}", images.len())?;
    for img in images {
        writeln!(
            w,
            "image {} {} {} {} {} {}",
            img.height(),
            img.width(),
            img.part,
            img.norm.min,
            img.norm.max,
            u8::from(img.norm.degenerate),
        )?;
    }
    writeln!(w, "payload")?;
    for img in images {
        for &v in img.pixels.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read an image dataset, validating the header before touching the payload.
pub fn load_dataset(path: &Path) -> Result<Vec<ChannelImage>, IoFormatError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    let mut line_no = 0usize;
    let mut read_line = |r: &mut BufReader<std::fs::File>,
                         line: &mut String|
     -> Result<String, IoFormatError> {
        line.clear();
        r.read_line(line)?;
        line_no += 1;
        Ok(line.trim_end().to_string())
    };

    let magic = read_line(&mut r, &mut line)?;
    if magic != DATASET_MAGIC {
        return Err(IoFormatError::BadMagic { expected: DATASET_MAGIC, found: magic });
    }
    let count_line = read_line(&mut r, &mut line)?;
    let count: usize = count_line
        .strip_prefix("images ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| IoFormatError::MalformedHeader { line: 2, text: count_line.clone() })?;

    let mut headers = Vec::with_capacity(count);
    for i in 0..count {
        let text = read_line(&mut r, &mut line)?;
        let fields: Vec<&str> = text.split_whitespace().collect();
        let bad = || IoFormatError::MalformedHeader { line: 3 + i, text: text.clone() };
        if fields.len() != 7 || fields[0] != "image" {
            return Err(bad());
        }
        let h: usize = fields[1].parse().map_err(|_| bad())?;
        let w: usize = fields[2].parse().map_err(|_| bad())?;
        let part = match fields[3] {
            "real" => Part::Real,
            "imag" => Part::Imag,
            _ => return Err(bad()),
        };
        let min: f32 = fields[4].parse().map_err(|_| bad())?;
        let max: f32 = fields[5].parse().map_err(|_| bad())?;
        let degenerate = fields[6] == "1";
        headers.push((h, w, part, NormMeta { min, max, degenerate }));
    }
    let marker = read_line(&mut r, &mut line)?;
    if marker != "payload" {
        return Err(IoFormatError::MalformedHeader { line: 3 + count, text: marker });
    }

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let need: usize = headers.iter().map(|(h, w, _, _)| h * w).sum();
    if payload.len() != need * 4 {
        return Err(IoFormatError::Truncated { need, got: payload.len() / 4 });
    }

    let mut images = Vec::with_capacity(count);
    let mut offset = 0usize;
    for (h, w, part, norm) in headers {
        let mut pixels = Array2::zeros((h, w));
        for v in pixels.iter_mut() {
            *v = f32::from_le_bytes(payload[offset..offset + 4].try_into().unwrap());
            offset += 4;
        }
        images.push(ChannelImage { pixels, norm, part });
    }
    Ok(images)
}

/// A named-tensor container.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    /// Snapshot a list of named parameter views.
    pub fn from_named(params: &[(String, ArrayViewD<'_, f32>)]) -> Self {
        let tensors = params
            .iter()
            .map(|(name, view)| {
                (name.clone(), view.shape().to_vec(), view.iter().cloned().collect())
            })
            .collect();
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, shape, data)| (shape.as_slice(), data.as_slice()))
    }

    /// Attach an extra scalar record (metadata rides along as a tensor).
    pub fn push_scalar(&mut self, name: &str, value: f32) {
        self.tensors.push((name.to_string(), vec![1], vec![value]));
    }

    pub fn scalar(&self, name: &str) -> Option<f32> {
        self.get(name).and_then(|(_, data)| data.first().copied())
    }

    /// Copy stored tensors into mutable destination views, matching by name
    /// and validating shapes.
    pub fn apply(
        &self,
        dests: Vec<(String, ArrayViewMutD<'_, f32>)>,
    ) -> Result<(), IoFormatError> {
        for (name, mut view) in dests {
            let (shape, data) = self
                .get(&name)
                .ok_or_else(|| IoFormatError::MissingTensor(name.clone()))?;
            if shape != view.shape() {
                return Err(IoFormatError::ShapeMismatch {
                    name,
                    got: shape.to_vec(),
                    expected: view.shape().to_vec(),
                });
            }
            for (dst, &src) in view.iter_mut().zip(data) {
                *dst = src;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), IoFormatError> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "{CHECKPOINT_MAGIC}")?;
        writeln!(w, "tensors {}", self.tensors.len())?;
        for (name, shape, _) in &self.tensors {
            write!(w, "tensor {name} {}", shape.len())?;
            for d in shape {
                write!(w, " {d}")?;
            }
            writeln!(w)?;
        }
        writeln!(w, "payload")?;
        for (_, _, data) in &self.tensors {
            for &v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IoFormatError> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut line = String::new();
        let next = |r: &mut BufReader<std::fs::File>,
                        line: &mut String|
         -> Result<String, IoFormatError> {
            line.clear();
            r.read_line(line)?;
            Ok(line.trim_end().to_string())
        };
        let magic = next(&mut r, &mut line)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(IoFormatError::BadMagic { expected: CHECKPOINT_MAGIC, found: magic });
        }
        let count_line = next(&mut r, &mut line)?;
        let count: usize = count_line
            .strip_prefix("tensors ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| IoFormatError::MalformedHeader { line: 2, text: count_line.clone() })?;
        let mut metas = Vec::with_capacity(count);
        for i in 0..count {
            let text = next(&mut r, &mut line)?;
            let fields: Vec<&str> = text.split_whitespace().collect();
            let bad = || IoFormatError::MalformedHeader { line: 3 + i, text: text.clone() };
            if fields.len() < 3 || fields[0] != "tensor" {
                return Err(bad());
            }
            let name = fields[1].to_string();
            let ndim: usize = fields[2].parse().map_err(|_| bad())?;
            if fields.len() != 3 + ndim {
                return Err(bad());
            }
            let mut shape = Vec::with_capacity(ndim);
            for f in &fields[3..] {
                shape.push(f.parse().map_err(|_| bad())?);
            }
            metas.push((name, shape));
        }
        let marker = next(&mut r, &mut line)?;
        if marker != "payload" {
            return Err(IoFormatError::MalformedHeader { line: 3 + count, text: marker });
        }
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        let need: usize = metas.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if payload.len() != need * 4 {
            return Err(IoFormatError::Truncated { need, got: payload.len() / 4 });
        }
        let mut tensors = Vec::with_capacity(count);
        let mut offset = 0;
        for (name, shape) in metas {
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(f32::from_le_bytes(payload[offset..offset + 4].try_into().unwrap()));
                offset += 4;
            }
            tensors.push((name, shape, data));
        }
        Ok(Self { tensors })
    }
}

/// Convenience: snapshot one owned tensor list (used by tests).
pub fn tensor_from_array(name: &str, array: &ArrayD<f32>) -> (String, Vec<usize>, Vec<f32>) {
    (name.to_string(), array.shape().to_vec(), array.iter().cloned().collect())
}

/// Persist a trained estimator (parameters plus the metadata needed to
/// rebuild it against the same configuration).
pub fn save_bundle(
    path: &Path,
    bundle: &crate::csnet::EstimatorBundle,
) -> Result<(), IoFormatError> {
    let mut ckpt = Checkpoint::from_named(&bundle.named_params());
    ckpt.push_scalar("meta.use_importance", f32::from(u8::from(bundle.use_importance)));
    ckpt.push_scalar("meta.stat_mean", bundle.measurement_stats.0);
    ckpt.push_scalar("meta.stat_std", bundle.measurement_stats.1);
    ckpt.save(path)
}

/// Load an estimator saved by [`save_bundle`]; `cfg` must match the
/// architecture it was trained with.
pub fn load_bundle(
    path: &Path,
    cfg: &crate::config::EstimatorConfig,
) -> Result<crate::csnet::EstimatorBundle, IoFormatError> {
    use rand::SeedableRng;
    let ckpt = Checkpoint::load(path)?;
    let use_importance = ckpt
        .scalar("meta.use_importance")
        .ok_or_else(|| IoFormatError::MissingTensor("meta.use_importance".into()))?
        > 0.5;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut bundle = crate::csnet::EstimatorBundle::new(cfg, use_importance, &mut rng);
    ckpt.apply(bundle.named_params_mut())?;
    bundle.measurement_stats = (
        ckpt.scalar("meta.stat_mean").unwrap_or(0.0),
        ckpt.scalar("meta.stat_std").unwrap_or(1.0),
    );
    bundle.trained = true;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csnet::normalize;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn sample_images() -> Vec<ChannelImage> {
        let a = Array2::from_shape_fn((8, 8), |(i, j)| (i as f32 * 0.3 - j as f32 * 0.7).sin());
        let b = Array2::from_shape_fn((8, 16), |(i, j)| (i * j) as f32 * 0.01 - 0.3);
        vec![normalize(&a, Part::Real), normalize(&b, Part::Imag)]
    }

    #[test]
    fn dataset_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.ds");
        let images = sample_images();
        save_dataset(&path, &images).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.len(), images.len());
        for (a, b) in images.iter().zip(&loaded) {
            assert_eq!(a.pixels, b.pixels);
            assert_eq!(a.norm, b.norm);
            assert_eq!(a.part, b.part);
        }
        // Saving the loaded data reproduces the file byte-for-byte.
        let path2 = dir.path().join("set2.ds");
        save_dataset(&path2, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn corrupted_magic_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.ds");
        save_dataset(&path, &sample_images()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_dataset(&path), Err(IoFormatError::BadMagic { .. })));
    }

    #[test]
    fn truncated_payload_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.ds");
        save_dataset(&path, &sample_images()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_dataset(&path), Err(IoFormatError::Truncated { .. })));
    }

    #[test]
    fn checkpoint_round_trip_and_apply() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let mut ckpt = Checkpoint::default();
        ckpt.tensors.push(("a.weight".into(), vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        ckpt.push_scalar("meta.flag", 1.0);
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.tensors, ckpt.tensors);
        assert_eq!(loaded.scalar("meta.flag"), Some(1.0));

        let mut dest = ndarray::ArrayD::<f32>::zeros(vec![2, 3]);
        loaded.apply(vec![("a.weight".into(), dest.view_mut())]).unwrap();
        assert_eq!(dest[[1, 2]], 6.0);

        let mut wrong = ndarray::ArrayD::<f32>::zeros(vec![3, 2]);
        assert!(matches!(
            loaded.apply(vec![("a.weight".into(), wrong.view_mut())]),
            Err(IoFormatError::ShapeMismatch { .. })
        ));
        let mut missing = ndarray::ArrayD::<f32>::zeros(vec![1]);
        assert!(matches!(
            loaded.apply(vec![("nope".into(), missing.view_mut())]),
            Err(IoFormatError::MissingTensor(_))
        ));
    }

    #[test]
    fn repeated_saves_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        let mut ckpt = Checkpoint::default();
        ckpt.tensors.push(("x".into(), vec![4], vec![0.25, -1.5, 3.25, 0.0]));
        ckpt.save(&a).unwrap();
        ckpt.save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    proptest! {
        /// Payload round-trip preserves every f32 bit pattern we write.
        #[test]
        fn float_payload_round_trip(values in proptest::collection::vec(-1e6f32..1e6, 1..64)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("prop.ckpt");
            let mut ckpt = Checkpoint::default();
            ckpt.tensors.push(("v".into(), vec![values.len()], values.clone()));
            ckpt.save(&path).unwrap();
            let loaded = Checkpoint::load(&path).unwrap();
            prop_assert_eq!(&loaded.tensors[0].2, &values);
        }
    }
}
