//! Versioned binary checkpoints.
//!
//! Layout: magic `PSFRCKPT`, format version (u32), scalar tag, model kind,
//! TOML config echo, step (u64), then named sections of named tensors. All
//! integers are little-endian and strings are length-prefixed UTF-8.

use std::path::Path;

use psfr_autograd::io::{read_tensors, write_str, write_tensors, write_u32, write_u64, Reader};
use psfr_autograd::{Scalar, Tensor};

use crate::error::{CoreError, Result};

const MAGIC: &[u8; 8] = b"PSFRCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    Fpn,
    Psfr,
}

impl CheckpointKind {
    fn tag(self) -> &'static str {
        match self {
            CheckpointKind::Fpn => "fpn",
            CheckpointKind::Psfr => "psfr",
        }
    }

    fn from_tag(s: &str) -> Result<Self> {
        match s {
            "fpn" => Ok(CheckpointKind::Fpn),
            "psfr" => Ok(CheckpointKind::Psfr),
            other => Err(CoreError::Checkpoint(format!("unknown model kind {other:?}"))),
        }
    }
}

pub type Section<T> = Vec<(String, Tensor<T>)>;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub kind: CheckpointKind,
    /// Configuration the model was built from, as TOML.
    pub config: String,
    pub step: u64,
    pub sections: Vec<(String, Section<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn section(&self, name: &str) -> Result<&[(String, Tensor<T>)]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s.as_slice())
            .ok_or_else(|| CoreError::Checkpoint(format!("missing section {name:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        write_u32(&mut out, FORMAT_VERSION);
        write_str(&mut out, T::NAME);
        write_str(&mut out, self.kind.tag());
        write_str(&mut out, &self.config);
        write_u64(&mut out, self.step);
        write_u32(&mut out, self.sections.len() as u32);
        for (name, tensors) in &self.sections {
            write_str(&mut out, name);
            write_tensors(&mut out, tensors);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |e: psfr_autograd::Error| CoreError::Checkpoint(e.to_string());
        let mut r = Reader::new(bytes);
        if r.take(MAGIC.len()).map_err(corrupt)? != MAGIC {
            return Err(CoreError::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32().map_err(corrupt)?;
        if version != FORMAT_VERSION {
            return Err(CoreError::Checkpoint(format!("unsupported format version {version}")));
        }
        let scalar = r.string().map_err(corrupt)?;
        if scalar != T::NAME {
            return Err(CoreError::Checkpoint(format!("checkpoint holds {scalar} tensors, expected {}", T::NAME)));
        }
        let kind = CheckpointKind::from_tag(&r.string().map_err(corrupt)?)?;
        let config = r.string().map_err(corrupt)?;
        let step = r.u64().map_err(corrupt)?;
        let count = r.u32().map_err(corrupt)?;
        let mut sections = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name = r.string().map_err(corrupt)?;
            sections.push((name, read_tensors(&mut r).map_err(corrupt)?));
        }
        if !r.is_empty() {
            return Err(CoreError::Checkpoint("trailing bytes after last section".into()));
        }
        Ok(Checkpoint { kind, config, step, sections })
    }

    /// Writes to a sibling temporary file, then renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| CoreError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| CoreError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        if self.kind != kind {
            return Err(CoreError::Checkpoint(format!(
                "expected a {} checkpoint, found {}",
                kind.tag(),
                self.kind.tag()
            )));
        }
        Ok(())
    }
}

/// Reads a bare named-tensor file (used for extractor weights).
pub fn load_tensor_file<T: Scalar>(path: &Path) -> Result<Section<T>> {
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let mut r = Reader::new(&bytes);
    read_tensors(&mut r).map_err(|e| CoreError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn save_tensor_file<T: Scalar>(path: &Path, tensors: &[(String, Tensor<T>)]) -> Result<()> {
    let mut out = Vec::new();
    write_tensors(&mut out, tensors);
    std::fs::write(path, out).map_err(|e| CoreError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f32> {
        Checkpoint {
            kind: CheckpointKind::Fpn,
            config: "[train]\nseed = 1\n".into(),
            step: 42,
            sections: vec![(
                "params".into(),
                vec![
                    ("a".into(), Tensor::from_vec(&[2, 2], vec![1.0, -0.5, f32::MIN_POSITIVE, 3.25]).unwrap()),
                    ("b".into(), Tensor::scalar(7.0)),
                ],
            )],
        }
    }

    #[test]
    fn bytes_roundtrip() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn scalar_mismatch_and_corruption_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::<f64>::from_bytes(&bytes).is_err());
        assert!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::<f32>::from_bytes(&bad).is_err());
    }
}
