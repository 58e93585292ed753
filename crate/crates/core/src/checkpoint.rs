//! Named tensors plus string metadata, stored as a text manifest and a flat
//! little-endian array file.
//!
//! ```text
//! manifest.txt                      tensors.bin
//! LVM-CHECKPOINT 1                  <tensor 0 values><tensor 1 values>...
//! dtype f32
//! meta <key>=<value>
//! tensor <name> <rows> <cols>
//! checksum <fnv1a-64 of tensors.bin>
//! end
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{LvmError, Result};
use crate::nn::{Adam, ParamSet, Scalar, Tensor};
use crate::replay::fnv1a;

pub const MANIFEST: &str = "manifest.txt";
pub const TENSORS: &str = "tensors.bin";
const MAGIC: &str = "LVM-CHECKPOINT 1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive<T> {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Archive<T> {
    pub fn new() -> Self {
        Archive {
            meta: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.push((key.into(), value.to_string()));
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.push((name.into(), t));
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Adds every tensor of `ps` under `prefix/`.
    pub fn push_params(&mut self, prefix: &str, ps: &ParamSet<T>) {
        for (name, t) in ps.names().iter().zip(ps.tensors()) {
            self.push(format!("{prefix}/{name}"), t.clone());
        }
    }

    pub fn push_adam(&mut self, prefix: &str, ps: &ParamSet<T>, opt: &Adam<T>) {
        self.set_meta(format!("{prefix}.adam_step"), opt.step);
        for (i, name) in ps.names().iter().enumerate() {
            self.push(format!("{prefix}.m/{name}"), opt.m[i].clone());
            self.push(format!("{prefix}.v/{name}"), opt.v[i].clone());
        }
    }

    fn required(&self, name: &str, path: &Path) -> Result<&Tensor<T>> {
        self.tensor(name).ok_or_else(|| LvmError::CorruptCheckpoint {
            path: path.to_path_buf(),
            reason: format!("missing tensor `{name}`"),
        })
    }

    /// Overwrites the tensors of `ps` from entries under `prefix/`, checking
    /// shapes.
    pub fn restore_params(&self, prefix: &str, ps: &mut ParamSet<T>, path: &Path) -> Result<()> {
        let names = ps.names().to_vec();
        for (i, name) in names.iter().enumerate() {
            let key = format!("{prefix}/{name}");
            let t = self.required(&key, path)?;
            let want = ps.tensors().nth(i).expect("index in range").shape();
            if t.shape() != want {
                return Err(LvmError::CheckpointMismatch {
                    field: key,
                    expected: format!("{}x{}", want.0, want.1),
                    found: format!("{}x{}", t.rows(), t.cols()),
                });
            }
            ps.set(i, t.clone());
        }
        Ok(())
    }

    pub fn restore_adam(&self, prefix: &str, ps: &ParamSet<T>, opt: &mut Adam<T>, path: &Path) -> Result<()> {
        let key = format!("{prefix}.adam_step");
        opt.step = self
            .meta(&key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| LvmError::CorruptCheckpoint {
                path: path.to_path_buf(),
                reason: format!("missing or invalid `{key}`"),
            })?;
        for (i, name) in ps.names().iter().enumerate() {
            for (kind, slot) in [("m", &mut opt.m[i]), ("v", &mut opt.v[i])] {
                let t = self.required(&format!("{prefix}.{kind}/{name}"), path)?;
                if t.shape() != slot.shape() {
                    return Err(LvmError::CheckpointMismatch {
                        field: format!("{prefix}.{kind}/{name}"),
                        expected: format!("{:?}", slot.shape()),
                        found: format!("{:?}", t.shape()),
                    });
                }
                *slot = t.clone();
            }
        }
        Ok(())
    }

    fn encode_values(&self) -> Vec<u8> {
        let width = if T::DTYPE == "f64" { 8 } else { 4 };
        let mut out = Vec::with_capacity(self.tensors.iter().map(|(_, t)| t.len() * width).sum());
        for (_, t) in &self.tensors {
            for &v in t.data() {
                if width == 8 {
                    out.extend_from_slice(&v.to_f64().unwrap_or(f64::NAN).to_le_bytes());
                } else {
                    out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
                }
            }
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| LvmError::io(dir, e))?;
        let blob = self.encode_values();
        let mut manifest = format!("{MAGIC}\ndtype {}\n", T::DTYPE);
        for (k, v) in &self.meta {
            debug_assert!(!k.contains(['=', '\n']) && !v.contains('\n'));
            manifest.push_str(&format!("meta {k}={v}\n"));
        }
        for (name, t) in &self.tensors {
            manifest.push_str(&format!("tensor {name} {} {}\n", t.rows(), t.cols()));
        }
        manifest.push_str(&format!("checksum {:016x}\nend\n", fnv1a(&[&blob])));
        let bin = dir.join(TENSORS);
        fs::write(&bin, &blob).map_err(|e| LvmError::io(&bin, e))?;
        let man = dir.join(MANIFEST);
        fs::write(&man, manifest).map_err(|e| LvmError::io(&man, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let man_path = dir.join(MANIFEST);
        let text = fs::read_to_string(&man_path).map_err(|e| LvmError::io(&man_path, e))?;
        let corrupt = |reason: String| LvmError::CorruptCheckpoint {
            path: man_path.clone(),
            reason,
        };
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(corrupt("bad magic line".into()));
        }
        match lines.next().and_then(|l| l.strip_prefix("dtype ")) {
            Some(d) if d == T::DTYPE => {}
            Some(d) => {
                return Err(LvmError::CheckpointMismatch {
                    field: "dtype".into(),
                    expected: T::DTYPE.into(),
                    found: d.into(),
                })
            }
            None => return Err(corrupt("missing dtype line".into())),
        }
        let mut meta = Vec::new();
        let mut shapes: Vec<(String, usize, usize)> = Vec::new();
        let mut checksum = None;
        let mut ended = false;
        for (i, line) in lines.enumerate() {
            if ended {
                return Err(corrupt(format!("content after end marker on line {}", i + 3)));
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| corrupt(format!("malformed meta line {}", i + 3)))?;
                meta.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let parts: Vec<&str> = rest.split(' ').collect();
                let parsed = match parts.as_slice() {
                    [n, r, c] => r.parse().ok().zip(c.parse().ok()).map(|(r, c)| (n.to_string(), r, c)),
                    _ => None,
                };
                shapes.push(parsed.ok_or_else(|| corrupt(format!("malformed tensor line {}", i + 3)))?);
            } else if let Some(rest) = line.strip_prefix("checksum ") {
                checksum = Some(
                    u64::from_str_radix(rest, 16).map_err(|_| corrupt(format!("malformed checksum `{rest}`")))?,
                );
            } else if line == "end" {
                ended = true;
            } else {
                return Err(corrupt(format!("unrecognised line {}", i + 3)));
            }
        }
        if !ended {
            return Err(corrupt("missing end marker".into()));
        }
        let checksum = checksum.ok_or_else(|| corrupt("missing checksum".into()))?;

        let bin_path = dir.join(TENSORS);
        let blob = fs::read(&bin_path).map_err(|e| LvmError::io(&bin_path, e))?;
        let bad_bin = |reason: String| LvmError::CorruptCheckpoint {
            path: bin_path.clone(),
            reason,
        };
        if fnv1a(&[&blob]) != checksum {
            return Err(bad_bin("checksum mismatch".into()));
        }
        let width = if T::DTYPE == "f64" { 8 } else { 4 };
        let total: usize = shapes.iter().map(|(_, r, c)| r * c).sum();
        if blob.len() != total * width {
            return Err(bad_bin(format!("expected {} bytes, found {}", total * width, blob.len())));
        }
        let mut offset = 0;
        let mut tensors = Vec::with_capacity(shapes.len());
        for (name, r, c) in shapes {
            let n = r * c;
            let data = blob[offset..offset + n * width]
                .chunks_exact(width)
                .map(|b| {
                    if width == 8 {
                        T::from_f64_lossy(f64::from_le_bytes(b.try_into().unwrap()))
                    } else {
                        T::from_f32(f32::from_le_bytes(b.try_into().unwrap())).unwrap()
                    }
                })
                .collect();
            offset += n * width;
            tensors.push((name, Tensor::new(r, c, data)));
        }
        Ok(Archive { meta, tensors })
    }
}

/// Files making up a checkpoint in `dir`.
pub fn checkpoint_files(dir: &Path) -> [PathBuf; 2] {
    [dir.join(MANIFEST), dir.join(TENSORS)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Archive<f32> {
        let mut a = Archive::new();
        a.set_meta("config.seed", 7);
        a.set_meta("note", "α = 0.5");
        a.push("w", Tensor::from_f64(2, 3, &[1.0, -2.5, 3.25, f32::MIN_POSITIVE as f64, 1e-30, 7.0]));
        a.push("b", Tensor::zeros(1, 3));
        a
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempdir("ckpt_round_trip");
        let a = sample();
        a.save(&dir).unwrap();
        let b = Archive::<f32>::load(&dir).unwrap();
        assert_eq!(a, b);
        let bytes1 = fs::read(dir.join(TENSORS)).unwrap();
        let man1 = fs::read(dir.join(MANIFEST)).unwrap();
        b.save(&dir).unwrap();
        assert_eq!(bytes1, fs::read(dir.join(TENSORS)).unwrap());
        assert_eq!(man1, fs::read(dir.join(MANIFEST)).unwrap());
    }

    #[test]
    fn detects_corruption_and_dtype_mismatch() {
        let dir = tempdir("ckpt_corrupt");
        sample().save(&dir).unwrap();
        let mut blob = fs::read(dir.join(TENSORS)).unwrap();
        blob[5] ^= 0x10;
        fs::write(dir.join(TENSORS), &blob).unwrap();
        assert!(matches!(Archive::<f32>::load(&dir), Err(LvmError::CorruptCheckpoint { .. })));
        sample().save(&dir).unwrap();
        let err = Archive::<f64>::load(&dir).unwrap_err();
        assert!(err.to_string().contains("dtype"), "{err}");
    }

    #[test]
    fn restore_checks_shapes() {
        let mut ps = ParamSet::<f32>::new();
        ps.add("w", Tensor::zeros(3, 2));
        let mut a = Archive::new();
        a.push("p/w", Tensor::zeros(2, 3));
        let err = a.restore_params("p", &mut ps, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("p/w"), "{err}");
    }

    fn tempdir(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("lvm_{name}_{}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        d
    }
}
