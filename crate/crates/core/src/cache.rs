//! On-disk feature cache.
//!
//! One file per (utterance id, alpha) at `<dir>/a<alpha>/<id>.feat`:
//!
//! ```text
//! magic       8 bytes  b"VTLFEAT\0"
//! version     u32 LE
//! frames      u32 LE
//! dims        u32 LE
//! alpha       f64 LE
//! sample_rate u32 LE
//! values      frames * dims f32 LE, row-major
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;
use crate::warp::WarpFactor;

pub const MAGIC: &[u8; 8] = b"VTLFEAT\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 4 + 8 + 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheHeader {
    pub frames: u32,
    pub dims: u32,
    pub alpha: f64,
    pub sample_rate: u32,
}

pub fn encode(m: &FeatureMatrix, alpha: WarpFactor, sample_rate: u32) -> Vec<u8> {
    let (t, d) = m.values.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t * d);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&alpha.alpha().to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    for v in m.values.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], id: &str, path: &Path) -> Result<(CacheHeader, FeatureMatrix)> {
    let corrupt = |reason: &str| Error::Corrupt {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if u32_at(8) != VERSION {
        return Err(corrupt(&format!("unsupported version {}", u32_at(8))));
    }
    let header = CacheHeader {
        frames: u32_at(12),
        dims: u32_at(16),
        alpha: f64::from_le_bytes(bytes[20..28].try_into().unwrap()),
        sample_rate: u32_at(28),
    };
    let (t, d) = (header.frames as usize, header.dims as usize);
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * t * d {
        return Err(corrupt(&format!(
            "expected {} value bytes, found {}",
            4 * t * d,
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let alpha = WarpFactor::new(header.alpha).map_err(|_| corrupt("alpha out of range"))?;
    let values = Array2::from_shape_vec((t, d), values).map_err(|e| corrupt(&e.to_string()))?;
    Ok((
        header,
        FeatureMatrix {
            id: id.to_string(),
            alpha: Some(alpha),
            values,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct FeatureCache {
    dir: PathBuf,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FeatureCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, id: &str, alpha: WarpFactor) -> PathBuf {
        let mut p = self.dir.join(format!("a{:.2}", alpha.alpha()));
        for part in id.split('/') {
            p.push(part);
        }
        p.set_extension("feat");
        p
    }

    pub fn contains(&self, id: &str, alpha: WarpFactor) -> bool {
        self.path_for(id, alpha).is_file()
    }

    pub fn store(&self, m: &FeatureMatrix, alpha: WarpFactor, sample_rate: u32) -> Result<PathBuf> {
        let path = self.path_for(&m.id, alpha);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let tmp = path.with_extension("feat.tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&encode(m, alpha, sample_rate))
            .map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(&self, id: &str, alpha: WarpFactor) -> Result<FeatureMatrix> {
        let path = self.path_for(id, alpha);
        let mut bytes = Vec::new();
        match fs::File::open(&path) {
            Ok(mut f) => f.read_to_end(&mut bytes).map_err(|e| Error::io(&path, e))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::CacheMiss {
                    id: id.to_string(),
                    alpha: alpha.alpha(),
                })
            }
            Err(e) => return Err(Error::io(&path, e)),
        };
        let (header, m) = decode(&bytes, id, &path)?;
        if header.alpha != alpha.alpha() {
            return Err(Error::Corrupt {
                path,
                reason: format!("header alpha {} != requested {}", header.alpha, alpha),
            });
        }
        Ok(m)
    }

    /// True when a valid entry already exists; used to make extraction idempotent.
    pub fn is_valid(&self, id: &str, alpha: WarpFactor) -> bool {
        self.load(id, alpha).is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn matrix() -> FeatureMatrix {
        FeatureMatrix {
            id: "yes/a1.wav".into(),
            alpha: Some(WarpFactor::ONE),
            values: Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64 * 0.5 - 1.0),
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&matrix(), WarpFactor::ONE, 16000);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 4);
        assert_eq!(f64::from_le_bytes(bytes[20..28].try_into().unwrap()), 1.0);
        assert_eq!(u32::from_le_bytes(bytes[28..32].try_into().unwrap()), 16000);
        assert_eq!(bytes.len(), 32 + 48);
        assert_eq!(f32::from_le_bytes(bytes[32..36].try_into().unwrap()), -1.0);
    }

    #[test]
    fn store_load_and_miss() {
        let dir = tempdir().unwrap();
        let cache = FeatureCache::new(dir.path());
        let a = WarpFactor::new(0.9).unwrap();
        assert!(matches!(cache.load("yes/a1.wav", a), Err(Error::CacheMiss { .. })));
        cache.store(&matrix(), a, 16000).unwrap();
        assert!(cache.path_for("yes/a1.wav", a).ends_with("a0.90/yes/a1.feat"));
        let back = cache.load("yes/a1.wav", a).unwrap();
        assert_eq!(back.values, matrix().values);
        assert!(cache.is_valid("yes/a1.wav", a));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempdir().unwrap();
        let cache = FeatureCache::new(dir.path());
        let p = cache.store(&matrix(), WarpFactor::ONE, 16000).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            cache.load("yes/a1.wav", WarpFactor::ONE),
            Err(Error::Corrupt { .. })
        ));
    }
}
