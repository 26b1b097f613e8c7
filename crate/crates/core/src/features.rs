//! Precomputed image features.
//!
//! Image encoders are not run here; feature vectors arrive as a binary file
//! and are served by key. A store is either *global* (one `D`-vector per
//! image, for pointwise fusion and the baseline) or *regional* (an `R × D`
//! matrix per image, one row per image region, for attention).
//!
//! File layout, little-endian:
//!
//! ```text
//! magic  b"FLNK"
//! version u32   (1)
//! kind    u8    (0 global, 1 regional)
//! count   u64
//! dim     u32   (D)
//! regions u32   (R; 1 for global)
//! count × { id u64, R·D × f32 }   ids strictly increasing
//! ```

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::rng::RngStream;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"FLNK";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 8 + 4 + 4;

/// Default global feature width.
pub const DEFAULT_GLOBAL_DIM: usize = 2048;
/// Default regional grid: 14 × 14 regions of 512 channels.
pub const DEFAULT_REGIONS: usize = 196;
pub const DEFAULT_REGION_DIM: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Global,
    Regional,
}

impl FeatureKind {
    fn code(self) -> u8 {
        match self {
            FeatureKind::Global => 0,
            FeatureKind::Regional => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(FeatureKind::Global),
            1 => Ok(FeatureKind::Regional),
            _ => Err(Error::BadMagic),
        }
    }
}

/// Borrowed view of one stored entry: a `regions × dim` row-major matrix
/// (`regions == 1` for global features).
#[derive(Debug, Clone, Copy)]
pub struct FeatureView<'a> {
    pub id: u64,
    pub regions: usize,
    pub dim: usize,
    pub values: &'a [f32],
}

impl<'a> FeatureView<'a> {
    pub fn row(&self, r: usize) -> &'a [f32] {
        &self.values[r * self.dim..(r + 1) * self.dim]
    }
}

/// Immutable, indexed collection of feature entries of one kind and shape.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    kind: FeatureKind,
    regions: usize,
    dim: usize,
    ids: Vec<u64>,
    index: HashMap<u64, usize>,
    data: Vec<f32>,
}

impl FeatureStore {
    /// Builds a store from unordered entries; each must hold `regions * dim`
    /// finite values.
    pub fn from_entries(
        kind: FeatureKind,
        regions: usize,
        dim: usize,
        mut entries: Vec<(u64, Vec<f32>)>,
    ) -> Result<Self> {
        if kind == FeatureKind::Global && regions != 1 {
            return Err(Error::DimMismatch {
                expected: 1,
                found: regions,
            });
        }
        entries.sort_by_key(|(id, _)| *id);
        let width = regions * dim;
        let mut ids = Vec::with_capacity(entries.len());
        let mut data = Vec::with_capacity(entries.len() * width);
        for (id, v) in entries {
            if ids.last() == Some(&id) {
                return Err(Error::DuplicateId(id));
            }
            if v.len() != width {
                return Err(Error::DimMismatch {
                    expected: width,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteFeature(id));
            }
            ids.push(id);
            data.extend_from_slice(&v);
        }
        Ok(Self::assemble(kind, regions, dim, ids, data))
    }

    fn assemble(kind: FeatureKind, regions: usize, dim: usize, ids: Vec<u64>, data: Vec<f32>) -> Self {
        let index = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        Self {
            kind,
            regions,
            dim,
            ids,
            index,
            data,
        }
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.index.contains_key(&id)
    }

    /// Keys in increasing order.
    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn get(&self, id: u64) -> Result<FeatureView<'_>> {
        let &slot = self.index.get(&id).ok_or(Error::MissingId(id))?;
        let width = self.regions * self.dim;
        Ok(FeatureView {
            id,
            regions: self.regions,
            dim: self.dim,
            values: &self.data[slot * width..(slot + 1) * width],
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let width = self.regions * self.dim;
        let mut out = Vec::with_capacity(HEADER_LEN + self.ids.len() * (8 + 4 * width));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind.code());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.regions as u32).to_le_bytes());
        for (slot, id) in self.ids.iter().enumerate() {
            out.extend_from_slice(&id.to_le_bytes());
            for v in &self.data[slot * width..(slot + 1) * width] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::TruncatedFile("header".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::VersionMismatch(version));
        }
        let kind = FeatureKind::from_code(bytes[8])?;
        let count = u64_at(9) as usize;
        let dim = u32_at(17) as usize;
        let regions = u32_at(21) as usize;
        if kind == FeatureKind::Global && regions != 1 {
            return Err(Error::DimMismatch {
                expected: 1,
                found: regions,
            });
        }
        let width = regions * dim;
        let entry_len = 8 + 4 * width;
        let expected = HEADER_LEN + count * entry_len;
        if bytes.len() < expected {
            return Err(Error::TruncatedFile(format!(
                "expected {expected} bytes for {count} entries, found {}",
                bytes.len()
            )));
        }
        if bytes.len() > expected {
            return Err(Error::TruncatedFile(format!(
                "{} trailing bytes after {count} entries",
                bytes.len() - expected
            )));
        }
        let mut ids = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count * width);
        for e in 0..count {
            let base = HEADER_LEN + e * entry_len;
            let id = u64_at(base);
            if let Some(&prev) = ids.last() {
                if id == prev {
                    return Err(Error::DuplicateId(id));
                }
                if id < prev {
                    return Err(Error::UnorderedIds(id));
                }
            }
            ids.push(id);
            for k in 0..width {
                let o = base + 8 + 4 * k;
                let v = f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
                if !v.is_finite() {
                    return Err(Error::NonFiniteFeature(id));
                }
                data.push(v);
            }
        }
        Ok(Self::assemble(kind, regions, dim, ids, data))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    /// Loads a store; `expect` rejects a file of the other kind.
    pub fn load(path: impl AsRef<Path>, expect: Option<FeatureKind>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let store = Self::from_bytes(&std::fs::read(path)?)?;
        if let Some(kind) = expect {
            if kind != store.kind {
                return Err(Error::Config(format!(
                    "{} holds {:?} features, expected {:?}",
                    path.display(),
                    store.kind,
                    kind
                )));
            }
        }
        Ok(store)
    }
}

/// Picks one image uniformly from an item's image list, deterministically
/// for a given `(image_ids, seed)`.
pub fn select_representative_image(image_ids: &[u64], seed: u64) -> Result<u64> {
    if image_ids.is_empty() {
        return Err(Error::NoImages);
    }
    let mut rng = RngStream::new(seed);
    Ok(image_ids[rng.index(image_ids.len())])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> FeatureStore {
        FeatureStore::from_entries(
            FeatureKind::Regional,
            2,
            3,
            vec![
                (9, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
                (4, vec![-1.0, 0.5, 0.25, 0.0, 1e-30, 7.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn lookup_and_shape() {
        let s = sample_store();
        let v = s.get(9).unwrap();
        assert_eq!((v.regions, v.dim), (2, 3));
        assert_eq!(v.row(1), &[4.0, 5.0, 6.0]);
        assert!(matches!(s.get(5), Err(Error::MissingId(5))));
        assert_eq!(s.ids(), &[4, 9]);
    }

    #[test]
    fn bytes_round_trip() {
        let s = sample_store();
        let bytes = s.to_bytes();
        let back = FeatureStore::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.get(4).unwrap().values, s.get(4).unwrap().values);
    }

    #[test]
    fn short_entry_is_truncated() {
        let s = FeatureStore::from_entries(FeatureKind::Global, 1, 4, vec![(1, vec![0.0; 4])]).unwrap();
        let mut bytes = s.to_bytes();
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(FeatureStore::from_bytes(&bytes), Err(Error::TruncatedFile(_))));
    }

    #[test]
    fn header_errors() {
        assert!(matches!(FeatureStore::from_bytes(b"NOPE...."), Err(Error::BadMagic)));
        let s = sample_store();
        let mut bytes = s.to_bytes();
        // Overwrite the second id with the first.
        let second = HEADER_LEN + 8 + 4 * 6;
        let first_id = bytes[HEADER_LEN..HEADER_LEN + 8].to_vec();
        bytes[second..second + 8].copy_from_slice(&first_id);
        assert!(matches!(FeatureStore::from_bytes(&bytes), Err(Error::DuplicateId(4))));
    }

    #[test]
    fn empty_store_is_valid() {
        let s = FeatureStore::from_entries(FeatureKind::Global, 1, 8, vec![]).unwrap();
        let back = FeatureStore::from_bytes(&s.to_bytes()).unwrap();
        assert!(back.is_empty());
        assert!(matches!(back.get(0), Err(Error::MissingId(0))));
    }

    #[test]
    fn non_finite_rejected() {
        let r = FeatureStore::from_entries(FeatureKind::Global, 1, 2, vec![(1, vec![f32::NAN, 0.0])]);
        assert!(matches!(r, Err(Error::NonFiniteFeature(1))));
    }

    #[test]
    fn representative_image() {
        assert_eq!(select_representative_image(&[42], 9).unwrap(), 42);
        assert!(matches!(select_representative_image(&[], 1), Err(Error::NoImages)));
        let ids = [10, 20, 30, 40];
        assert_eq!(
            select_representative_image(&ids, 77).unwrap(),
            select_representative_image(&ids, 77).unwrap()
        );
        let mut counts = [0usize; 4];
        for seed in 0..10_000u64 {
            let pick = select_representative_image(&ids, seed).unwrap();
            counts[ids.iter().position(|&i| i == pick).unwrap()] += 1;
        }
        for c in counts {
            assert!((2350..=2650).contains(&c), "{counts:?}");
        }
    }
}
