use std::fs;
use std::io::Write;
use std::path::Path;

use super::{io_err, DataError};
use crate::numcore::Tensor;

pub const BAG_MAGIC: &[u8; 4] = b"RASB";
pub const BAG_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 4;
const FLAG_COORDS: u8 = 1;

/// Unordered set of `n` feature vectors of width `d`, with optional grid
/// coordinates for patch bags.
///
/// Values are held as `f64` but are always exactly representable in `f32`,
/// the storage precision, so a write/read cycle is bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBag {
    matrix: Tensor,
    coords: Option<Vec<(i32, i32)>>,
}

impl FeatureBag {
    /// Rounds every value to `f32` precision.
    pub fn new(matrix: Tensor, coords: Option<Vec<(i32, i32)>>) -> Result<Self, DataError> {
        let mut matrix = matrix;
        for v in matrix.data_mut() {
            let narrowed = *v as f32;
            if !narrowed.is_finite() {
                return Err(DataError::InvalidBag(format!("non-finite or out-of-range value {v}")));
            }
            *v = f64::from(narrowed);
        }
        if let Some(c) = &coords {
            if c.len() != matrix.rows() {
                return Err(DataError::InvalidBag(format!(
                    "{} coordinates for {} instances",
                    c.len(),
                    matrix.rows()
                )));
            }
        }
        Ok(Self { matrix, coords })
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn d(&self) -> usize {
        self.matrix.cols()
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn coords(&self) -> Option<&[(i32, i32)]> {
        self.coords.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }

    /// Sub-bag of the given rows, in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Self, DataError> {
        if idx.is_empty() || idx.iter().any(|&i| i >= self.n()) {
            return Err(DataError::InvalidBag(format!("row selection {idx:?} of {} rows", self.n())));
        }
        Ok(Self {
            matrix: self.matrix.select_rows(idx),
            coords: self.coords.as_ref().map(|c| idx.iter().map(|&i| c[i]).collect()),
        })
    }

    /// Stacks bags row-wise; coordinates survive only if every part has them.
    pub fn concat(parts: &[&FeatureBag]) -> Result<Self, DataError> {
        let d = parts
            .first()
            .ok_or_else(|| DataError::InvalidBag("concatenating zero bags".into()))?
            .d();
        if parts.iter().any(|p| p.d() != d) {
            return Err(DataError::InvalidBag("concatenating bags of different widths".into()));
        }
        let data: Vec<f64> = parts.iter().flat_map(|p| p.matrix.data().iter().copied()).collect();
        let rows = data.len() / d;
        let coords = parts
            .iter()
            .map(|p| p.coords.clone())
            .collect::<Option<Vec<_>>>()
            .map(|v| v.concat());
        let matrix = Tensor::new(rows, d, data).map_err(|e| DataError::InvalidBag(e.to_string()))?;
        Ok(Self { matrix, coords })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, d) = self.matrix.shape();
        let mut out = Vec::with_capacity(HEADER_LEN + n * d * 4 + self.coords.as_ref().map_or(0, |c| c.len() * 8));
        out.extend_from_slice(BAG_MAGIC);
        out.extend_from_slice(&BAG_VERSION.to_le_bytes());
        out.push(if self.coords.is_some() { FLAG_COORDS } else { 0 });
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        for &v in self.matrix.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        if let Some(coords) = &self.coords {
            for &(x, y) in coords {
                out.extend_from_slice(&x.to_le_bytes());
                out.extend_from_slice(&y.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DataError> {
        let header = parse_header(bytes)?;
        let (n, d) = (header.n as usize, header.d as usize);
        let values = n * d;
        let coord_bytes = if header.has_coords { n * 8 } else { 0 };
        let expected = HEADER_LEN + values * 4 + coord_bytes;
        if bytes.len() < expected {
            return Err(DataError::Truncated { expected, found: bytes.len() });
        }
        if bytes.len() > expected {
            return Err(DataError::TrailingBytes(bytes.len() - expected));
        }
        let payload = &bytes[HEADER_LEN..HEADER_LEN + values * 4];
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DataError::InvalidBag("non-finite value in payload".into()));
        }
        let coords = header.has_coords.then(|| {
            bytes[HEADER_LEN + values * 4..]
                .chunks_exact(8)
                .map(|c| {
                    (
                        i32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                        i32::from_le_bytes([c[4], c[5], c[6], c[7]]),
                    )
                })
                .collect()
        });
        let matrix = Tensor::new(n, d, data).map_err(|e| DataError::InvalidBag(e.to_string()))?;
        Ok(Self { matrix, coords })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BagHeader {
    pub n: u32,
    pub d: u32,
    pub has_coords: bool,
}

fn parse_header(bytes: &[u8]) -> Result<BagHeader, DataError> {
    if bytes.len() < 4 {
        return Err(DataError::Truncated { expected: HEADER_LEN, found: bytes.len() });
    }
    if &bytes[..4] != BAG_MAGIC {
        return Err(DataError::BadMagic {
            found: [bytes[0], bytes[1], bytes[2], bytes[3]],
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(DataError::Truncated { expected: HEADER_LEN, found: bytes.len() });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != BAG_VERSION {
        return Err(DataError::UnsupportedVersion(version));
    }
    let flags = bytes[6];
    if flags & !FLAG_COORDS != 0 {
        return Err(DataError::InvalidBag(format!("unknown flag bits {flags:#04x}")));
    }
    let n = u32::from_le_bytes(bytes[7..11].try_into().expect("4 bytes"));
    let d = u32::from_le_bytes(bytes[11..15].try_into().expect("4 bytes"));
    if n == 0 || d == 0 {
        return Err(DataError::InvalidBag(format!("empty bag {n} x {d}")));
    }
    let has_coords = flags & FLAG_COORDS != 0;
    let fits = (n as usize)
        .checked_mul(d as usize)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(HEADER_LEN))
        .and_then(|v| v.checked_add(if has_coords { (n as usize).checked_mul(8)? } else { 0 }))
        .is_some_and(|total| total <= isize::MAX as usize);
    if !fits {
        return Err(DataError::DimensionOverflow { n, d });
    }
    Ok(BagHeader { n, d, has_coords })
}

pub fn write_feature_bag(bag: &FeatureBag, path: &Path) -> Result<(), DataError> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&bag.to_bytes()).map_err(io_err(path))
}

pub fn read_feature_bag(path: &Path) -> Result<FeatureBag, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    FeatureBag::from_bytes(&bytes)
}

/// Reads only the fixed-size header.
pub fn read_bag_header(path: &Path) -> Result<BagHeader, DataError> {
    use std::io::Read;
    let mut buf = [0u8; HEADER_LEN];
    let mut file = fs::File::open(path).map_err(io_err(path))?;
    let mut read = 0;
    while read < HEADER_LEN {
        let k = file.read(&mut buf[read..]).map_err(io_err(path))?;
        if k == 0 {
            break;
        }
        read += k;
    }
    parse_header(&buf[..read])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bag(rows: &[Vec<f64>], coords: Option<Vec<(i32, i32)>>) -> FeatureBag {
        FeatureBag::new(Tensor::from_rows(rows).unwrap(), coords).unwrap()
    }

    #[test]
    fn smallest_bag_round_trips() {
        let b = bag(&[vec![0.5]], None);
        let back = FeatureBag::from_bytes(&b.to_bytes()).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.coords(), None);
    }

    #[test]
    fn large_random_bag_round_trips_bytewise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Tensor::from_fn(64, 512, |_, _| rng.random_range(-3.0..3.0));
        let coords: Vec<_> = (0..64).map(|i| (i, -i)).collect();
        let b = FeatureBag::new(m, Some(coords)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.rasb");
        write_feature_bag(&b, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let back = read_feature_bag(&path).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert!(back.matrix().bitwise_eq(b.matrix()));
        assert_eq!(back.coords(), b.coords());
        assert_eq!(read_bag_header(&path).unwrap(), BagHeader { n: 64, d: 512, has_coords: true });
    }

    #[test]
    fn header_layout_is_exact() {
        let b = bag(&[vec![1.0, 2.0]], Some(vec![(3, -4)]));
        let bytes = b.to_bytes();
        let mut expected = b"RASB".to_vec();
        expected.extend_from_slice(&[1, 0, 1, 1, 0, 0, 0, 2, 0, 0, 0]);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&2.0f32.to_le_bytes());
        expected.extend_from_slice(&3i32.to_le_bytes());
        expected.extend_from_slice(&(-4i32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn parse_errors_are_distinct() {
        let good = bag(&[vec![1.0, 2.0], vec![3.0, 4.0]], None).to_bytes();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(FeatureBag::from_bytes(&bad_magic), Err(DataError::BadMagic { .. })));
        assert!(matches!(
            FeatureBag::from_bytes(&good[..good.len() - 1]),
            Err(DataError::Truncated { .. })
        ));
        let mut huge = good[..HEADER_LEN].to_vec();
        huge[7..11].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[11..15].copy_from_slice(&u32::MAX.to_le_bytes());
        let r = FeatureBag::from_bytes(&huge);
        if usize::BITS == 64 {
            // 2^64 * 4 overflows; smaller products are merely truncated
            assert!(matches!(r, Err(DataError::DimensionOverflow { .. })), "{r:?}");
        }
        let mut version = good.clone();
        version[4] = 9;
        assert!(matches!(FeatureBag::from_bytes(&version), Err(DataError::UnsupportedVersion(9))));
        let mut trailing = good;
        trailing.push(0);
        assert!(matches!(FeatureBag::from_bytes(&trailing), Err(DataError::TrailingBytes(1))));
    }

    #[test]
    fn values_are_rounded_to_storage_precision() {
        let b = bag(&[vec![0.1]], None);
        assert_eq!(b.row(0)[0], f64::from(0.1f32));
        assert!(FeatureBag::new(Tensor::scalar(1e300), None).is_err());
        assert!(FeatureBag::new(Tensor::zeros(2, 1), Some(vec![(0, 0)])).is_err());
    }

    proptest! {
        #[test]
        fn any_finite_matrix_round_trips(
            n in 1usize..6, d in 1usize..6,
            vals in proptest::collection::vec(-1e30f32..1e30f32, 36),
            with_coords in any::<bool>(),
        ) {
            let m = Tensor::from_fn(n, d, |r, c| f64::from(vals[r * d + c]));
            let coords = with_coords.then(|| (0..n as i32).map(|i| (i * 7, i - 3)).collect());
            let b = FeatureBag::new(m, coords).unwrap();
            let back = FeatureBag::from_bytes(&b.to_bytes()).unwrap();
            prop_assert!(back.matrix().bitwise_eq(b.matrix()));
            prop_assert_eq!(back.coords(), b.coords());
        }
    }
}
