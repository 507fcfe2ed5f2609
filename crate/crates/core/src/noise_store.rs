//! Seed-based noise caches and their persistent assignments.
//!
//! Each data point owns `k` noise slots. Slot `j` of cache level `c` is not
//! stored as a vector but as a 64-bit seed from which the vector is
//! regenerated on demand (see [`crate::rng`]). Every cache level carries its
//! own assignment `tau_c`, initialised to the identity.
//!
//! File layout (little-endian):
//!
//! ```text
//! "LOOMNS01" | n: u64 | k: u64 | dim: u64 | master_seed: u64
//! | seeds: n*k u64, slot-major | assignments: k blocks of n u32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::linalg::Matrix;
use crate::ot::{bijection_violation, Assignment};
use crate::rng::{normal_from_seed, SplitMix64};
use crate::{Error, Result};

pub const STORE_MAGIC: &[u8; 8] = b"LOOMNS01";
const HEADER_LEN: usize = 8 + 4 * 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NoiseRef {
    pub slot: usize,
    pub cache: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseStore {
    n: usize,
    k: usize,
    dim: usize,
    master_seed: u64,
    seeds: Vec<u64>,
    assignments: Vec<Assignment>,
}

impl NoiseStore {
    /// Splits `master_seed` into `n * k` slot seeds with sequential SplitMix64.
    pub fn new(n: usize, k: usize, dim: usize, master_seed: u64) -> Result<Self> {
        if n == 0 || k == 0 || dim == 0 {
            return Err(Error::InvalidParameter(format!(
                "noise store needs n, k, dim >= 1 (got {n}, {k}, {dim})"
            )));
        }
        if n > u32::MAX as usize {
            return Err(Error::InvalidParameter(format!(
                "n = {n} does not fit 32-bit slot indices"
            )));
        }
        let mut gen = SplitMix64::new(master_seed);
        let seeds = (0..n * k).map(|_| gen.next_u64()).collect();
        Ok(Self {
            n,
            k,
            dim,
            master_seed,
            seeds,
            assignments: vec![Assignment::identity(n); k],
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn caches(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn seed(&self, r: NoiseRef) -> Result<u64> {
        self.check_ref(r)?;
        Ok(self.seeds[r.slot * self.k + r.cache])
    }

    pub fn assignment(&self, cache: usize) -> Result<&Assignment> {
        self.assignments.get(cache).ok_or_else(|| {
            Error::OutOfRange(format!("cache {cache} for a store with {} caches", self.k))
        })
    }

    pub fn assignments(&self) -> &[Assignment] {
        &self.assignments
    }

    /// The noise reference currently paired with `data_index` at `cache`.
    pub fn assigned_ref(&self, data_index: usize, cache: usize) -> Result<NoiseRef> {
        let tau = self.assignment(cache)?;
        if data_index >= self.n {
            return Err(Error::OutOfRange(format!(
                "data index {data_index} for n = {}",
                self.n
            )));
        }
        Ok(NoiseRef {
            slot: tau.get(data_index),
            cache,
        })
    }

    fn check_ref(&self, r: NoiseRef) -> Result<()> {
        if r.slot >= self.n || r.cache >= self.k {
            return Err(Error::OutOfRange(format!(
                "noise ref (slot {}, cache {}) for n = {}, k = {}",
                r.slot, r.cache, self.n, self.k
            )));
        }
        Ok(())
    }

    pub fn get_noise(&self, r: NoiseRef) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.fill_noise(r, &mut out)?;
        Ok(out)
    }

    pub fn fill_noise(&self, r: NoiseRef, out: &mut [f64]) -> Result<()> {
        self.check_ref(r)?;
        if out.len() != self.dim {
            return Err(Error::Dimension(format!(
                "buffer of length {} for noise dimension {}",
                out.len(),
                self.dim
            )));
        }
        normal_from_seed(self.seeds[r.slot * self.k + r.cache], out);
        Ok(())
    }

    /// All `n` noise vectors of one cache level, indexed by slot.
    pub fn noise_matrix(&self, cache: usize) -> Result<Matrix> {
        self.assignment(cache)?;
        let mut m = Matrix::zeros(self.n, self.dim);
        for slot in 0..self.n {
            normal_from_seed(self.seeds[slot * self.k + cache], m.row_mut(slot));
        }
        Ok(m)
    }

    /// Noise of one cache level reordered so that row `i` pairs with data point `i`.
    pub fn assigned_noise_matrix(&self, cache: usize) -> Result<Matrix> {
        let tau = self.assignment(cache)?;
        let mut m = Matrix::zeros(self.n, self.dim);
        for i in 0..self.n {
            normal_from_seed(self.seeds[tau.get(i) * self.k + cache], m.row_mut(i));
        }
        Ok(m)
    }

    /// Exchanges `tau_cache(i)` and `tau_cache(j)`.
    pub fn swap_slots(&mut self, cache: usize, i: usize, j: usize) -> Result<()> {
        if cache >= self.k || i >= self.n || j >= self.n {
            return Err(Error::OutOfRange(format!(
                "swap ({i}, {j}) at cache {cache} for n = {}, k = {}",
                self.n, self.k
            )));
        }
        self.assignments[cache].swap(i, j);
        Ok(())
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.n * self.k * 8 + self.k * self.n * 4
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(STORE_MAGIC)?;
        for v in [self.n as u64, self.k as u64, self.dim as u64, self.master_seed] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.n * self.k * 8);
        for s in &self.seeds {
            buf.extend_from_slice(&s.to_le_bytes());
        }
        w.write_all(&buf)?;
        buf.clear();
        for tau in &self.assignments {
            for &j in tau.as_slice() {
                buf.extend_from_slice(&(j as u32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..8] != STORE_MAGIC {
            return Err(Error::Format("missing LOOMNS01 magic".into()));
        }
        let word = |k: usize| u64::from_le_bytes(bytes[8 + 8 * k..16 + 8 * k].try_into().unwrap());
        let (n, k, dim, master_seed) = (word(0), word(1), word(2), word(3));
        if n == 0 || k == 0 || dim == 0 || n > u32::MAX as u64 {
            return Err(Error::Format(format!("invalid header n={n} k={k} dim={dim}")));
        }
        let expected = (n as u128) * (k as u128) * 12 + HEADER_LEN as u128;
        if bytes.len() as u128 != expected {
            return Err(Error::Format(format!(
                "file has {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let (n, k, dim) = (n as usize, k as usize, dim as usize);
        let mut offset = HEADER_LEN;
        let seeds = bytes[offset..offset + n * k * 8]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += n * k * 8;
        let mut assignments = Vec::with_capacity(k);
        for c in 0..k {
            let mapping: Vec<usize> = bytes[offset..offset + n * 4]
                .chunks_exact(4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
                .collect();
            offset += n * 4;
            if let Some(reason) = bijection_violation(&mapping) {
                return Err(Error::InvalidAssignment(format!("cache {c}: {reason}")));
            }
            assignments.push(Assignment::from_mapping(mapping)?);
        }
        Ok(Self {
            n,
            k,
            dim,
            master_seed,
            seeds,
            assignments,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = NoiseStore::new(50, 3, 4, 7).unwrap();
        let b = NoiseStore::new(50, 3, 4, 7).unwrap();
        let c = NoiseStore::new(50, 3, 4, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.seeds, c.seeds);
        assert!(a.assignments().iter().all(|t| *t == Assignment::identity(50)));
    }

    #[test]
    fn zero_sizes_are_rejected() {
        assert!(NoiseStore::new(0, 1, 1, 0).is_err());
        assert!(NoiseStore::new(1, 0, 1, 0).is_err());
        assert!(NoiseStore::new(1, 1, 0, 0).is_err());
    }

    #[test]
    fn regenerated_noise_is_standard_normal() {
        let store = NoiseStore::new(1000, 4, 2, 2024).unwrap();
        let count = 4000.0;
        for d in 0..2 {
            let mut vals = Vec::new();
            for c in 0..4 {
                let m = store.noise_matrix(c).unwrap();
                vals.extend(m.iter_rows().map(|r| r[d]));
            }
            let mean = vals.iter().sum::<f64>() / count;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
            assert!(mean.abs() <= 5.0 / count.sqrt(), "mean {mean}");
            assert!((var - 1.0).abs() <= 5.0 * (2.0 / count).sqrt(), "var {var}");
        }
    }

    #[test]
    fn get_noise_is_pure_and_ref_specific() {
        let store = NoiseStore::new(10, 2, 3, 1).unwrap();
        let r = NoiseRef { slot: 4, cache: 1 };
        assert_eq!(store.get_noise(r).unwrap(), store.get_noise(r).unwrap());
        assert_ne!(
            store.get_noise(r).unwrap(),
            store.get_noise(NoiseRef { slot: 4, cache: 0 }).unwrap()
        );
        assert!(matches!(
            store.get_noise(NoiseRef { slot: 10, cache: 0 }),
            Err(Error::OutOfRange(_))
        ));
        assert!(store.get_noise(NoiseRef { slot: 0, cache: 2 }).is_err());
    }

    #[test]
    fn swap_is_an_involution() {
        let mut s = NoiseStore::new(6, 1, 1, 3).unwrap();
        s.swap_slots(0, 2, 2).unwrap();
        assert_eq!(*s.assignment(0).unwrap(), Assignment::identity(6));
        s.swap_slots(0, 1, 4).unwrap();
        assert_eq!(s.assignment(0).unwrap().as_slice(), &[0, 4, 2, 3, 1, 5]);
        s.swap_slots(0, 1, 4).unwrap();
        assert_eq!(*s.assignment(0).unwrap(), Assignment::identity(6));
        assert!(s.swap_slots(1, 0, 0).is_err());
        assert!(s.swap_slots(0, 0, 6).is_err());
    }

    #[test]
    fn transpositions_compose_like_the_direct_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 12;
        let mut s = NoiseStore::new(n, 1, 1, 3).unwrap();
        // Scramble tau first.
        for _ in 0..30 {
            let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
            s.swap_slots(0, i, j).unwrap();
        }
        let tau = s.assignment(0).unwrap().clone();
        // Random omega over slot values, realised as position swaps on tau.
        let mut omega: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            omega.swap(i, rng.random_range(0..=i));
        }
        let omega = Assignment::from_mapping(omega).unwrap();
        let expected = omega.compose(&tau).unwrap();
        let target: Vec<usize> = expected.as_slice().to_vec();
        for p in 0..n {
            let current = s.assignment(0).unwrap().as_slice().to_vec();
            let q = (p..n).find(|&q| current[q] == target[p]).unwrap();
            s.swap_slots(0, p, q).unwrap();
        }
        assert_eq!(*s.assignment(0).unwrap(), expected);
    }

    #[test]
    fn round_trip_is_exact_and_byte_stable() {
        let mut s = NoiseStore::new(40, 3, 5, 99).unwrap();
        s.swap_slots(1, 3, 17).unwrap();
        s.swap_slots(2, 0, 39).unwrap();
        let mut bytes = Vec::new();
        s.write_to(&mut bytes).unwrap();
        assert_eq!(bytes.len(), s.encoded_len());
        let back = NoiseStore::decode(&bytes).unwrap();
        assert_eq!(back, s);
        let r = NoiseRef { slot: 17, cache: 1 };
        assert_eq!(back.get_noise(r).unwrap(), s.get_noise(r).unwrap());
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let s = NoiseStore::new(8, 2, 2, 5).unwrap();
        let mut bytes = Vec::new();
        s.write_to(&mut bytes).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(NoiseStore::decode(&bad_magic), Err(Error::Format(_))));

        assert!(matches!(
            NoiseStore::decode(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));

        // Duplicate a slot index in the second assignment block.
        let mut dup = bytes.clone();
        let block = HEADER_LEN + 8 * 2 * 8 + 8 * 4;
        dup[block + 4..block + 8].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            NoiseStore::decode(&dup),
            Err(Error::InvalidAssignment(_))
        ));
    }
}
