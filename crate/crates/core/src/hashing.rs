//! Universal hash families for chunk and tile placement plus the ±1 sign hash.
//!
//! Two strengths are offered behind one interface. The four-wise family is a
//! degree-3 polynomial over the Mersenne prime 2^61 − 1; the estimator lab and
//! the sign hash use it because the variance formulas assume fourth joint
//! moments factor as under full independence. Kernel placement only needs
//! spread, so it defaults to a cheaper multiply–xorshift mixer.
//!
//! Placement hashes map a chunk/tile coordinate into `{0, …, len − elems}` so
//! that a full chunk or tile read starting at the returned offset never
//! overflows the array; the final value is reduced modulo `len − elems + 1`.

use crate::error::{Error, Result};

/// 2^61 − 1, prime.
pub const MERSENNE_61: u64 = (1 << 61) - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HashKind {
    /// 1D chunk placement: chunk index → store offset.
    Chunk1d,
    /// 2D tile placement: (x, y) tile coordinate → store offset.
    Tile2d,
    /// ±1 sign hash.
    Sign,
}

/// Independence degree of a family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Independence {
    /// Multiply–xorshift mixer; enough spread for kernel placement.
    TwoWise,
    /// Degree-3 polynomial over GF(2^61 − 1); four-wise independent.
    FourWise,
}

#[derive(Clone, Copy, Debug)]
pub struct HashFamily {
    kind: HashKind,
    independence: Independence,
    /// Polynomial coefficients (four-wise) derived from the seed.
    coeffs: [u64; 4],
    /// Pre-mixed seed for the two-wise mixer.
    mixed_seed: u64,
    seed: u64,
}

impl HashFamily {
    pub fn new(kind: HashKind, independence: Independence, seed: u64) -> Self {
        let mut s = SplitMix64::new(seed);
        let coeffs = [
            s.next() % MERSENNE_61,
            s.next() % MERSENNE_61,
            s.next() % MERSENNE_61,
            s.next() % MERSENNE_61,
        ];
        Self {
            kind,
            independence,
            coeffs,
            mixed_seed: s.next(),
            seed,
        }
    }

    pub fn kind(&self) -> HashKind {
        self.kind
    }

    pub fn independence(&self) -> Independence {
        self.independence
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    fn raw(&self, key: u64) -> u64 {
        match self.independence {
            Independence::FourWise => poly_m61(&self.coeffs, key),
            Independence::TwoWise => mix64(key.wrapping_add(self.mixed_seed)),
        }
    }

    /// Offset for 1D chunk `chunk_index` into a store of `store_len` slots,
    /// guaranteed to leave room for `chunk_len` contiguous elements.
    pub fn chunk_offset(
        &self,
        chunk_index: u64,
        store_len: usize,
        chunk_len: usize,
    ) -> Result<usize> {
        debug_assert_eq!(self.kind, HashKind::Chunk1d);
        if chunk_len == 0 || store_len == 0 || chunk_len > store_len {
            return Err(Error::Geometry(format!(
                "chunk of {chunk_len} elements cannot be placed in a store of {store_len}"
            )));
        }
        let range = (store_len - chunk_len + 1) as u64;
        Ok((self.raw(chunk_index) % range) as usize)
    }

    /// Offset for 2D tile `(x, y)` holding `tile_elems` contiguous elements.
    pub fn tile_offset(
        &self,
        x: u64,
        y: u64,
        store_len: usize,
        tile_elems: usize,
    ) -> Result<usize> {
        debug_assert_eq!(self.kind, HashKind::Tile2d);
        if tile_elems == 0 || store_len == 0 || tile_elems > store_len {
            return Err(Error::Geometry(format!(
                "tile of {tile_elems} elements cannot be placed in a store of {store_len}"
            )));
        }
        let range = (store_len - tile_elems + 1) as u64;
        Ok((self.raw(pack2(x, y)) % range) as usize)
    }

    /// ±1 sign for a 1-coordinate key.
    #[inline]
    pub fn sign(&self, key: u64) -> f64 {
        debug_assert_eq!(self.kind, HashKind::Sign);
        if self.raw(key) & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    /// ±1 sign for a 2-coordinate key.
    #[inline]
    pub fn sign2(&self, x: u64, y: u64) -> f64 {
        debug_assert_eq!(self.kind, HashKind::Sign);
        if self.raw(pack2(x, y)) & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    /// Bucket in `{0, …, buckets − 1}`; the chunk-size-one setting used by the
    /// inner-product estimators.
    #[inline]
    pub fn bucket(&self, key: u64, buckets: usize) -> usize {
        debug_assert!(buckets > 0);
        (self.raw(key) % buckets as u64) as usize
    }
}

/// Packs two coordinates into one key. Tile grids stay far below 2^32 per
/// axis, so the packing is injective for every input this crate produces.
#[inline]
fn pack2(x: u64, y: u64) -> u64 {
    debug_assert!(x < (1 << 32) && y < (1 << 32));
    (x << 32) | (y & 0xffff_ffff)
}

/// Horner evaluation of the degree-3 polynomial over GF(2^61 − 1).
#[inline]
fn poly_m61(coeffs: &[u64; 4], key: u64) -> u64 {
    let x = key % MERSENNE_61;
    let mut acc = coeffs[3];
    for &c in [coeffs[2], coeffs[1], coeffs[0]].iter() {
        acc = add_m61(mul_m61(acc, x), c);
    }
    acc
}

#[inline]
fn mul_m61(a: u64, b: u64) -> u64 {
    let prod = (a as u128) * (b as u128);
    let folded = (prod & MERSENNE_61 as u128) as u64 + (prod >> 61) as u64;
    reduce_m61(folded)
}

#[inline]
fn add_m61(a: u64, b: u64) -> u64 {
    reduce_m61(a + b)
}

#[inline]
fn reduce_m61(mut v: u64) -> u64 {
    if v >= MERSENNE_61 {
        v -= MERSENNE_61;
    }
    if v >= MERSENNE_61 {
        v -= MERSENNE_61;
    }
    v
}

/// SplitMix64 finalizer; full-avalanche 64-bit mixer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fixed mixing function used to derive sub-seeds (per module, per trial,
/// per role) from a single master seed, keeping every experiment reproducible
/// from one integer.
#[inline]
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    mix64(
        seed ^ salt
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(0x6a09_e667_f3bc_c909),
    )
}

struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    fn next(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        mix64(self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_offset_deterministic_and_in_range() {
        let fam = HashFamily::new(HashKind::Chunk1d, Independence::TwoWise, 7);
        let v = fam.chunk_offset(0, 1024, 8).unwrap();
        assert!(v <= 1016);
        for _ in 0..4 {
            assert_eq!(fam.chunk_offset(0, 1024, 8).unwrap(), v);
        }
    }

    #[test]
    fn chunk_offset_single_legal_placement() {
        let fam = HashFamily::new(HashKind::Chunk1d, Independence::FourWise, 7);
        for idx in 0..32 {
            assert_eq!(fam.chunk_offset(idx, 8, 8).unwrap(), 0);
        }
    }

    #[test]
    fn chunk_larger_than_store_is_geometry_error() {
        let fam = HashFamily::new(HashKind::Chunk1d, Independence::TwoWise, 1);
        assert!(matches!(fam.chunk_offset(0, 4, 8), Err(Error::Geometry(_))));
    }

    #[test]
    fn tile_offset_single_legal_placement() {
        let fam = HashFamily::new(HashKind::Tile2d, Independence::TwoWise, 3);
        for x in 0..8 {
            for y in 0..8 {
                assert_eq!(fam.tile_offset(x, y, 64, 64).unwrap(), 0);
            }
        }
    }

    #[test]
    fn tile_larger_than_store_is_geometry_error() {
        let fam = HashFamily::new(HashKind::Tile2d, Independence::FourWise, 3);
        assert!(matches!(
            fam.tile_offset(0, 0, 63, 64),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn sign_is_deterministic_and_squares_to_one() {
        let fam = HashFamily::new(HashKind::Sign, Independence::FourWise, 11);
        for i in 0..1000u64 {
            let s = fam.sign(i);
            assert!(s == 1.0 || s == -1.0);
            assert_eq!(s, fam.sign(i));
            assert_eq!(s * s, 1.0);
        }
    }

    #[test]
    fn seed_change_moves_offsets() {
        // With store_len >> tile_elems two independent draws collide with
        // probability ~1/range, so nearly every probe must move.
        let a = HashFamily::new(HashKind::Tile2d, Independence::FourWise, 1);
        let b = HashFamily::new(HashKind::Tile2d, Independence::FourWise, 2);
        let store_len = 1 << 20;
        let mut moved = 0usize;
        let probes = 10_000usize;
        for i in 0..probes as u64 {
            let (x, y) = (i % 128, i / 128);
            if a.tile_offset(x, y, store_len, 16).unwrap()
                != b.tile_offset(x, y, store_len, 16).unwrap()
            {
                moved += 1;
            }
        }
        assert!(
            moved as f64 >= 0.99 * probes as f64,
            "moved {moved}/{probes}"
        );
    }

    #[test]
    fn outputs_in_range_fuzz() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let chunk = HashFamily::new(HashKind::Chunk1d, Independence::TwoWise, 5);
        let chunk4 = HashFamily::new(HashKind::Chunk1d, Independence::FourWise, 5);
        for _ in 0..1_000_000 {
            let store_len = rng.gen_range(1usize..1 << 20);
            let chunk_len = rng.gen_range(1usize..=store_len);
            let idx = rng.gen::<u64>();
            let v = chunk.chunk_offset(idx, store_len, chunk_len).unwrap();
            assert!(v + chunk_len <= store_len);
            let v4 = chunk4.chunk_offset(idx, store_len, chunk_len).unwrap();
            assert!(v4 + chunk_len <= store_len);
        }
    }

    #[test]
    fn chunk_len_changes_only_the_modulus() {
        // The raw value behind the reduction is independent of chunk_len.
        let fam = HashFamily::new(HashKind::Chunk1d, Independence::FourWise, 9);
        let store_len = 4096;
        for idx in 0..512u64 {
            let raw = fam.raw(idx);
            for chunk_len in [1usize, 3, 16, 100] {
                let range = (store_len - chunk_len + 1) as u64;
                assert_eq!(
                    fam.chunk_offset(idx, store_len, chunk_len).unwrap(),
                    (raw % range) as usize
                );
            }
        }
    }

    #[test]
    fn sign_mean_near_zero() {
        // Binomial model: mean of 10^6 signs has σ = 1/√T.
        let fam = HashFamily::new(HashKind::Sign, Independence::FourWise, 123);
        let t = 1_000_000u64;
        let sum: f64 = (0..t).map(|i| fam.sign(i)).sum();
        let sigma = (t as f64).sqrt().recip();
        assert!(
            (sum / t as f64).abs() <= 3.0 * sigma,
            "mean {} vs 3σ {}",
            sum / t as f64,
            3.0 * sigma
        );
    }

    #[test]
    fn fourwise_sign_joint_moments() {
        // Over random distinct index 4-tuples and many seeds, products of 2
        // and 4 distinct signs average to ~0, matching full independence.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let trials = 40_000usize;
        let mut sum2 = 0.0f64;
        let mut sum4 = 0.0f64;
        for t in 0..trials {
            let fam = HashFamily::new(HashKind::Sign, Independence::FourWise, t as u64);
            let mut idx = [0u64; 4];
            loop {
                for v in idx.iter_mut() {
                    *v = rng.gen_range(0..1 << 30);
                }
                if idx[0] != idx[1]
                    && idx[0] != idx[2]
                    && idx[0] != idx[3]
                    && idx[1] != idx[2]
                    && idx[1] != idx[3]
                    && idx[2] != idx[3]
                {
                    break;
                }
            }
            sum2 += fam.sign(idx[0]) * fam.sign(idx[1]);
            sum4 += fam.sign(idx[0]) * fam.sign(idx[1]) * fam.sign(idx[2]) * fam.sign(idx[3]);
        }
        let sigma = (trials as f64).sqrt().recip();
        assert!((sum2 / trials as f64).abs() <= 4.0 * sigma);
        assert!((sum4 / trials as f64).abs() <= 4.0 * sigma);
    }

    #[test]
    fn mix_seed_spreads_salts() {
        let a = mix_seed(42, 0);
        let b = mix_seed(42, 1);
        let c = mix_seed(43, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, mix_seed(42, 0));
    }
}
