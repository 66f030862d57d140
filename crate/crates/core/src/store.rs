//! The shared compressed parameter array, its gradient buffer, and module
//! registration.
//!
//! The array is initialized Uniform(−1/C, 1/C). A module registered with
//! fan-in `n` reads its weights through scale λ = C/√n, so recovered weights
//! are distributed Uniform(−1/√n, 1/√n) at initialization regardless of C.
//!
//! Under global sharing every module's segment is the whole array; under
//! local sharing each module owns a disjoint segment, by default sized
//! proportionally to its parameter count.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::hashing::{mix_seed, HashFamily, HashKind, Independence};

/// Magic prefix of the store snapshot format.
pub const SNAPSHOT_MAGIC: &[u8; 6] = b"ROAST1";

/// Salt used when deriving the value-initialization RNG from the master seed.
const VALUES_SEED_SALT: u64 = 0xf1e1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SharingMode {
    /// One memory shared by every module.
    Global,
    /// Disjoint per-module segments.
    Local,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BindingKind {
    Lookup,
    Matmul,
}

/// Chunk/tile geometry for one binding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TileConfig {
    /// 1D chunks of `z` elements (lookup bindings).
    Chunk { z: usize },
    /// 2D tiles: `z0` tiles the input batch, the weight is cut into
    /// `z1 × z2` tiles (matmul bindings).
    Tile { z0: usize, z1: usize, z2: usize },
}

impl TileConfig {
    pub fn chunk(z: usize) -> Self {
        TileConfig::Chunk { z }
    }

    pub fn tiles(z0: usize, z1: usize, z2: usize) -> Self {
        TileConfig::Tile { z0, z1, z2 }
    }

    /// Cache-line-sized default chunk (16 × f32).
    pub fn default_lookup() -> Self {
        TileConfig::Chunk { z: 16 }
    }

    pub fn default_matmul() -> Self {
        TileConfig::Tile {
            z0: 16,
            z1: 16,
            z2: 64,
        }
    }

    /// Contiguous elements fetched per hash evaluation.
    pub fn elems(&self) -> usize {
        match *self {
            TileConfig::Chunk { z } => z,
            TileConfig::Tile { z1, z2, .. } => z1 * z2,
        }
    }

    fn validate(&self, kind: BindingKind) -> Result<()> {
        match (kind, self) {
            (BindingKind::Lookup, TileConfig::Chunk { z }) if *z > 0 => Ok(()),
            (BindingKind::Matmul, TileConfig::Tile { z0, z1, z2 })
                if *z0 > 0 && *z1 > 0 && *z2 > 0 =>
            {
                Ok(())
            }
            _ => Err(Error::Config(format!(
                "tile config {self:?} does not fit binding kind {kind:?}"
            ))),
        }
    }
}

/// A module's slice of the store. Global bindings span the whole array.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub offset: usize,
    pub len: usize,
}

/// Hash seeds derived for one binding from (master_seed, module_id).
#[derive(Clone, Copy, Debug)]
pub struct BindingSeeds {
    pub placement: u64,
    pub sign: u64,
}

/// Registration request for one logical weight tensor.
#[derive(Clone, Debug)]
pub struct ModuleSpec {
    pub kind: BindingKind,
    pub logical_shape: Vec<usize>,
    pub fan_in: usize,
    pub tile: TileConfig,
    pub use_sign_hash: bool,
    /// Kernel placement-hash strength.
    pub independence: Independence,
    /// Local-mode segment fraction; `None` means proportional to parameter
    /// count when registering a batch of modules.
    pub segment_fraction: Option<f64>,
}

impl ModuleSpec {
    pub fn lookup(logical_shape: Vec<usize>, fan_in: usize) -> Self {
        Self {
            kind: BindingKind::Lookup,
            logical_shape,
            fan_in,
            tile: TileConfig::default_lookup(),
            use_sign_hash: true,
            independence: Independence::TwoWise,
            segment_fraction: None,
        }
    }

    pub fn matmul(h: usize, o: usize, fan_in: usize) -> Self {
        Self {
            kind: BindingKind::Matmul,
            logical_shape: vec![h, o],
            fan_in,
            tile: TileConfig::default_matmul(),
            use_sign_hash: true,
            independence: Independence::TwoWise,
            segment_fraction: None,
        }
    }

    pub fn with_tile(mut self, tile: TileConfig) -> Self {
        self.tile = tile;
        self
    }

    pub fn with_sign_hash(mut self, on: bool) -> Self {
        self.use_sign_hash = on;
        self
    }

    pub fn with_independence(mut self, independence: Independence) -> Self {
        self.independence = independence;
        self
    }

    pub fn with_fraction(mut self, fraction: f64) -> Self {
        self.segment_fraction = Some(fraction);
        self
    }

    pub fn logical_len(&self) -> usize {
        self.logical_shape.iter().product()
    }

    fn validate(&self) -> Result<()> {
        if self.logical_shape.is_empty() || self.logical_shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "invalid logical shape {:?}",
                self.logical_shape
            )));
        }
        if self.kind == BindingKind::Matmul && self.logical_shape.len() != 2 {
            return Err(Error::Shape(format!(
                "matmul bindings need a 2D shape, got {:?}",
                self.logical_shape
            )));
        }
        if self.fan_in == 0 {
            return Err(Error::Config("fan_in must be positive".into()));
        }
        self.tile.validate(self.kind)
    }
}

/// One logical weight tensor's view into the store.
#[derive(Clone, Debug)]
pub struct ModuleBinding {
    pub module_id: u64,
    pub kind: BindingKind,
    pub logical_shape: Vec<usize>,
    pub fan_in: usize,
    pub lambda: f64,
    pub tile: TileConfig,
    pub seeds: BindingSeeds,
    pub segment: Segment,
    pub use_sign_hash: bool,
    pub independence: Independence,
}

impl ModuleBinding {
    pub fn logical_len(&self) -> usize {
        self.logical_shape.iter().product()
    }

    /// Trailing dimension; the row length recovered per lookup index.
    pub fn row_len(&self) -> usize {
        *self.logical_shape.last().expect("non-empty shape")
    }

    pub fn rows(&self) -> usize {
        self.logical_len() / self.row_len()
    }

    pub fn placement_family(&self) -> HashFamily {
        let kind = match self.kind {
            BindingKind::Lookup => HashKind::Chunk1d,
            BindingKind::Matmul => HashKind::Tile2d,
        };
        HashFamily::new(kind, self.independence, self.seeds.placement)
    }

    /// Sign hashes always use the four-wise family so measured estimator
    /// moments match the variance theory.
    pub fn sign_family(&self) -> HashFamily {
        HashFamily::new(HashKind::Sign, Independence::FourWise, self.seeds.sign)
    }
}

/// The shared compressed parameter array and its paired gradient buffer.
#[derive(Clone, Debug)]
pub struct CompressedStore {
    values: Vec<f64>,
    grads: Vec<f64>,
    init_scale: f64,
    master_seed: u64,
    mode: SharingMode,
    /// Next unclaimed slot in local mode.
    carve_cursor: usize,
    next_module_id: u64,
    threads: usize,
}

impl CompressedStore {
    /// Creates a store of `m` slots initialized i.i.d. Uniform(−1/C, 1/C)
    /// from a seeded generator; gradients start at zero.
    pub fn create(
        m: usize,
        init_scale_c: f64,
        master_seed: u64,
        mode: SharingMode,
    ) -> Result<Self> {
        if m == 0 {
            return Err(Error::Geometry("store must have at least one slot".into()));
        }
        if !(init_scale_c > 0.0) {
            return Err(Error::Config(format!(
                "init scale C must be positive, got {init_scale_c}"
            )));
        }
        let bound = 1.0 / init_scale_c;
        let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(master_seed, VALUES_SEED_SALT));
        let mut values = Vec::with_capacity(m);
        for _ in 0..m {
            // Strictly inside (−1/C, 1/C): resample the measure-zero left edge.
            let v = loop {
                let u: f64 = rng.gen();
                if u > 0.0 {
                    break bound * (2.0 * u - 1.0);
                }
            };
            values.push(v);
        }
        Ok(Self {
            values,
            grads: vec![0.0; m],
            init_scale: init_scale_c,
            master_seed,
            mode,
            carve_cursor: 0,
            next_module_id: 0,
            threads: 1,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access for optimizer updates and gradient checks.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    /// Values mutably alongside the gradients, for optimizer updates.
    pub fn values_and_grads_mut(&mut self) -> (&mut [f64], &[f64]) {
        (&mut self.values, &self.grads)
    }

    pub fn init_scale(&self) -> f64 {
        self.init_scale
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn mode(&self) -> SharingMode {
        self.mode
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    /// Caps worker threads used by forward/backward passes.
    pub fn set_threads(&mut self, threads: usize) {
        self.threads = threads.max(1);
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Registers one module. In local mode the spec must carry an explicit
    /// segment fraction; use [`register_modules`] for proportional carving.
    ///
    /// [`register_modules`]: CompressedStore::register_modules
    pub fn register_module(&mut self, spec: &ModuleSpec) -> Result<ModuleBinding> {
        spec.validate()?;
        let segment = match self.mode {
            SharingMode::Global => Segment {
                offset: 0,
                len: self.len(),
            },
            SharingMode::Local => {
                let fraction = spec.segment_fraction.ok_or_else(|| {
                    Error::Config(
                        "local-mode registration needs a segment fraction; \
                         register modules as a batch for proportional carving"
                            .into(),
                    )
                })?;
                self.carve(fraction)?
            }
        };
        self.bind(spec, segment)
    }

    /// Registers a batch of modules. In local mode unspecified fractions
    /// default to fᵢ = nᵢ/n (proportional to parameter counts) and the
    /// remainder slots after flooring go to the last module, so segment
    /// lengths always sum to the full remaining store.
    pub fn register_modules(&mut self, specs: &[ModuleSpec]) -> Result<Vec<ModuleBinding>> {
        if specs.is_empty() {
            return Ok(Vec::new());
        }
        for spec in specs {
            spec.validate()?;
        }
        match self.mode {
            SharingMode::Global => specs.iter().map(|s| self.register_module(s)).collect(),
            SharingMode::Local => {
                let total: usize = specs.iter().map(|s| s.logical_len()).sum();
                let fractions: Vec<f64> = specs
                    .iter()
                    .map(|s| {
                        s.segment_fraction
                            .unwrap_or(s.logical_len() as f64 / total as f64)
                    })
                    .collect();
                let avail = self.len() - self.carve_cursor;
                let mut lens: Vec<usize> = fractions
                    .iter()
                    .map(|f| (f * self.len() as f64).floor() as usize)
                    .collect();
                let used: usize = lens.iter().sum();
                if used > avail {
                    return Err(Error::Capacity(format!(
                        "segments need {used} slots but only {avail} remain"
                    )));
                }
                // Remainder to the last piece so Σ|Mᵢ| covers the store.
                *lens.last_mut().unwrap() += avail - used;
                specs
                    .iter()
                    .zip(lens)
                    .map(|(spec, len)| {
                        let segment = self.carve_exact(len)?;
                        self.bind(spec, segment)
                    })
                    .collect()
            }
        }
    }

    fn carve(&mut self, fraction: f64) -> Result<Segment> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!(
                "segment fraction must be in (0, 1], got {fraction}"
            )));
        }
        let len = (fraction * self.len() as f64).floor() as usize;
        self.carve_exact(len)
    }

    fn carve_exact(&mut self, len: usize) -> Result<Segment> {
        if len == 0 {
            return Err(Error::Geometry(
                "segment fraction too small: floor(f·m) must be at least 1".into(),
            ));
        }
        if self.carve_cursor + len > self.len() {
            return Err(Error::Capacity(format!(
                "cannot carve {len} slots at cursor {} of {}",
                self.carve_cursor,
                self.len()
            )));
        }
        let segment = Segment {
            offset: self.carve_cursor,
            len,
        };
        self.carve_cursor += len;
        Ok(segment)
    }

    fn bind(&mut self, spec: &ModuleSpec, segment: Segment) -> Result<ModuleBinding> {
        if spec.tile.elems() > segment.len {
            return Err(Error::Geometry(format!(
                "tile of {} elements exceeds segment of {} slots",
                spec.tile.elems(),
                segment.len
            )));
        }
        let module_id = self.next_module_id;
        self.next_module_id += 1;
        Ok(ModuleBinding {
            module_id,
            kind: spec.kind,
            logical_shape: spec.logical_shape.clone(),
            fan_in: spec.fan_in,
            lambda: self.init_scale / (spec.fan_in as f64).sqrt(),
            tile: spec.tile,
            seeds: BindingSeeds {
                placement: mix_seed(self.master_seed, module_id * 2 + 1),
                sign: mix_seed(self.master_seed, module_id * 2 + 2),
            },
            segment,
            use_sign_hash: spec.use_sign_hash,
            independence: spec.independence,
        })
    }

    /// Log function counts expressible under global vs local sharing for the
    /// registered bindings: n·ln m against Σ nᵢ·ln |Mᵢ|. In global mode the
    /// local segment sizes are the hypothetical proportional carving.
    pub fn expressivity_log_count(&self, bindings: &[ModuleBinding]) -> (f64, f64) {
        let sizes: Vec<usize> = bindings.iter().map(|b| b.logical_len()).collect();
        let segments: Vec<usize> = match self.mode {
            SharingMode::Local => bindings.iter().map(|b| b.segment.len).collect(),
            SharingMode::Global => proportional_segments(self.len(), &sizes),
        };
        expressivity_log_count(self.len(), &sizes, &segments)
    }

    /// Writes the snapshot: magic, m (u64 LE), C (f64 LE), master seed
    /// (u64 LE), then m values as f64 LE.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&self.init_scale.to_le_bytes())?;
        w.write_all(&self.master_seed.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.save(std::io::BufWriter::new(file))
    }

    /// Reads a snapshot written by [`save`]. The sharing mode and module
    /// registrations are not part of the format; they are reconstructed
    /// deterministically by re-registering against the restored master seed.
    ///
    /// [`save`]: CompressedStore::save
    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 6];
        read_exact_or_format(&mut r, &mut magic, "magic")?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}: not a store snapshot or unsupported version",
                String::from_utf8_lossy(&magic)
            )));
        }
        let mut buf8 = [0u8; 8];
        read_exact_or_format(&mut r, &mut buf8, "length")?;
        let m = u64::from_le_bytes(buf8) as usize;
        read_exact_or_format(&mut r, &mut buf8, "init scale")?;
        let init_scale = f64::from_le_bytes(buf8);
        read_exact_or_format(&mut r, &mut buf8, "master seed")?;
        let master_seed = u64::from_le_bytes(buf8);
        if m == 0 || !(init_scale > 0.0) {
            return Err(Error::Format("corrupt header".into()));
        }
        let mut values = Vec::with_capacity(m);
        for _ in 0..m {
            read_exact_or_format(&mut r, &mut buf8, "values")?;
            values.push(f64::from_le_bytes(buf8));
        }
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(Error::Format("trailing bytes after values".into()));
        }
        Ok(Self {
            grads: vec![0.0; m],
            values,
            init_scale,
            master_seed,
            mode: SharingMode::Global,
            carve_cursor: 0,
            next_module_id: 0,
            threads: 1,
        })
    }

    pub fn load_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::load(std::io::BufReader::new(file))
    }
}

fn read_exact_or_format<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format(format!("truncated snapshot while reading {what}")))
}

/// Proportional carving used for hypothetical local layouts: floor(nᵢ/n · m)
/// with the remainder on the last piece.
pub fn proportional_segments(memory_m: usize, piece_sizes: &[usize]) -> Vec<usize> {
    let total: usize = piece_sizes.iter().sum();
    if total == 0 || piece_sizes.is_empty() {
        return vec![memory_m; piece_sizes.len().max(1)];
    }
    let mut lens: Vec<usize> = piece_sizes
        .iter()
        .map(|&n| ((n as f64 / total as f64) * memory_m as f64).floor() as usize)
        .collect();
    let used: usize = lens.iter().sum();
    *lens.last_mut().unwrap() += memory_m.saturating_sub(used);
    lens
}

/// (n·ln m, Σ nᵢ·ln |Mᵢ|): log counts of functions expressible under global
/// and local sharing. Global dominates because every ln|Mᵢ| ≤ ln m.
pub fn expressivity_log_count(
    memory_m: usize,
    piece_sizes: &[usize],
    segment_sizes: &[usize],
) -> (f64, f64) {
    assert_eq!(piece_sizes.len(), segment_sizes.len());
    let n: usize = piece_sizes.iter().sum();
    let global = n as f64 * (memory_m as f64).ln();
    // Empty pieces contribute nothing (0 · ln mᵢ), whatever their segment.
    let local = piece_sizes
        .iter()
        .zip(segment_sizes)
        .filter(|(&ni, _)| ni > 0)
        .map(|(&ni, &mi)| ni as f64 * (mi as f64).ln())
        .sum();
    (global, local)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn create_rejects_empty_store() {
        assert!(matches!(
            CompressedStore::create(0, 1.0, 1, SharingMode::Global),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn values_strictly_inside_bound_and_mean_near_zero() {
        let m = 1_000_000;
        let store = CompressedStore::create(m, 1.0, 42, SharingMode::Global).unwrap();
        assert!(store.values().iter().all(|v| v.abs() < 1.0));
        // Uniform(−1, 1): σ of the sample mean is 1/√(3m).
        let mean: f64 = store.values().iter().sum::<f64>() / m as f64;
        let sigma = (3.0 * m as f64).sqrt().recip();
        assert!(mean.abs() <= 3.0 * sigma, "mean {mean} vs 3σ {sigma}");
    }

    #[test]
    fn single_slot_respects_scale() {
        let store = CompressedStore::create(1, 2.0, 7, SharingMode::Global).unwrap();
        assert!(store.values()[0].abs() < 0.5);
    }

    #[test]
    fn same_seed_reproduces_values() {
        let a = CompressedStore::create(4096, 1.5, 9, SharingMode::Global).unwrap();
        let b = CompressedStore::create(4096, 1.5, 9, SharingMode::Global).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn zero_grads_is_idempotent_and_leaves_values() {
        let mut store = CompressedStore::create(128, 1.0, 3, SharingMode::Global).unwrap();
        let before = store.values().to_vec();
        store.grads_mut()[5] = 2.5;
        store.zero_grads();
        assert!(store.grads().iter().all(|&g| g == 0.0));
        store.zero_grads();
        assert!(store.grads().iter().all(|&g| g == 0.0));
        assert_eq!(store.values(), &before[..]);
    }

    #[test]
    fn lambda_follows_scale_formula() {
        let mut store = CompressedStore::create(256, 1.0, 1, SharingMode::Global).unwrap();
        let b = store
            .register_module(&ModuleSpec::lookup(vec![4, 4], 4).with_tile(TileConfig::chunk(4)))
            .unwrap();
        assert_eq!(b.lambda, 0.5);

        let mut store2 = CompressedStore::create(256, 2.0, 1, SharingMode::Global).unwrap();
        let b2 = store2
            .register_module(&ModuleSpec::lookup(vec![4, 4], 16).with_tile(TileConfig::chunk(4)))
            .unwrap();
        assert_eq!(b2.lambda, 0.5);
    }

    #[test]
    fn global_bindings_span_whole_store() {
        let mut store = CompressedStore::create(512, 1.0, 1, SharingMode::Global).unwrap();
        let b = store
            .register_module(&ModuleSpec::matmul(8, 8, 8).with_tile(TileConfig::tiles(4, 4, 4)))
            .unwrap();
        assert_eq!(
            b.segment,
            Segment {
                offset: 0,
                len: 512
            }
        );
    }

    #[test]
    fn local_batch_carves_disjoint_proportional_segments() {
        let mut store = CompressedStore::create(100, 1.0, 1, SharingMode::Local).unwrap();
        let specs = vec![
            ModuleSpec::lookup(vec![30], 8).with_tile(TileConfig::chunk(2)),
            ModuleSpec::lookup(vec![10], 8).with_tile(TileConfig::chunk(2)),
        ];
        let bindings = store.register_modules(&specs).unwrap();
        assert_eq!(bindings[0].segment, Segment { offset: 0, len: 75 });
        assert_eq!(
            bindings[1].segment,
            Segment {
                offset: 75,
                len: 25
            }
        );
    }

    #[test]
    fn local_mode_exhaustion_is_capacity_error() {
        let mut store = CompressedStore::create(64, 1.0, 1, SharingMode::Local).unwrap();
        store
            .register_module(
                &ModuleSpec::lookup(vec![16], 4)
                    .with_tile(TileConfig::chunk(2))
                    .with_fraction(0.9),
            )
            .unwrap();
        let err = store
            .register_module(
                &ModuleSpec::lookup(vec![16], 4)
                    .with_tile(TileConfig::chunk(2))
                    .with_fraction(0.5),
            )
            .unwrap_err();
        assert!(matches!(err, Error::Capacity(_)));
    }

    #[test]
    fn tile_bigger_than_segment_is_geometry_error() {
        let mut store = CompressedStore::create(32, 1.0, 1, SharingMode::Global).unwrap();
        let err = store
            .register_module(&ModuleSpec::matmul(64, 64, 64).with_tile(TileConfig::tiles(8, 8, 8)))
            .unwrap_err();
        assert!(matches!(err, Error::Geometry(_)));
    }

    #[test]
    fn binding_seeds_differ_between_modules() {
        let mut store = CompressedStore::create(256, 1.0, 5, SharingMode::Global).unwrap();
        let a = store
            .register_module(&ModuleSpec::lookup(vec![8], 8).with_tile(TileConfig::chunk(2)))
            .unwrap();
        let b = store
            .register_module(&ModuleSpec::lookup(vec![8], 8).with_tile(TileConfig::chunk(2)))
            .unwrap();
        assert_ne!(a.seeds.placement, b.seeds.placement);
        assert_ne!(a.seeds.sign, b.seeds.sign);
        assert_ne!(a.seeds.placement, a.seeds.sign);
    }

    #[test]
    fn local_bindings_touch_disjoint_slots() {
        // Exhaustive slot enumeration: every slot a local binding can ever
        // read lies inside its own segment.
        let mut store = CompressedStore::create(64, 1.0, 17, SharingMode::Local).unwrap();
        let specs = vec![
            ModuleSpec::lookup(vec![40], 8).with_tile(TileConfig::chunk(1)),
            ModuleSpec::lookup(vec![24], 8).with_tile(TileConfig::chunk(1)),
        ];
        let bindings = store.register_modules(&specs).unwrap();
        let mut touched: Vec<std::collections::HashSet<usize>> = Vec::new();
        for b in &bindings {
            let fam = b.placement_family();
            let mut slots = std::collections::HashSet::new();
            for chunk in 0..b.logical_len() as u64 {
                let off = b.segment.offset + fam.chunk_offset(chunk, b.segment.len, 1).unwrap();
                assert!(off >= b.segment.offset && off < b.segment.offset + b.segment.len);
                slots.insert(off);
            }
            touched.push(slots);
        }
        assert!(touched[0].is_disjoint(&touched[1]));
    }

    #[test]
    fn global_bindings_share_slots_when_oversubscribed() {
        // Σnᵢ > m forces at least one shared slot between two bindings.
        let mut store = CompressedStore::create(16, 1.0, 23, SharingMode::Global).unwrap();
        let spec = ModuleSpec::lookup(vec![24], 8).with_tile(TileConfig::chunk(1));
        let a = store.register_module(&spec).unwrap();
        let b = store.register_module(&spec).unwrap();
        let slots = |bind: &ModuleBinding| -> std::collections::HashSet<usize> {
            let fam = bind.placement_family();
            (0..bind.logical_len() as u64)
                .map(|c| fam.chunk_offset(c, bind.segment.len, 1).unwrap())
                .collect()
        };
        assert!(!slots(&a).is_disjoint(&slots(&b)));
    }

    #[test]
    fn expressivity_single_piece_is_equal() {
        let (g, l) = expressivity_log_count(64, &[10], &[64]);
        assert!((g - l).abs() < 1e-12);
    }

    #[test]
    fn expressivity_matches_hand_arithmetic() {
        // n = (2, 2), m = 4, segments (2, 2).
        let (g, l) = expressivity_log_count(4, &[2, 2], &[2, 2]);
        assert!((g - 4.0 * 4.0f64.ln()).abs() < 1e-12);
        assert!((l - 4.0 * 2.0f64.ln()).abs() < 1e-12);
        assert!(g > l);
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let store = CompressedStore::create(1000, 1.25, 77, SharingMode::Global).unwrap();
        let mut buf = Vec::new();
        store.save(&mut buf).unwrap();
        let loaded = CompressedStore::load(buf.as_slice()).unwrap();
        assert_eq!(loaded.len(), store.len());
        assert_eq!(loaded.init_scale(), store.init_scale());
        assert_eq!(loaded.master_seed(), store.master_seed());
        for (a, b) in store.values().iter().zip(loaded.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn snapshot_rejects_bad_magic_truncation_and_trailing() {
        let store = CompressedStore::create(10, 1.0, 1, SharingMode::Global).unwrap();
        let mut buf = Vec::new();
        store.save(&mut buf).unwrap();

        let mut bad = buf.clone();
        bad[5] = b'2'; // version bump
        assert!(matches!(
            CompressedStore::load(bad.as_slice()),
            Err(Error::Format(_))
        ));

        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(
            CompressedStore::load(truncated),
            Err(Error::Format(_))
        ));

        let mut trailing = buf.clone();
        trailing.push(0);
        assert!(matches!(
            CompressedStore::load(trailing.as_slice()),
            Err(Error::Format(_))
        ));
    }
}
