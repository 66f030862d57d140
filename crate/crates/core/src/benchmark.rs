//! Median-of-runs timing harness for the matmul kernels.
//!
//! Kernels run at f32 on a raw store buffer so cache effects dominate, with
//! warmup runs discarded and the median of the timed runs reported. The
//! `dense` kernel is an ordinary uncompressed matmul over a dense weight
//! matrix of the same shape, as context for the compressed kernels.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::hashing::{mix_seed, HashFamily, HashKind, Independence};
use crate::matmul::{hashednet_forward_kernel, roast_forward_block};
use crate::store::Segment;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    Dense,
    Hashednet,
    Roast,
}

impl KernelKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "dense" => Ok(Self::Dense),
            "hashednet" => Ok(Self::Hashednet),
            "roast" => Ok(Self::Roast),
            other => Err(Error::Config(format!("unknown kernel '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Dense => "dense",
            Self::Hashednet => "hashednet",
            Self::Roast => "roast",
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    /// Square weight matrix sides.
    pub dims: Vec<usize>,
    /// Compressed store sizes in elements (f32).
    pub store_elems: Vec<usize>,
    pub kernels: Vec<KernelKind>,
    /// Input batch rows.
    pub batch: usize,
    /// Timed runs per cell; the median is reported.
    pub runs: usize,
    /// Discarded warmup runs per cell.
    pub warmup: usize,
    pub tiles: (usize, usize, usize),
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            dims: vec![512, 1024, 2048],
            store_elems: vec![1 << 20],
            kernels: vec![KernelKind::Dense, KernelKind::Hashednet, KernelKind::Roast],
            batch: 64,
            runs: 9,
            warmup: 2,
            tiles: (16, 16, 64),
            seed: 42,
        }
    }
}

/// One benchmark grid cell. `store_bytes` is the grid's compressed-store
/// size; dense rows keep the column as their grid key.
#[derive(Clone, Debug)]
pub struct BenchRecord {
    pub kernel: KernelKind,
    pub dim: usize,
    pub store_bytes: usize,
    pub tile_z0: usize,
    pub tile_z1: usize,
    pub tile_z2: usize,
    pub median_ms: f64,
    pub runs: usize,
}

fn fill_f32<R: Rng>(rng: &mut R, buf: &mut [f32]) {
    for v in buf.iter_mut() {
        *v = rng.gen_range(-1.0f32..1.0);
    }
}

fn median_ms(mut times: Vec<f64>) -> f64 {
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times[times.len() / 2]
}

/// Runs the grid: every (dim × store × kernel) cell, warmups discarded,
/// median of the timed runs.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    if cfg.dims.is_empty() || cfg.store_elems.is_empty() || cfg.kernels.is_empty() {
        return Err(Error::Config(
            "benchmark needs at least one dim, store size and kernel".into(),
        ));
    }
    if cfg.batch == 0 || cfg.runs == 0 {
        return Err(Error::Config("batch and runs must be positive".into()));
    }
    let (z0, z1, z2) = cfg.tiles;
    let mut records = Vec::new();
    let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(cfg.seed, 0xbe7c));

    for &store_elems in &cfg.store_elems {
        if z1 * z2 > store_elems {
            return Err(Error::Geometry(format!(
                "tile {z1}×{z2} exceeds store of {store_elems} elements"
            )));
        }
        let mut mem = vec![0.0f32; store_elems];
        fill_f32(&mut rng, &mut mem);
        let seg = Segment {
            offset: 0,
            len: store_elems,
        };
        for &dim in &cfg.dims {
            let lambda = 1.0 / (dim as f64).sqrt();
            let mut x = vec![0.0f32; cfg.batch * dim];
            fill_f32(&mut rng, &mut x);
            let placement = HashFamily::new(
                HashKind::Tile2d,
                Independence::TwoWise,
                mix_seed(cfg.seed, dim as u64),
            );
            let sign = HashFamily::new(
                HashKind::Sign,
                Independence::FourWise,
                mix_seed(cfg.seed, dim as u64 + 1),
            );
            let mut out = vec![0.0f32; cfg.batch * dim];

            for &kernel in &cfg.kernels {
                let mut dense_w: Option<Array2<f32>> = None;
                let mut dense_x: Option<Array2<f32>> = None;
                if kernel == KernelKind::Dense {
                    let mut w = Array2::<f32>::zeros((dim, dim));
                    fill_f32(&mut rng, w.as_slice_mut().unwrap());
                    dense_w = Some(w);
                    dense_x = Some(
                        Array2::from_shape_vec((cfg.batch, dim), x.clone())
                            .expect("batch × dim input"),
                    );
                }
                let mut run_one = || match kernel {
                    KernelKind::Dense => {
                        let y = dense_x.as_ref().unwrap().dot(dense_w.as_ref().unwrap());
                        std::hint::black_box(y);
                    }
                    KernelKind::Hashednet => {
                        out.iter_mut().for_each(|v| *v = 0.0);
                        hashednet_forward_kernel(
                            &mem,
                            seg,
                            lambda,
                            &placement,
                            Some(&sign),
                            &x,
                            cfg.batch,
                            dim,
                            dim,
                            &mut out,
                        );
                        std::hint::black_box(&mut out);
                    }
                    KernelKind::Roast => {
                        out.iter_mut().for_each(|v| *v = 0.0);
                        roast_forward_block(
                            &mem,
                            seg,
                            lambda,
                            &placement,
                            Some(&sign),
                            &x,
                            dim,
                            dim,
                            (z0, z1, z2),
                            0..cfg.batch,
                            &mut out,
                        );
                        std::hint::black_box(&mut out);
                    }
                };
                for _ in 0..cfg.warmup {
                    run_one();
                }
                let mut times = Vec::with_capacity(cfg.runs);
                for _ in 0..cfg.runs {
                    let t0 = Instant::now();
                    run_one();
                    times.push(t0.elapsed().as_secs_f64() * 1e3);
                }
                records.push(BenchRecord {
                    kernel,
                    dim,
                    store_bytes: store_elems * std::mem::size_of::<f32>(),
                    tile_z0: z0,
                    tile_z1: z1,
                    tile_z2: z2,
                    median_ms: median_ms(times),
                    runs: cfg.runs,
                });
            }
        }
    }
    Ok(records)
}

/// Speedup of roast over hashednet per (dim, store) cell present in both.
pub fn roast_speedups(records: &[BenchRecord]) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for r in records.iter().filter(|r| r.kernel == KernelKind::Roast) {
        if let Some(h) = records.iter().find(|h| {
            h.kernel == KernelKind::Hashednet && h.dim == r.dim && h.store_bytes == r.store_bytes
        }) {
            out.push((r.dim, r.store_bytes, h.median_ms / r.median_ms));
        }
    }
    out
}

/// Largest data-cache size visible under sysfs, if any.
pub fn last_level_cache_bytes() -> Option<usize> {
    let base = std::path::Path::new("/sys/devices/system/cpu/cpu0/cache");
    let mut best = None;
    let entries = std::fs::read_dir(base).ok()?;
    for entry in entries.flatten() {
        let path = entry.path();
        let size = std::fs::read_to_string(path.join("size")).ok()?;
        let size = size.trim();
        let bytes = if let Some(k) = size.strip_suffix('K') {
            k.parse::<usize>().ok()? * 1024
        } else if let Some(m) = size.strip_suffix('M') {
            m.parse::<usize>().ok()? * 1024 * 1024
        } else {
            size.parse::<usize>().ok()?
        };
        best = Some(best.map_or(bytes, |b: usize| b.max(bytes)));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_produces_one_row_per_cell() {
        let cfg = BenchConfig {
            dims: vec![64, 96],
            store_elems: vec![4096, 8192],
            kernels: vec![KernelKind::Dense, KernelKind::Hashednet, KernelKind::Roast],
            batch: 8,
            runs: 2,
            warmup: 1,
            tiles: (8, 8, 8),
            seed: 1,
        };
        let records = run_benchmark(&cfg).unwrap();
        assert_eq!(records.len(), 2 * 2 * 3);
        assert!(records.iter().all(|r| r.median_ms >= 0.0));
    }

    #[test]
    fn dense_only_means_no_speedups() {
        let cfg = BenchConfig {
            dims: vec![64],
            store_elems: vec![4096],
            kernels: vec![KernelKind::Dense],
            batch: 4,
            runs: 1,
            warmup: 0,
            tiles: (8, 8, 8),
            seed: 2,
        };
        let records = run_benchmark(&cfg).unwrap();
        assert_eq!(records.len(), 1);
        assert!(roast_speedups(&records).is_empty());
    }

    #[test]
    fn kernel_names_round_trip() {
        for k in [KernelKind::Dense, KernelKind::Hashednet, KernelKind::Roast] {
            assert_eq!(KernelKind::parse(k.name()).unwrap(), k);
        }
        assert!(KernelKind::parse("cuda").is_err());
    }

    #[test]
    fn oversized_tile_is_geometry_error() {
        let cfg = BenchConfig {
            dims: vec![64],
            store_elems: vec![16],
            kernels: vec![KernelKind::Roast],
            batch: 4,
            runs: 1,
            warmup: 0,
            tiles: (8, 8, 8),
            seed: 3,
        };
        assert!(matches!(run_benchmark(&cfg), Err(Error::Geometry(_))));
    }
}
