//! Tiled matrix multiplication through the hash.
//!
//! The weight matrix is never materialized: the multiply walks `Z1 × Z2`
//! weight tiles, each fetched from the store at one hashed offset, so memory
//! access stays coalesced and one hash evaluation covers a whole tile:
//!
//! ```text
//! W[i, j] = λ · s(C1, C2) · M[h2(C1(i,j), C2(i,j)) + Z2·O1(i,j) + O2(i,j)]
//! ```
//!
//! `hashednet_mm_forward` is the scattered baseline: every element hashed
//! independently (tile size 1), which is what the tiled kernel is measured
//! against. Edge tiles are logically zero-padded; elements beyond the matrix
//! bounds contribute nothing and receive no gradient, while the hash stays
//! keyed on tile coordinates. λ is applied once per output tile after the
//! k-accumulation; the per-tile sign multiplies inside the k-loop.

use std::ops::Range;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use num_traits::Float;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hashing::HashFamily;
use crate::store::{BindingKind, CompressedStore, ModuleBinding, Segment, TileConfig};

/// Largest logical tensor [`materialize`] will build. Anything at or above
/// the cap is refused; production paths never need dense weights.
pub const DEFAULT_MATERIALIZE_CAP: usize = 1 << 24;

/// Scalar type the kernels run on. The store is f64; benchmarks may run the
/// same kernels at f32.
pub trait Element: Float + Send + Sync + std::ops::AddAssign + 'static {}
impl Element for f32 {}
impl Element for f64 {}

/// Tiling of one matmul binding: grid counts plus the batch tile `Z0`.
#[derive(Clone, Debug)]
pub struct MatmulPlan<'a> {
    pub binding: &'a ModuleBinding,
    pub h: usize,
    pub o: usize,
    pub z0: usize,
    pub z1: usize,
    pub z2: usize,
}

impl<'a> MatmulPlan<'a> {
    pub fn new(binding: &'a ModuleBinding) -> Result<Self> {
        let (z0, z1, z2) = match binding.tile {
            TileConfig::Tile { z0, z1, z2 } => (z0, z1, z2),
            TileConfig::Chunk { .. } => {
                return Err(Error::Config("matmul plan on a lookup binding".into()))
            }
        };
        Self::with_tiles(binding, z0, z1, z2)
    }

    /// Plan with overridden tile geometry (autotuning probes).
    pub fn with_tiles(binding: &'a ModuleBinding, z0: usize, z1: usize, z2: usize) -> Result<Self> {
        if binding.kind != BindingKind::Matmul || binding.logical_shape.len() != 2 {
            return Err(Error::Config(
                "matmul plan needs a 2D matmul binding".into(),
            ));
        }
        if z0 == 0 || z1 == 0 || z2 == 0 {
            return Err(Error::Config("tile sides must be positive".into()));
        }
        if z1 * z2 > binding.segment.len {
            return Err(Error::Geometry(format!(
                "tile {z1}×{z2} exceeds segment of {} slots",
                binding.segment.len
            )));
        }
        Ok(Self {
            binding,
            h: binding.logical_shape[0],
            o: binding.logical_shape[1],
            z0,
            z1,
            z2,
        })
    }

    pub fn tiles_k(&self) -> usize {
        self.h.div_ceil(self.z1)
    }

    pub fn tiles_j(&self) -> usize {
        self.o.div_ceil(self.z2)
    }

    fn validate_store(&self, store: &CompressedStore) -> Result<()> {
        let seg = self.binding.segment;
        if seg.offset + seg.len > store.len() {
            return Err(Error::Config(
                "binding segment exceeds store; binding not registered on this store".into(),
            ));
        }
        Ok(())
    }
}

/// X · W with W read tile-by-tile through the hash.
pub fn roast_mm_forward(
    store: &CompressedStore,
    plan: &MatmulPlan,
    x: &ArrayView2<f64>,
) -> Result<Array2<f64>> {
    plan.validate_store(store)?;
    let (rows, cols) = x.dim();
    if cols != plan.h {
        return Err(Error::Shape(format!(
            "input has {cols} columns but the weight matrix has {} rows",
            plan.h
        )));
    }
    let x_owned;
    let x_slice = match x.as_slice() {
        Some(s) => s,
        None => {
            x_owned = x.to_owned();
            x_owned.as_slice().expect("owned arrays are standard")
        }
    };
    let mut out = Array2::<f64>::zeros((rows, plan.o));
    let out_slice = out.as_slice_mut().expect("row-major output");
    let placement = plan.binding.placement_family();
    let sign = plan
        .binding
        .use_sign_hash
        .then(|| plan.binding.sign_family());

    let i_tiles = rows.div_ceil(plan.z0).max(1);
    let exec = Exec::with_threads(store.threads());
    let tile_ranges = exec.chunk_ranges(i_tiles);
    // Split the output at i-tile boundaries: workers own disjoint row blocks.
    let mut parts: Vec<(Range<usize>, &mut [f64])> = Vec::with_capacity(tile_ranges.len());
    let mut rest = out_slice;
    for tr in &tile_ranges {
        let row_lo = (tr.start * plan.z0).min(rows);
        let row_hi = (tr.end * plan.z0).min(rows);
        let (head, tail) = rest.split_at_mut((row_hi - row_lo) * plan.o);
        parts.push((row_lo..row_hi, head));
        rest = tail;
    }
    std::thread::scope(|scope| {
        for (row_range, part) in parts {
            let placement = &placement;
            let sign = sign.as_ref();
            scope.spawn(move || {
                roast_forward_block(
                    store.values(),
                    plan.binding.segment,
                    plan.binding.lambda,
                    placement,
                    sign,
                    x_slice,
                    plan.h,
                    plan.o,
                    (plan.z0, plan.z1, plan.z2),
                    row_range,
                    part,
                );
            });
        }
    });
    Ok(out)
}

/// Forward kernel over a block of input rows. `out_block` holds exactly the
/// rows in `row_range`; accumulation order over k-tiles is fixed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn roast_forward_block<T: Element>(
    mem: &[T],
    seg: Segment,
    lambda: f64,
    placement: &HashFamily,
    sign: Option<&HashFamily>,
    x: &[T],
    h: usize,
    o: usize,
    (z0, z1, z2): (usize, usize, usize),
    row_range: Range<usize>,
    out_block: &mut [T],
) {
    let lambda = T::from(lambda).unwrap();
    let tiles_k = h.div_ceil(z1);
    let tiles_j = o.div_ceil(z2);
    let tile_elems = z1 * z2;
    let mut acc = vec![T::zero(); z0 * z2];
    let block_lo = row_range.start;

    let mut i_lo = row_range.start;
    while i_lo < row_range.end {
        let i_lim = z0.min(row_range.end - i_lo);
        for jt in 0..tiles_j {
            let j_lo = jt * z2;
            let j_lim = z2.min(o - j_lo);
            acc[..i_lim * z2].iter_mut().for_each(|a| *a = T::zero());
            for kt in 0..tiles_k {
                let off = seg.offset
                    + placement
                        .tile_offset(kt as u64, jt as u64, seg.len, tile_elems)
                        .expect("validated geometry");
                let s = sign.map_or(1.0, |g| g.sign2(kt as u64, jt as u64));
                let s = T::from(s).unwrap();
                let k_lo = kt * z1;
                let k_lim = z1.min(h - k_lo);
                for ii in 0..i_lim {
                    let xrow = &x[(i_lo + ii) * h + k_lo..(i_lo + ii) * h + k_lo + k_lim];
                    let arow = &mut acc[ii * z2..ii * z2 + j_lim];
                    for (kk, &xk) in xrow.iter().enumerate() {
                        let xv = xk * s;
                        let mrow = &mem[off + kk * z2..off + kk * z2 + j_lim];
                        for (a, &m) in arow.iter_mut().zip(mrow) {
                            *a += xv * m;
                        }
                    }
                }
            }
            for ii in 0..i_lim {
                let dst = &mut out_block
                    [(i_lo - block_lo + ii) * o + j_lo..(i_lo - block_lo + ii) * o + j_lo + j_lim];
                let src = &acc[ii * z2..ii * z2 + j_lim];
                for (d, &a) in dst.iter_mut().zip(src) {
                    *d = lambda * a;
                }
            }
        }
        i_lo += i_lim;
    }
}

/// X · W with every weight element hashed independently (tile size 1): the
/// scattered-access baseline sharing the roast mapping at Z1 = Z2 = 1.
pub fn hashednet_mm_forward(
    store: &CompressedStore,
    plan: &MatmulPlan,
    x: &ArrayView2<f64>,
) -> Result<Array2<f64>> {
    plan.validate_store(store)?;
    let (rows, cols) = x.dim();
    if cols != plan.h {
        return Err(Error::Shape(format!(
            "input has {cols} columns but the weight matrix has {} rows",
            plan.h
        )));
    }
    let x_owned;
    let x_slice = match x.as_slice() {
        Some(s) => s,
        None => {
            x_owned = x.to_owned();
            x_owned.as_slice().expect("owned arrays are standard")
        }
    };
    let mut out = Array2::<f64>::zeros((rows, plan.o));
    hashednet_forward_kernel(
        store.values(),
        plan.binding.segment,
        plan.binding.lambda,
        &plan.binding.placement_family(),
        plan.binding
            .use_sign_hash
            .then(|| plan.binding.sign_family())
            .as_ref(),
        x_slice,
        rows,
        plan.h,
        plan.o,
        out.as_slice_mut().expect("row-major output"),
    );
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn hashednet_forward_kernel<T: Element>(
    mem: &[T],
    seg: Segment,
    lambda: f64,
    placement: &HashFamily,
    sign: Option<&HashFamily>,
    x: &[T],
    rows: usize,
    h: usize,
    o: usize,
    out: &mut [T],
) {
    let lambda = T::from(lambda).unwrap();
    let mut wrow = vec![T::zero(); o];
    for k in 0..h {
        for (j, w) in wrow.iter_mut().enumerate() {
            let off = seg.offset
                + placement
                    .tile_offset(k as u64, j as u64, seg.len, 1)
                    .expect("validated geometry");
            let s = sign.map_or(1.0, |g| g.sign2(k as u64, j as u64));
            *w = T::from(s).unwrap() * mem[off];
        }
        for i in 0..rows {
            let xv = x[i * h + k];
            let orow = &mut out[i * o..i * o + o];
            for (dst, &w) in orow.iter_mut().zip(&wrow) {
                *dst += xv * w;
            }
        }
    }
    out.iter_mut().for_each(|v| *v = lambda * *v);
}

/// Backward pass: returns grad_X = grad_Y · Wᵀ and accumulates weight
/// gradients into the store, tile by tile, never materializing W. One hash
/// evaluation per tile, mirroring forward; peak extra memory is O(tile) plus,
/// in parallel mode, one dense length-m partial buffer per worker.
pub fn roast_mm_backward(
    store: &mut CompressedStore,
    plan: &MatmulPlan,
    x: &ArrayView2<f64>,
    grad_y: &ArrayView2<f64>,
) -> Result<Array2<f64>> {
    plan.validate_store(store)?;
    let (rows, cols) = x.dim();
    if cols != plan.h {
        return Err(Error::Shape(format!(
            "input has {cols} columns but the weight matrix has {} rows",
            plan.h
        )));
    }
    if grad_y.dim() != (rows, plan.o) {
        return Err(Error::Shape(format!(
            "grad_Y {:?} does not match output shape ({rows}, {})",
            grad_y.dim(),
            plan.o
        )));
    }
    let x_owned;
    let x_slice = match x.as_slice() {
        Some(s) => s,
        None => {
            x_owned = x.to_owned();
            x_owned.as_slice().expect("owned arrays are standard")
        }
    };
    let gy_owned;
    let gy_slice = match grad_y.as_slice() {
        Some(s) => s,
        None => {
            gy_owned = grad_y.to_owned();
            gy_owned.as_slice().expect("owned arrays are standard")
        }
    };

    let placement = plan.binding.placement_family();
    let sign = plan
        .binding
        .use_sign_hash
        .then(|| plan.binding.sign_family());

    // grad_X: parallel over i-tiles, disjoint output rows.
    let mut grad_x = Array2::<f64>::zeros((rows, plan.h));
    {
        let values: &[f64] = store.values();
        let gx_slice = grad_x.as_slice_mut().expect("row-major output");
        let i_tiles = rows.div_ceil(plan.z0).max(1);
        let exec = Exec::with_threads(store.threads());
        let tile_ranges = exec.chunk_ranges(i_tiles);
        let mut parts: Vec<(Range<usize>, &mut [f64])> = Vec::with_capacity(tile_ranges.len());
        let mut rest = gx_slice;
        for tr in &tile_ranges {
            let row_lo = (tr.start * plan.z0).min(rows);
            let row_hi = (tr.end * plan.z0).min(rows);
            let (head, tail) = rest.split_at_mut((row_hi - row_lo) * plan.h);
            parts.push((row_lo..row_hi, head));
            rest = tail;
        }
        std::thread::scope(|scope| {
            for (row_range, part) in parts {
                let placement = &placement;
                let sign = sign.as_ref();
                scope.spawn(move || {
                    grad_input_block(values, plan, placement, sign, gy_slice, row_range, part);
                });
            }
        });
    }

    // Weight gradients: sequential accumulation straight into the store, or
    // per-worker partials over k-tile ranges merged in worker order.
    let threads = store.threads();
    let tiles_k = plan.tiles_k();
    if threads <= 1 || tiles_k < 2 {
        scatter_weight_grads(
            plan,
            &placement,
            sign.as_ref(),
            x_slice,
            gy_slice,
            rows,
            0..tiles_k,
            store.grads_mut(),
        );
    } else {
        let m = store.len();
        let exec = Exec::with_threads(threads);
        let partials = exec.map_chunks(tiles_k, |kt_range| {
            let mut partial = vec![0.0f64; m];
            scatter_weight_grads(
                plan,
                &placement,
                sign.as_ref(),
                x_slice,
                gy_slice,
                rows,
                kt_range,
                &mut partial,
            );
            partial
        });
        let grads = store.grads_mut();
        for partial in partials {
            for (g, p) in grads.iter_mut().zip(partial) {
                *g += p;
            }
        }
    }
    Ok(grad_x)
}

/// grad_X rows for one block: grad_X = grad_Y · Wᵀ with tiles recovered
/// through the hash, λ applied once per (i, k) block after the j-sum.
fn grad_input_block(
    mem: &[f64],
    plan: &MatmulPlan,
    placement: &HashFamily,
    sign: Option<&HashFamily>,
    gy: &[f64],
    row_range: Range<usize>,
    gx_block: &mut [f64],
) {
    let seg = plan.binding.segment;
    let lambda = plan.binding.lambda;
    let (z0, z1, z2) = (plan.z0, plan.z1, plan.z2);
    let (h, o) = (plan.h, plan.o);
    let tile_elems = z1 * z2;
    let tiles_k = plan.tiles_k();
    let tiles_j = plan.tiles_j();
    let block_lo = row_range.start;
    let mut acc = vec![0.0f64; z0 * z1];

    let mut i_lo = row_range.start;
    while i_lo < row_range.end {
        let i_lim = z0.min(row_range.end - i_lo);
        for kt in 0..tiles_k {
            let k_lo = kt * z1;
            let k_lim = z1.min(h - k_lo);
            acc[..i_lim * z1].iter_mut().for_each(|a| *a = 0.0);
            for jt in 0..tiles_j {
                let off = seg.offset
                    + placement
                        .tile_offset(kt as u64, jt as u64, seg.len, tile_elems)
                        .expect("validated geometry");
                let s = sign.map_or(1.0, |g| g.sign2(kt as u64, jt as u64));
                let j_lo = jt * z2;
                let j_lim = z2.min(o - j_lo);
                for ii in 0..i_lim {
                    let gyrow = &gy[(i_lo + ii) * o + j_lo..(i_lo + ii) * o + j_lo + j_lim];
                    let arow = &mut acc[ii * z1..ii * z1 + k_lim];
                    for (kk, a) in arow.iter_mut().enumerate() {
                        let mrow = &mem[off + kk * z2..off + kk * z2 + j_lim];
                        let mut dot = 0.0;
                        for (&g, &m) in gyrow.iter().zip(mrow) {
                            dot += g * (s * m);
                        }
                        *a += dot;
                    }
                }
            }
            for ii in 0..i_lim {
                let dst = &mut gx_block
                    [(i_lo - block_lo + ii) * h + k_lo..(i_lo - block_lo + ii) * h + k_lo + k_lim];
                let src = &acc[ii * z1..ii * z1 + k_lim];
                for (d, &a) in dst.iter_mut().zip(src) {
                    *d = lambda * a;
                }
            }
        }
        i_lo += i_lim;
    }
}

/// Accumulates λ·s·(Xᵀ·grad_Y) per weight tile into `grads`, one hashed
/// offset per tile; out-of-range (padded) tile positions are skipped.
#[allow(clippy::too_many_arguments)]
fn scatter_weight_grads(
    plan: &MatmulPlan,
    placement: &HashFamily,
    sign: Option<&HashFamily>,
    x: &[f64],
    gy: &[f64],
    rows: usize,
    kt_range: Range<usize>,
    grads: &mut [f64],
) {
    let seg = plan.binding.segment;
    let lambda = plan.binding.lambda;
    let (z1, z2) = (plan.z1, plan.z2);
    let (h, o) = (plan.h, plan.o);
    let tile_elems = z1 * z2;
    let tiles_j = plan.tiles_j();
    let mut wacc = vec![0.0f64; z1 * z2];

    for kt in kt_range {
        let k_lo = kt * z1;
        let k_lim = z1.min(h - k_lo);
        for jt in 0..tiles_j {
            let j_lo = jt * z2;
            let j_lim = z2.min(o - j_lo);
            wacc[..z1 * z2].iter_mut().for_each(|a| *a = 0.0);
            // Xᵀ·grad_Y restricted to this tile, accumulated over the batch.
            for i in 0..rows {
                let xrow = &x[i * h + k_lo..i * h + k_lo + k_lim];
                let gyrow = &gy[i * o + j_lo..i * o + j_lo + j_lim];
                for (kk, &xv) in xrow.iter().enumerate() {
                    let arow = &mut wacc[kk * z2..kk * z2 + j_lim];
                    for (a, &g) in arow.iter_mut().zip(gyrow) {
                        *a += xv * g;
                    }
                }
            }
            let off = seg.offset
                + placement
                    .tile_offset(kt as u64, jt as u64, seg.len, tile_elems)
                    .expect("validated geometry");
            let s = sign.map_or(1.0, |g| g.sign2(kt as u64, jt as u64));
            let scale = lambda * s;
            for kk in 0..k_lim {
                let dst = &mut grads[off + kk * z2..off + kk * z2 + j_lim];
                let src = &wacc[kk * z2..kk * z2 + j_lim];
                for (d, &a) in dst.iter_mut().zip(src) {
                    *d += scale * a;
                }
            }
        }
    }
}

/// Dense weights recovered per the binding's mapping. Oracle and export
/// support only; refuses tensors at or above `cap`.
pub fn materialize_with_cap(
    store: &CompressedStore,
    binding: &ModuleBinding,
    cap: usize,
) -> Result<Array2<f64>> {
    match binding.kind {
        BindingKind::Matmul => {
            let (z1, z2) = match binding.tile {
                TileConfig::Tile { z1, z2, .. } => (z1, z2),
                TileConfig::Chunk { .. } => unreachable!("validated kind"),
            };
            materialize_matmul(store, binding, z1, z2, cap)
        }
        BindingKind::Lookup => {
            if binding.logical_len() >= cap {
                return Err(Error::Refusal(format!(
                    "materializing {} elements exceeds the safety cap of {cap}",
                    binding.logical_len()
                )));
            }
            let indices: Vec<usize> = (0..binding.rows()).collect();
            let req = crate::lookup::LookupRequest::new(binding, &indices);
            crate::lookup::lookup_forward(store, &req)
        }
    }
}

/// Dense weights under a plan's tile geometry. With a Z1 = Z2 = 1 plan this
/// is the element-hashed map that `hashednet_mm_forward` computes against.
pub fn materialize_plan_with_cap(
    store: &CompressedStore,
    plan: &MatmulPlan,
    cap: usize,
) -> Result<Array2<f64>> {
    materialize_matmul(store, plan.binding, plan.z1, plan.z2, cap)
}

fn materialize_matmul(
    store: &CompressedStore,
    binding: &ModuleBinding,
    z1: usize,
    z2: usize,
    cap: usize,
) -> Result<Array2<f64>> {
    if binding.logical_len() >= cap {
        return Err(Error::Refusal(format!(
            "materializing {} elements exceeds the safety cap of {cap}",
            binding.logical_len()
        )));
    }
    if binding.segment.offset + binding.segment.len > store.len() {
        return Err(Error::Config(
            "binding segment exceeds store; binding not registered on this store".into(),
        ));
    }
    let (h, o) = (binding.logical_shape[0], binding.logical_shape[1]);
    let seg = binding.segment;
    let placement = binding.placement_family();
    let sign = binding.use_sign_hash.then(|| binding.sign_family());
    let tile_elems = z1 * z2;
    let mut w = Array2::<f64>::zeros((h, o));
    for i in 0..h {
        let c1 = (i / z1) as u64;
        let o1 = i % z1;
        for j in 0..o {
            let c2 = (j / z2) as u64;
            let o2 = j % z2;
            let off = seg.offset
                + placement
                    .tile_offset(c1, c2, seg.len, tile_elems)
                    .expect("validated geometry");
            let s = sign.as_ref().map_or(1.0, |g| g.sign2(c1, c2));
            w[[i, j]] = binding.lambda * s * store.values()[off + z2 * o1 + o2];
        }
    }
    Ok(w)
}

/// [`materialize_with_cap`] at the default cap.
pub fn materialize(store: &CompressedStore, binding: &ModuleBinding) -> Result<Array2<f64>> {
    materialize_with_cap(store, binding, DEFAULT_MATERIALIZE_CAP)
}

/// The element-hashed (tile 1×1) weights a binding recovers under the
/// scattered baseline, at the default cap.
pub fn materialize_hashednet(
    store: &CompressedStore,
    binding: &ModuleBinding,
) -> Result<Array2<f64>> {
    materialize_matmul(store, binding, 1, 1, DEFAULT_MATERIALIZE_CAP)
}

/// Autotuning strategy: time the forward alone (inference) or forward plus
/// backward (training).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TuneStrategy {
    Inference,
    Training,
}

/// Default candidate grid Z0, Z1, Z2 ∈ {8, 16, 32, 64}, filtered to tiles
/// that fit the segment.
pub fn default_tile_candidates(segment_len: usize) -> Vec<(usize, usize, usize)> {
    let sides = [8usize, 16, 32, 64];
    let mut out = Vec::new();
    for &z0 in &sides {
        for &z1 in &sides {
            for &z2 in &sides {
                if z1 * z2 <= segment_len {
                    out.push((z0, z1, z2));
                }
            }
        }
    }
    out
}

/// Picks the tile geometry minimizing median wall time over `runs` timed
/// executions (one untimed warmup); ties break toward the smaller Z1·Z2
/// footprint, then smaller Z0.
pub fn autotune_tiles(
    store: &mut CompressedStore,
    binding: &ModuleBinding,
    x: &ArrayView2<f64>,
    candidates: &[(usize, usize, usize)],
    strategy: TuneStrategy,
    runs: usize,
) -> Result<TileConfig> {
    if candidates.is_empty() {
        return Err(Error::Config("empty autotune candidate set".into()));
    }
    let runs = runs.max(1);
    let mut measured = Vec::new();
    for &(z0, z1, z2) in candidates {
        let plan = match MatmulPlan::with_tiles(binding, z0, z1, z2) {
            Ok(p) => p,
            Err(Error::Geometry(_)) => continue,
            Err(e) => return Err(e),
        };
        let mut times = Vec::with_capacity(runs);
        // Warmup run, discarded.
        run_once(store, &plan, x, strategy)?;
        for _ in 0..runs {
            let t0 = Instant::now();
            run_once(store, &plan, x, strategy)?;
            times.push(t0.elapsed().as_nanos());
        }
        measured.push(((z0, z1, z2), median_u128(&mut times)));
    }
    if strategy == TuneStrategy::Training {
        store.zero_grads();
    }
    let best = select_candidate(&measured)
        .ok_or_else(|| Error::Config("no autotune candidate fits the segment".into()))?;
    Ok(TileConfig::tiles(best.0, best.1, best.2))
}

fn run_once(
    store: &mut CompressedStore,
    plan: &MatmulPlan,
    x: &ArrayView2<f64>,
    strategy: TuneStrategy,
) -> Result<()> {
    match strategy {
        TuneStrategy::Inference => {
            std::hint::black_box(roast_mm_forward(store, plan, x)?);
        }
        TuneStrategy::Training => {
            let y = roast_mm_forward(store, plan, x)?;
            std::hint::black_box(roast_mm_backward(store, plan, x, &y.view())?);
        }
    }
    Ok(())
}

fn median_u128(times: &mut [u128]) -> u128 {
    times.sort_unstable();
    times[times.len() / 2]
}

fn select_candidate(measured: &[((usize, usize, usize), u128)]) -> Option<(usize, usize, usize)> {
    measured
        .iter()
        .min_by_key(|&&((z0, z1, z2), t)| (t, z1 * z2, z0))
        .map(|&(c, _)| c)
}
