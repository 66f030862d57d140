//! The lookup operation: chunked recovery of logical rows from the store and
//! its scatter-accumulate backward.
//!
//! Rows are recovered row-major. Logical rows are padded to the next multiple
//! of the chunk length so chunks never straddle a row boundary; padding
//! elements are never read and never receive gradient. Chunk ids are global
//! across the binding, numbering chunks of the padded flattened tensor, and
//! the sign hash is keyed on the chunk id.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::store::{BindingKind, CompressedStore, ModuleBinding, TileConfig};

/// A batched row-recovery request against one lookup binding.
#[derive(Clone, Debug)]
pub struct LookupRequest<'a> {
    pub binding: &'a ModuleBinding,
    /// Logical row ids; duplicates are allowed and accumulate in backward.
    pub indices: &'a [usize],
    pub row_len: usize,
}

impl<'a> LookupRequest<'a> {
    pub fn new(binding: &'a ModuleBinding, indices: &'a [usize]) -> Self {
        Self {
            binding,
            indices,
            row_len: binding.row_len(),
        }
    }

    fn chunk_len(&self) -> usize {
        match self.binding.tile {
            TileConfig::Chunk { z } => z,
            TileConfig::Tile { .. } => unreachable!("validated as lookup"),
        }
    }

    fn padded_row_len(&self) -> usize {
        let z = self.chunk_len();
        self.row_len.div_ceil(z) * z
    }

    fn validate(&self, store: &CompressedStore) -> Result<()> {
        if self.binding.kind != BindingKind::Lookup {
            return Err(Error::Config("lookup on a non-lookup binding".into()));
        }
        if self.row_len != self.binding.row_len() {
            return Err(Error::Shape(format!(
                "row_len {} does not match binding trailing dimension {}",
                self.row_len,
                self.binding.row_len()
            )));
        }
        let seg = self.binding.segment;
        if seg.offset + seg.len > store.len() {
            return Err(Error::Config(
                "binding segment exceeds store; binding not registered on this store".into(),
            ));
        }
        let rows = self.binding.rows();
        if let Some(&bad) = self.indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Bounds(format!(
                "row index {bad} out of range for {rows} logical rows"
            )));
        }
        Ok(())
    }
}

/// Recovers the requested rows as a `(len(indices), row_len)` matrix.
pub fn lookup_forward(store: &CompressedStore, req: &LookupRequest) -> Result<Array2<f64>> {
    req.validate(store)?;
    let rows = req.indices.len();
    let row_len = req.row_len;
    let mut out = Array2::<f64>::zeros((rows, row_len));
    if rows == 0 {
        return Ok(out);
    }
    let exec = Exec::with_threads(store.threads());
    let ranges = exec.chunk_ranges(rows);
    let out_slice = out.as_slice_mut().expect("row-major output");
    // Workers fill disjoint row ranges of the output.
    let mut parts: Vec<&mut [f64]> = Vec::with_capacity(ranges.len());
    let mut rest = out_slice;
    for r in &ranges {
        let (head, tail) = rest.split_at_mut((r.end - r.start) * row_len);
        parts.push(head);
        rest = tail;
    }
    std::thread::scope(|scope| {
        for (range, part) in ranges.iter().cloned().zip(parts) {
            scope.spawn(move || recover_rows(store, req, &req.indices[range], part));
        }
    });
    Ok(out)
}

fn recover_rows(store: &CompressedStore, req: &LookupRequest, indices: &[usize], out: &mut [f64]) {
    let z = req.chunk_len();
    let padded = req.padded_row_len();
    let seg = req.binding.segment;
    let lambda = req.binding.lambda;
    let placement = req.binding.placement_family();
    let sign = req.binding.use_sign_hash.then(|| req.binding.sign_family());
    let values = store.values();

    for (r, &idx) in indices.iter().enumerate() {
        let row_out = &mut out[r * req.row_len..(r + 1) * req.row_len];
        let base = idx * padded;
        for (c, chunk_out) in row_out.chunks_mut(z).enumerate() {
            let chunk_id = (base / z + c) as u64;
            let off = seg.offset
                + placement
                    .chunk_offset(chunk_id, seg.len, z)
                    .expect("validated geometry");
            let scale = lambda * sign.as_ref().map_or(1.0, |g| g.sign(chunk_id));
            for (o, dst) in chunk_out.iter_mut().enumerate() {
                *dst = scale * values[off + o];
            }
        }
    }
}

/// Accumulates `λ · s · grad_out` into the gradient slot each recovered
/// element came from. Repeated indices accumulate additively. The backward
/// never reads or touches `values`.
pub fn lookup_backward(
    store: &mut CompressedStore,
    req: &LookupRequest,
    grad_out: &ArrayView2<f64>,
) -> Result<()> {
    req.validate(store)?;
    if grad_out.dim() != (req.indices.len(), req.row_len) {
        return Err(Error::Shape(format!(
            "grad_out {:?} does not match forward output ({}, {})",
            grad_out.dim(),
            req.indices.len(),
            req.row_len
        )));
    }
    let rows = req.indices.len();
    if rows == 0 {
        return Ok(());
    }
    let grad_owned;
    let grad_slice = match grad_out.as_slice() {
        Some(s) => s,
        None => {
            grad_owned = grad_out.to_owned();
            grad_owned.as_slice().expect("owned arrays are standard")
        }
    };
    let threads = store.threads();
    let m = store.len();

    if threads <= 1 || rows < 2 {
        scatter_rows(req, req.indices, grad_slice, store.grads_mut());
        return Ok(());
    }

    // Per-worker dense partial buffers merged in worker order: run-to-run
    // deterministic for a fixed thread count, at workers·m extra memory.
    let exec = Exec::with_threads(threads);
    let partials = exec.map_chunks(rows, |range| {
        let mut partial = vec![0.0f64; m];
        scatter_rows(
            req,
            &req.indices[range.clone()],
            &grad_slice[range.start * req.row_len..range.end * req.row_len],
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
    Ok(())
}

fn scatter_rows(req: &LookupRequest, indices: &[usize], grad: &[f64], grads: &mut [f64]) {
    let z = req.chunk_len();
    let padded = req.padded_row_len();
    let seg = req.binding.segment;
    let lambda = req.binding.lambda;
    let placement = req.binding.placement_family();
    let sign = req.binding.use_sign_hash.then(|| req.binding.sign_family());

    for (r, &idx) in indices.iter().enumerate() {
        let row_grad = &grad[r * req.row_len..(r + 1) * req.row_len];
        let base = idx * padded;
        for (c, chunk_grad) in row_grad.chunks(z).enumerate() {
            let chunk_id = (base / z + c) as u64;
            let off = seg.offset
                + placement
                    .chunk_offset(chunk_id, seg.len, z)
                    .expect("validated geometry");
            let scale = lambda * sign.as_ref().map_or(1.0, |g| g.sign(chunk_id));
            for (o, &g) in chunk_grad.iter().enumerate() {
                grads[off + o] += scale * g;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{ModuleSpec, SharingMode};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};

    fn store_with_lookup(
        m: usize,
        shape: Vec<usize>,
        z: usize,
        sign: bool,
    ) -> (CompressedStore, ModuleBinding) {
        let mut store = CompressedStore::create(m, 1.0, 42, SharingMode::Global).unwrap();
        let binding = store
            .register_module(
                &ModuleSpec::lookup(shape, 4)
                    .with_tile(TileConfig::chunk(z))
                    .with_sign_hash(sign),
            )
            .unwrap();
        (store, binding)
    }

    #[test]
    fn whole_store_chunk_recovers_scaled_values() {
        // m == row_len == Z: a single chunk whose only legal offset is 0.
        let (store, binding) = store_with_lookup(16, vec![1, 16], 16, true);
        let req = LookupRequest::new(&binding, &[0]);
        let out = lookup_forward(&store, &req).unwrap();
        let s = binding.sign_family().sign(0);
        for (i, &v) in store.values().iter().enumerate() {
            assert_eq!(out[[0, i]], binding.lambda * s * v);
        }
    }

    #[test]
    fn zero_store_gives_zero_output() {
        let (mut store, binding) = store_with_lookup(256, vec![8, 16], 4, true);
        store.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let req = LookupRequest::new(&binding, &[0, 3, 7, 3]);
        let out = lookup_forward(&store, &req).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_scalar_reference() {
        // Element-by-element recovery through the same mapping formula,
        // assembled independently of the chunked implementation.
        let (store, binding) = store_with_lookup(256, vec![10, 64], 8, true);
        let indices = [2usize, 9, 0, 2];
        let req = LookupRequest::new(&binding, &indices);
        let out = lookup_forward(&store, &req).unwrap();

        let z = 8usize;
        let padded = 64usize; // already a multiple of z
        let placement = binding.placement_family();
        let sign = binding.sign_family();
        for (r, &idx) in indices.iter().enumerate() {
            for i in 0..64 {
                let e = idx * padded + i;
                let chunk = (e / z) as u64;
                let off = placement.chunk_offset(chunk, 256, z).unwrap();
                let want = binding.lambda * sign.sign(chunk) * store.values()[off + e % z];
                assert_eq!(out[[r, i]], want, "row {r} col {i}");
            }
        }
    }

    #[test]
    fn unpadded_row_len_never_straddles() {
        // row_len 10 with Z=4 pads rows to 12; recovery must still be exact
        // per the scalar formula and offsets must stay in range.
        let (store, binding) = store_with_lookup(128, vec![6, 10], 4, true);
        let indices = [5usize, 1];
        let req = LookupRequest::new(&binding, &indices);
        let out = lookup_forward(&store, &req).unwrap();
        let placement = binding.placement_family();
        let sign = binding.sign_family();
        for (r, &idx) in indices.iter().enumerate() {
            for i in 0..10 {
                let e = idx * 12 + i;
                let chunk = (e / 4) as u64;
                let off = placement.chunk_offset(chunk, 128, 4).unwrap();
                let want = binding.lambda * sign.sign(chunk) * store.values()[off + e % 4];
                assert_eq!(out[[r, i]], want);
            }
        }
    }

    #[test]
    fn out_of_range_index_is_bounds_error() {
        let (store, binding) = store_with_lookup(128, vec![4, 8], 4, false);
        let req = LookupRequest::new(&binding, &[4]);
        assert!(matches!(
            lookup_forward(&store, &req),
            Err(Error::Bounds(_))
        ));
    }

    #[test]
    fn backward_shape_mismatch_is_shape_error() {
        let (mut store, binding) = store_with_lookup(128, vec![4, 8], 4, false);
        let req = LookupRequest::new(&binding, &[0, 1]);
        let bad = Array2::<f64>::zeros((2, 7));
        assert!(matches!(
            lookup_backward(&mut store, &req, &bad.view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_grad_leaves_grads_untouched() {
        let (mut store, binding) = store_with_lookup(64, vec![4, 1], 1, true);
        let req = LookupRequest::new(&binding, &[2]);
        let g = Array2::<f64>::zeros((1, 1));
        lookup_backward(&mut store, &req, &g.view()).unwrap();
        assert!(store.grads().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn colliding_unit_gradients_sum_exactly() {
        // Two logical elements on one slot, grad 1.0 each, λ = 0.5, no sign:
        // the slot accumulates exactly 1.0.
        let mut store = CompressedStore::create(64, 1.0, 7, SharingMode::Global).unwrap();
        let binding = store
            .register_module(
                &ModuleSpec::lookup(vec![8, 1], 4)
                    .with_tile(TileConfig::chunk(1))
                    .with_sign_hash(false),
            )
            .unwrap();
        assert_eq!(binding.lambda, 0.5);
        // The same logical element twice is the guaranteed collision.
        let req = LookupRequest::new(&binding, &[3, 3]);
        let ones = Array2::<f64>::ones((2, 1));
        lookup_backward(&mut store, &req, &ones.view()).unwrap();
        let slot = binding.placement_family().chunk_offset(3, 64, 1).unwrap();
        assert_eq!(store.grads()[slot], 1.0);
    }

    #[test]
    fn duplicate_rows_accumulate() {
        let (mut store, binding) = store_with_lookup(64, vec![4, 4], 4, false);
        let req_once = LookupRequest::new(&binding, &[1]);
        let ones = Array2::<f64>::ones((1, 4));
        lookup_backward(&mut store, &req_once, &ones.view()).unwrap();
        let single = store.grads().to_vec();
        store.zero_grads();
        let req_twice = LookupRequest::new(&binding, &[1, 1]);
        let ones2 = Array2::<f64>::ones((2, 4));
        lookup_backward(&mut store, &req_twice, &ones2.view()).unwrap();
        for (a, b) in single.iter().zip(store.grads()) {
            assert!((2.0 * a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_is_linear_in_values() {
        let (mut store, binding) = store_with_lookup(128, vec![6, 12], 4, true);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let v1: Vec<f64> = (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v2: Vec<f64> = (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (alpha, beta) = (0.7, -1.3);
        let indices = [0usize, 5, 3];
        let req = LookupRequest::new(&binding, &indices);

        store.values_mut().copy_from_slice(&v1);
        let out1 = lookup_forward(&store, &req).unwrap();
        store.values_mut().copy_from_slice(&v2);
        let out2 = lookup_forward(&store, &req).unwrap();
        let combo: Vec<f64> = v1
            .iter()
            .zip(&v2)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        store.values_mut().copy_from_slice(&combo);
        let out_combo = lookup_forward(&store, &req).unwrap();

        let expect = &out1 * alpha + &out2 * beta;
        for (a, b) in out_combo.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_identity() {
        // <forward(v), G> == <v, backward(G)>: the backward is the exact
        // transpose of the forward linear map.
        let (mut store, binding) = store_with_lookup(200, vec![7, 10], 4, true);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let indices = [0usize, 6, 6, 2, 4];
        let req = LookupRequest::new(&binding, &indices);
        let g = Array2::from_shape_fn((5, 10), |_| rng.gen_range(-1.0..1.0));

        let fwd = lookup_forward(&store, &req).unwrap();
        let lhs: f64 = fwd.iter().zip(g.iter()).map(|(a, b)| a * b).sum();

        store.zero_grads();
        lookup_backward(&mut store, &req, &g.view()).unwrap();
        let rhs: f64 = store
            .values()
            .iter()
            .zip(store.grads())
            .map(|(v, gr)| v * gr)
            .sum();
        let scale = lhs.abs().max(rhs.abs()).max(1e-300);
        assert!(
            ((lhs - rhs) / scale).abs() < 1e-10,
            "adjoint mismatch {lhs} vs {rhs}"
        );
    }

    #[test]
    fn finite_difference_gradient() {
        // Scalar loss L = Σ c ⊙ lookup_forward(v): central differences on the
        // store values with step 1e-5 agree to 1e-6 relative.
        let (mut store, binding) = store_with_lookup(96, vec![5, 8], 4, true);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let indices = [1usize, 4, 1];
        let req = LookupRequest::new(&binding, &indices);
        let coeff = Array2::from_shape_fn((3, 8), |_| rng.gen_range(-1.0..1.0));

        store.zero_grads();
        lookup_backward(&mut store, &req, &coeff.view()).unwrap();
        let analytic = store.grads().to_vec();

        let step = 1e-5;
        for slot in 0..store.len() {
            let orig = store.values()[slot];
            store.values_mut()[slot] = orig + step;
            let plus: f64 = lookup_forward(&store, &req)
                .unwrap()
                .iter()
                .zip(coeff.iter())
                .map(|(a, b)| a * b)
                .sum();
            store.values_mut()[slot] = orig - step;
            let minus: f64 = lookup_forward(&store, &req)
                .unwrap()
                .iter()
                .zip(coeff.iter())
                .map(|(a, b)| a * b)
                .sum();
            store.values_mut()[slot] = orig;
            let fd = (plus - minus) / (2.0 * step);
            let denom = fd.abs().max(analytic[slot].abs()).max(1e-9);
            assert!(
                ((fd - analytic[slot]) / denom).abs() < 1e-6,
                "slot {slot}: fd {fd} analytic {}",
                analytic[slot]
            );
        }
    }

    #[test]
    fn identical_inputs_are_bitwise_deterministic() {
        let (store, binding) = store_with_lookup(256, vec![9, 24], 8, true);
        let indices = [3usize, 8, 0];
        let req = LookupRequest::new(&binding, &indices);
        let a = lookup_forward(&store, &req).unwrap();
        let b = lookup_forward(&store, &req).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn parallel_backward_matches_sequential_total() {
        let (mut store, binding) = store_with_lookup(128, vec![16, 8], 4, true);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let indices: Vec<usize> = (0..32).map(|_| rng.gen_range(0..16)).collect();
        let req = LookupRequest::new(&binding, &indices);
        let g = Array2::from_shape_fn((32, 8), |_| rng.gen_range(-1.0..1.0));

        store.zero_grads();
        lookup_backward(&mut store, &req, &g.view()).unwrap();
        let sequential = store.grads().to_vec();

        store.set_threads(4);
        store.zero_grads();
        lookup_backward(&mut store, &req, &g.view()).unwrap();
        for (a, b) in sequential.iter().zip(store.grads()) {
            assert!((a - b).abs() < 1e-12);
        }
        // And re-running with the same thread count is bitwise stable.
        let first = store.grads().to_vec();
        store.zero_grads();
        lookup_backward(&mut store, &req, &g.view()).unwrap();
        for (a, b) in first.iter().zip(store.grads()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
