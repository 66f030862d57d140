//! `roast verify`: the gradient and oracle check suite at fixed seeds.
//! Prints one line per check with its worst error and tolerance; exits with
//! code 3 if anything fails.

use std::process::ExitCode;

use clap::Args;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use roast_core::dataset::{synth_dataset, DatasetKind};
use roast_core::error::Result;
use roast_core::estimator::{
    analytic_variance_gms, analytic_variance_piece, collision_pair_sum_closed, gms_variance_whole,
    PieceLayout,
};
use roast_core::lookup::{lookup_backward, lookup_forward, LookupRequest};
use roast_core::matmul::{
    hashednet_mm_forward, materialize_hashednet, materialize_with_cap, roast_mm_backward,
    roast_mm_forward, MatmulPlan,
};
use roast_core::store::{CompressedStore, ModuleSpec, SharingMode, TileConfig};
use roast_core::trainer::{build_model, Batch, ModelSpec};

use crate::commands::Globals;

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Smaller instances and fewer repetitions.
    #[arg(long)]
    quick: bool,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct VerifyParams {
    quick: bool,
}

struct Check {
    name: &'static str,
    max_error: f64,
    tolerance: f64,
}

impl Check {
    fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let u2: f64 = rng.gen();
        return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    }
}

fn rel_frobenius(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    let norm: f64 = b.iter().map(|x| x * x).sum();
    (diff / norm.max(1e-300)).sqrt()
}

pub fn run_verify(globals: &Globals, args: VerifyArgs) -> Result<ExitCode> {
    let mut params: VerifyParams =
        crate::commands::verify_file_params(globals)?.unwrap_or_default();
    if args.quick {
        params.quick = true;
    }
    let quick = params.quick;
    crate::commands::write_verify_manifest(globals, &params)?;
    let seed = globals.seed;
    let oracle_trials = if quick { 5 } else { 25 };
    let mut checks = Vec::new();

    // Scalar reference for chunked lookup.
    {
        let mut store = CompressedStore::create(256, 1.0, seed, SharingMode::Global)?;
        let binding = store.register_module(
            &ModuleSpec::lookup(vec![10, 24], 8).with_tile(TileConfig::chunk(8)),
        )?;
        let indices = [2usize, 9, 0, 2, 7];
        let req = LookupRequest::new(&binding, &indices);
        let out = lookup_forward(&store, &req)?;
        let placement = binding.placement_family();
        let sign = binding.sign_family();
        let mut max_err = 0.0f64;
        for (r, &idx) in indices.iter().enumerate() {
            for i in 0..24 {
                let e = idx * 24 + i;
                let chunk = (e / 8) as u64;
                let off = placement.chunk_offset(chunk, 256, 8)?;
                let want = binding.lambda * sign.sign(chunk) * store.values()[off + e % 8];
                max_err = max_err.max((out[[r, i]] - want).abs());
            }
        }
        checks.push(Check {
            name: "lookup_scalar_reference",
            max_error: max_err,
            tolerance: 0.0,
        });
    }

    // Adjoint identities.
    {
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xad701);
        let mut worst = 0.0f64;
        for trial in 0..oracle_trials as u64 {
            let mut store = CompressedStore::create(200, 1.0, seed + trial, SharingMode::Global)?;
            let lk = store.register_module(
                &ModuleSpec::lookup(vec![9, 10], 5).with_tile(TileConfig::chunk(4)),
            )?;
            let req_indices = [0usize, 8, 3, 3];
            let req = LookupRequest::new(&lk, &req_indices);
            let g = Array2::from_shape_fn((4, 10), |_| gaussian(&mut rng));
            let fwd = lookup_forward(&store, &req)?;
            let lhs: f64 = fwd.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
            store.zero_grads();
            lookup_backward(&mut store, &req, &g.view())?;
            let rhs: f64 = store
                .values()
                .iter()
                .zip(store.grads())
                .map(|(v, gr)| v * gr)
                .sum();
            worst = worst.max(((lhs - rhs) / lhs.abs().max(1e-300)).abs());
        }
        checks.push(Check {
            name: "lookup_adjoint",
            max_error: worst,
            tolerance: 1e-10,
        });

        let mut worst_mm = 0.0f64;
        for trial in 0..oracle_trials as u64 {
            let mut store =
                CompressedStore::create(300, 1.0, seed + 100 + trial, SharingMode::Global)?;
            let mm = store.register_module(
                &ModuleSpec::matmul(11, 7, 11).with_tile(TileConfig::tiles(4, 4, 4)),
            )?;
            let plan = MatmulPlan::new(&mm)?;
            let x = Array2::from_shape_fn((6, 11), |_| gaussian(&mut rng));
            let gy = Array2::from_shape_fn((6, 7), |_| gaussian(&mut rng));
            let fwd = roast_mm_forward(&store, &plan, &x.view())?;
            let lhs: f64 = fwd.iter().zip(gy.iter()).map(|(a, b)| a * b).sum();
            store.zero_grads();
            let gx = roast_mm_backward(&mut store, &plan, &x.view(), &gy.view())?;
            let via_w: f64 = store
                .values()
                .iter()
                .zip(store.grads())
                .map(|(v, gr)| v * gr)
                .sum();
            let via_x: f64 = x.iter().zip(gx.iter()).map(|(a, b)| a * b).sum();
            worst_mm = worst_mm.max(((lhs - via_w) / lhs.abs().max(1e-300)).abs());
            worst_mm = worst_mm.max(((lhs - via_x) / lhs.abs().max(1e-300)).abs());
        }
        checks.push(Check {
            name: "matmul_adjoint",
            max_error: worst_mm,
            tolerance: 1e-10,
        });
    }

    // Materialization oracles.
    {
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x0bac1e);
        let mut worst_r = 0.0f64;
        let mut worst_h = 0.0f64;
        for trial in 0..oracle_trials as u64 {
            let h = rng.gen_range(33..=257);
            let o = rng.gen_range(33..=257);
            let sides = [8usize, 16, 32];
            let z1 = sides[rng.gen_range(0..3)];
            let z2 = sides[rng.gen_range(0..3)];
            let m = 1usize << rng.gen_range(10..=14);
            let mut store =
                CompressedStore::create(m, 1.0, seed + 200 + trial, SharingMode::Global)?;
            let binding = store.register_module(
                &ModuleSpec::matmul(h, o, h).with_tile(TileConfig::tiles(8, z1, z2)),
            )?;
            let plan = MatmulPlan::new(&binding)?;
            let x = Array2::from_shape_fn((9, h), |_| gaussian(&mut rng));
            let oracle = x.dot(&materialize_with_cap(&store, &binding, usize::MAX)?);
            worst_r = worst_r.max(rel_frobenius(
                &roast_mm_forward(&store, &plan, &x.view())?,
                &oracle,
            ));
            let oracle_h = x.dot(&materialize_hashednet(&store, &binding)?);
            worst_h = worst_h.max(rel_frobenius(
                &hashednet_mm_forward(&store, &plan, &x.view())?,
                &oracle_h,
            ));
        }
        checks.push(Check {
            name: "roast_mm_materialize_oracle",
            max_error: worst_r,
            tolerance: 1e-6,
        });
        checks.push(Check {
            name: "hashednet_materialize_oracle",
            max_error: worst_h,
            tolerance: 1e-6,
        });
    }

    // Full-model finite differences across one shared store.
    {
        let spec = ModelSpec::new(8, vec![12], 3, 1.2, SharingMode::Global, seed).with_vocab(20);
        let mut model = build_model(&spec)?;
        let samples = if quick { 8 } else { 24 };
        let ds = synth_dataset(DatasetKind::SparseTokens, samples, 20, 3, seed)?;
        let tokens = ds.tokens.clone().expect("token data");
        let labels = ds.labels.clone();

        model.store_mut().zero_grads();
        model.loss_and_backward(&Batch::Tokens(&tokens), &labels)?;
        let analytic = model.store().grads().to_vec();

        let loss_at = |model: &roast_core::trainer::Model| -> f64 {
            let logits = model.forward(&Batch::Tokens(&tokens)).unwrap();
            let mut loss = 0.0;
            for (r, &label) in labels.iter().enumerate() {
                let row = logits.row(r);
                let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = row.iter().map(|v| (v - maxv).exp()).sum();
                loss -= (row[label] - maxv) - denom.ln();
            }
            loss / labels.len() as f64
        };
        let step = 1e-5;
        let stride = if quick { 7 } else { 1 };
        let mut max_rel = 0.0f64;
        let mut slot = 0;
        while slot < model.store().len() {
            let orig = model.store().values()[slot];
            model.store_mut().values_mut()[slot] = orig + step;
            let plus = loss_at(&model);
            model.store_mut().values_mut()[slot] = orig - step;
            let minus = loss_at(&model);
            model.store_mut().values_mut()[slot] = orig;
            let fd = (plus - minus) / (2.0 * step);
            let rel = (fd - analytic[slot]).abs() / (fd.abs() + analytic[slot].abs()).max(1e-6);
            max_rel = max_rel.max(rel);
            slot += stride;
        }
        checks.push(Check {
            name: "full_model_finite_difference",
            max_error: max_rel,
            tolerance: 1e-4,
        });
    }

    // Estimator formula identities.
    {
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xe571);
        let mut worst = 0.0f64;
        for _ in 0..10 {
            let x: Vec<f64> = (0..64).map(|_| gaussian(&mut rng)).collect();
            let y: Vec<f64> = (0..64).map(|_| gaussian(&mut rng)).collect();
            let layout = PieceLayout::equal(4, 16, 16)?;
            let dec = analytic_variance_gms(&x, &y, &layout)?;
            let whole = gms_variance_whole(&x, &y, 16)?;
            worst = worst.max(((dec - whole) / whole.abs().max(1e-300)).abs());
            // Closed form of the piece pair sum against the direct formula.
            let direct = analytic_variance_piece(&x[..16], &y[..16], 0.25, 16)?;
            let closed = collision_pair_sum_closed(&x[..16], &y[..16]) / 4.0;
            worst = worst.max(((direct - closed) / closed.abs().max(1e-300)).abs());
        }
        checks.push(Check {
            name: "variance_decomposition_identity",
            max_error: worst,
            tolerance: 1e-10,
        });
    }

    // Snapshot round trip.
    {
        let store = CompressedStore::create(2048, 1.25, seed, SharingMode::Global)?;
        let mut buf = Vec::new();
        store.save(&mut buf)?;
        let loaded = CompressedStore::load(buf.as_slice())?;
        let mut max_err = 0.0f64;
        for (a, b) in store.values().iter().zip(loaded.values()) {
            if a.to_bits() != b.to_bits() {
                max_err = 1.0;
            }
        }
        checks.push(Check {
            name: "store_snapshot_round_trip",
            max_error: max_err,
            tolerance: 0.0,
        });
    }

    let mut all_pass = true;
    println!(
        "{:<34} {:>12} {:>10} {:>8}",
        "check", "max_error", "tolerance", "status"
    );
    for check in &checks {
        let ok = check.passed();
        all_pass &= ok;
        println!(
            "{:<34} {:>12.3e} {:>10.0e} {:>8}",
            check.name,
            check.max_error,
            check.tolerance,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    if all_pass {
        println!("all {} checks passed", checks.len());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("verification failed");
        Ok(ExitCode::from(3))
    }
}
