//! Subcommand implementations: parameter resolution (defaults ← config file
//! ← flags), the run itself, CSV outputs, and the manifest.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Args;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use roast_core::benchmark::{roast_speedups, run_benchmark, BenchConfig, KernelKind};
use roast_core::dataset::{synth_dataset, DatasetKind};
use roast_core::error::{Error, Result};
use roast_core::estimator::{
    gms_lms_gap_study, monte_carlo_moments, norm_preservation_study, EstimatorKind, FractionMode,
    GapStudyConfig, PieceLayout,
};
use roast_core::exec::Exec;
use roast_core::hashing::mix_seed;
use roast_core::optim::{OptimizerConfig, OptimizerKind};
use roast_core::report::{
    csv_string, sharing_name, train_rows, BenchCsvRow, EstimatorCsvRow, TrainCsvRow,
};
use roast_core::store::{CompressedStore, SharingMode};
use roast_core::trainer::{build_model, train, ModelSpec, SweepRow, TrainParams};

pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub threads: usize,
    pub out: PathBuf,
}

/// Resolved run description written next to every output.
#[derive(Serialize)]
struct Manifest<'p, P: Serialize> {
    command: &'static str,
    seed: u64,
    threads: usize,
    params: &'p P,
}

fn write_manifest<P: Serialize>(
    globals: &Globals,
    command: &'static str,
    params: &P,
) -> Result<()> {
    std::fs::create_dir_all(&globals.out)?;
    let manifest = Manifest {
        command,
        seed: globals.seed,
        threads: globals.threads,
        params,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
    std::fs::write(globals.out.join("manifest.json"), text + "\n")?;
    Ok(())
}

pub fn write_verify_manifest<P: Serialize>(globals: &Globals, params: &P) -> Result<()> {
    write_manifest(globals, "verify", params)
}

pub fn verify_file_params<P: DeserializeOwned>(globals: &Globals) -> Result<Option<P>> {
    file_params(&globals.config, "verify")
}

/// Loads params from `--config` if given: accepts either a bare params
/// object or a full manifest (whose `command` must match). Unknown keys are
/// rejected by the params types.
fn file_params<P: DeserializeOwned>(
    config: &Option<PathBuf>,
    command: &'static str,
) -> Result<Option<P>> {
    let Some(path) = config else {
        return Ok(None);
    };
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
    let params_value = match value.get("command") {
        Some(serde_json::Value::String(cmd)) => {
            if cmd != command {
                return Err(Error::Config(format!(
                    "config is a manifest for '{cmd}', not '{command}'"
                )));
            }
            value
                .get("params")
                .cloned()
                .ok_or_else(|| Error::Config("manifest missing params".into()))?
        }
        _ => value,
    };
    let params = serde_json::from_value(params_value)
        .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
    Ok(Some(params))
}

fn write_named_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, csv_string(rows)?)?;
    Ok(path)
}

// ---------------------------------------------------------------- bench --

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Square matrix sides, comma separated.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// Compressed store sizes in MiB, comma separated.
    #[arg(long = "store-mb", value_delimiter = ',')]
    store_mb: Option<Vec<usize>>,
    /// Kernels to time: dense, hashednet, roast.
    #[arg(long, value_delimiter = ',')]
    kernels: Option<Vec<String>>,
    /// Input batch rows.
    #[arg(long)]
    batch: Option<usize>,
    /// Timed runs per cell (median reported).
    #[arg(long)]
    runs: Option<usize>,
    /// Warmup runs discarded per cell.
    #[arg(long)]
    warmup: Option<usize>,
    /// Tile sides Z0,Z1,Z2.
    #[arg(long, value_delimiter = ',')]
    tiles: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields, default)]
pub struct BenchParamsFile {
    dims: Vec<usize>,
    store_mb: Vec<usize>,
    kernels: Vec<String>,
    batch: usize,
    runs: usize,
    warmup: usize,
    tiles: Vec<usize>,
}

impl Default for BenchParamsFile {
    fn default() -> Self {
        Self {
            dims: vec![512, 1024, 2048],
            store_mb: vec![4],
            kernels: vec!["dense".into(), "hashednet".into(), "roast".into()],
            batch: 64,
            runs: 9,
            warmup: 2,
            tiles: vec![16, 16, 64],
        }
    }
}

pub fn run_bench(globals: &Globals, args: BenchArgs) -> Result<ExitCode> {
    let mut p: BenchParamsFile = file_params(&globals.config, "bench")?.unwrap_or_default();
    if let Some(v) = args.dims {
        p.dims = v;
    }
    if let Some(v) = args.store_mb {
        p.store_mb = v;
    }
    if let Some(v) = args.kernels {
        p.kernels = v;
    }
    if let Some(v) = args.batch {
        p.batch = v;
    }
    if let Some(v) = args.runs {
        p.runs = v;
    }
    if let Some(v) = args.warmup {
        p.warmup = v;
    }
    if let Some(v) = args.tiles {
        p.tiles = v;
    }
    if p.tiles.len() != 3 {
        return Err(Error::Config(format!(
            "tiles need exactly Z0,Z1,Z2; got {:?}",
            p.tiles
        )));
    }
    if p.dims.is_empty() || p.dims.iter().any(|&d| d == 0) {
        return Err(Error::Config(format!("invalid dims {:?}", p.dims)));
    }
    let kernels: Vec<KernelKind> = p
        .kernels
        .iter()
        .map(|k| KernelKind::parse(k))
        .collect::<Result<_>>()?;
    write_manifest(globals, "bench", &p)?;

    let cfg = BenchConfig {
        dims: p.dims.clone(),
        store_elems: p.store_mb.iter().map(|mb| mb * (1 << 20) / 4).collect(),
        kernels,
        batch: p.batch,
        runs: p.runs,
        warmup: p.warmup,
        tiles: (p.tiles[0], p.tiles[1], p.tiles[2]),
        seed: globals.seed,
    };
    let records = run_benchmark(&cfg)?;
    let rows: Vec<BenchCsvRow> = records.iter().map(BenchCsvRow::from).collect();
    let path = write_named_csv(&globals.out, "bench.csv", &rows)?;

    println!("wrote {} rows to {}", rows.len(), path.display());
    for r in &records {
        println!(
            "  {:<9} dim {:>5}  store {:>6} KB  median {:.3} ms",
            r.kernel.name(),
            r.dim,
            r.store_bytes >> 10,
            r.median_ms
        );
    }
    let speedups = roast_speedups(&records);
    if !speedups.is_empty() {
        println!("roast speedup over hashednet:");
        for (dim, store, s) in speedups {
            println!("  dim {dim:>5}  store {:>6} KB  {s:.2}x", store >> 10);
        }
    }
    Ok(ExitCode::SUCCESS)
}

// ------------------------------------------------------------- estimate --

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// Study: moments, gap, or norms.
    #[arg(long)]
    study: Option<String>,
    /// Total vector length (moments, norms).
    #[arg(long)]
    n: Option<usize>,
    /// Piece count.
    #[arg(long)]
    k: Option<usize>,
    /// Memory buckets.
    #[arg(long)]
    m: Option<usize>,
    /// Monte Carlo trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Fixtures (moments study).
    #[arg(long)]
    fixtures: Option<usize>,
    /// Relative norm tolerance (norms study).
    #[arg(long)]
    eps: Option<f64>,
    /// Analytic draws (gap study).
    #[arg(long)]
    draws: Option<usize>,
    /// Piece squared norm (gap study).
    #[arg(long)]
    alpha: Option<f64>,
    /// Fraction mode for gap layouts: equal or random.
    #[arg(long)]
    fractions: Option<String>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateParamsFile {
    study: String,
    n: usize,
    k: usize,
    m: usize,
    trials: usize,
    fixtures: usize,
    eps: f64,
    draws: usize,
    alpha: f64,
    fractions: String,
}

impl Default for EstimateParamsFile {
    fn default() -> Self {
        Self {
            study: "moments".into(),
            n: 64,
            k: 4,
            m: 16,
            trials: 100_000,
            fixtures: 3,
            eps: 0.5,
            draws: 10_000,
            alpha: 1.0,
            fractions: "random".into(),
        }
    }
}

#[derive(Serialize)]
struct NormCsvRow {
    n: usize,
    k: usize,
    m: usize,
    epsilon: f64,
    trials: usize,
    global_rate: f64,
    local_rate: f64,
    diff_std_error: f64,
    seed: u64,
}

fn gaussian_vec(len: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| loop {
            let u1: f64 = rng.gen();
            if u1 <= f64::MIN_POSITIVE {
                continue;
            }
            let u2: f64 = rng.gen();
            break (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        })
        .collect()
}

pub fn run_estimate(globals: &Globals, args: EstimateArgs) -> Result<ExitCode> {
    let mut p: EstimateParamsFile = file_params(&globals.config, "estimate")?.unwrap_or_default();
    if let Some(v) = args.study {
        p.study = v;
    }
    if let Some(v) = args.n {
        p.n = v;
    }
    if let Some(v) = args.k {
        p.k = v;
    }
    if let Some(v) = args.m {
        p.m = v;
    }
    if let Some(v) = args.trials {
        p.trials = v;
    }
    if let Some(v) = args.fixtures {
        p.fixtures = v;
    }
    if let Some(v) = args.eps {
        p.eps = v;
    }
    if let Some(v) = args.draws {
        p.draws = v;
    }
    if let Some(v) = args.alpha {
        p.alpha = v;
    }
    if let Some(v) = args.fractions {
        p.fractions = v;
    }
    write_manifest(globals, "estimate", &p)?;
    let exec = Exec::with_threads(globals.threads);

    match p.study.as_str() {
        "moments" => {
            if p.k == 0 || !p.n.is_multiple_of(p.k) {
                return Err(Error::Config(format!(
                    "k = {} must divide n = {} for equal pieces",
                    p.k, p.n
                )));
            }
            let layout = PieceLayout::equal(p.k, p.n / p.k, p.m)?;
            let mut rows = Vec::new();
            for fixture in 0..p.fixtures {
                let data_seed = mix_seed(globals.seed, 0xf0 + fixture as u64);
                let x = gaussian_vec(p.n, mix_seed(data_seed, 0));
                let y = gaussian_vec(p.n, mix_seed(data_seed, 1));
                let ip: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
                let gms = monte_carlo_moments(
                    EstimatorKind::Gms,
                    &x,
                    &y,
                    &layout,
                    p.trials,
                    data_seed,
                    exec,
                )?;
                let lms = monte_carlo_moments(
                    EstimatorKind::Lms,
                    &x,
                    &y,
                    &layout,
                    p.trials,
                    mix_seed(data_seed, 2),
                    exec,
                )?;
                println!(
                    "fixture {fixture}: <x,y> = {ip:.4}; gms mean {:.4} (se {:.4}), var {:.4} vs analytic {:.4}; \
                     lms mean {:.4}, var {:.4} vs analytic {:.4}",
                    gms.estimator_mean,
                    gms.std_error_mean,
                    gms.estimator_variance,
                    gms.analytic_variance,
                    lms.estimator_mean,
                    lms.estimator_variance,
                    lms.analytic_variance
                );
                rows.push(EstimatorCsvRow::from_moments(
                    fixture, p.k, p.m, p.n, &gms, &lms, data_seed,
                ));
            }
            let path = write_named_csv(&globals.out, "estimator.csv", &rows)?;
            println!("wrote {} rows to {}", rows.len(), path.display());
        }
        "gap" => {
            if !p.n.is_multiple_of(p.k.max(1)) {
                return Err(Error::Config(format!(
                    "k = {} must divide n = {}",
                    p.k, p.n
                )));
            }
            let cfg = GapStudyConfig {
                k: p.k,
                piece_size: p.n / p.k,
                memory_m: p.m,
                draws: p.draws,
                alpha: p.alpha,
                fraction_mode: match p.fractions.as_str() {
                    "equal" => FractionMode::Equal,
                    "random" => FractionMode::Random,
                    other => return Err(Error::Config(format!("unknown fraction mode '{other}'"))),
                },
                seed: globals.seed,
            };
            let (draws, summary) = gms_lms_gap_study(&cfg)?;
            let rows: Vec<EstimatorCsvRow> = draws
                .iter()
                .map(|d| EstimatorCsvRow::from_gap_draw(d, p.k, p.m, p.n, globals.seed))
                .collect();
            let path = write_named_csv(&globals.out, "estimator.csv", &rows)?;
            println!(
                "V_L >= V_G on {:.2}% of {} draws ({} exceptions); mean V_G approximation residual {:+.3e}",
                100.0 * summary.frac_vl_ge_vg,
                summary.draws,
                summary.exceptions.len(),
                summary.mean_vg_approx_residual
            );
            if !summary.exceptions.is_empty() {
                println!("exception draw ids: {:?}", summary.exceptions);
            }
            println!("wrote {} rows to {}", rows.len(), path.display());
        }
        "norms" => {
            let r = norm_preservation_study(p.n, p.k, p.m, p.eps, p.trials, globals.seed, exec)?;
            let rows = vec![NormCsvRow {
                n: p.n,
                k: p.k,
                m: p.m,
                epsilon: p.eps,
                trials: r.trials,
                global_rate: r.global_rate,
                local_rate: r.local_rate,
                diff_std_error: r.diff_std_error,
                seed: globals.seed,
            }];
            let path = write_named_csv(&globals.out, "norms.csv", &rows)?;
            println!(
                "global success rate {:.4}, local {:.4} (diff se {:.4}) over {} trials",
                r.global_rate, r.local_rate, r.diff_std_error, r.trials
            );
            println!("wrote 1 row to {}", path.display());
        }
        other => {
            return Err(Error::Config(format!(
                "unknown study '{other}' (expected moments, gap, norms)"
            )))
        }
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------- train --

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset: clusters, moons, sparse_tokens.
    #[arg(long)]
    dataset: Option<String>,
    /// Samples to generate.
    #[arg(long)]
    size: Option<usize>,
    /// Feature dimension (dense) or vocabulary (tokens).
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    /// Hidden layer widths.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Compression ratios to sweep.
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    /// Sharing modes: global, local (default both).
    #[arg(long, value_delimiter = ',')]
    sharing: Option<Vec<String>>,
    /// Optimizer: sgd, adagrad, adam.
    #[arg(long)]
    optimizer: Option<String>,
    /// Learning rate (defaults per optimizer).
    #[arg(long = "learning-rate")]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    /// Training seeds, one run per seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Keep biases dense outside the store.
    #[arg(long = "dense-bias")]
    dense_bias: bool,
    /// Report real wall-clock times (breaks byte-for-byte determinism).
    #[arg(long = "wall-clock")]
    wall_clock: bool,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParamsFile {
    dataset: String,
    size: usize,
    dim: usize,
    classes: usize,
    hidden: Vec<usize>,
    ratios: Vec<f64>,
    sharing: Vec<String>,
    optimizer: String,
    learning_rate: Option<f64>,
    epochs: usize,
    batch_size: usize,
    seeds: Vec<u64>,
    dense_bias: bool,
    wall_clock: bool,
}

impl Default for TrainParamsFile {
    fn default() -> Self {
        Self {
            dataset: "clusters".into(),
            size: 2000,
            dim: 32,
            classes: 4,
            hidden: vec![64, 64],
            ratios: vec![10.0],
            sharing: vec!["global".into(), "local".into()],
            optimizer: "adam".into(),
            learning_rate: None,
            epochs: 20,
            batch_size: 64,
            seeds: vec![1, 2, 3],
            dense_bias: false,
            wall_clock: false,
        }
    }
}

pub fn run_train(globals: &Globals, args: TrainArgs) -> Result<ExitCode> {
    let mut p: TrainParamsFile = file_params(&globals.config, "train")?.unwrap_or_default();
    if let Some(v) = args.dataset {
        p.dataset = v;
    }
    if let Some(v) = args.size {
        p.size = v;
    }
    if let Some(v) = args.dim {
        p.dim = v;
    }
    if let Some(v) = args.classes {
        p.classes = v;
    }
    if let Some(v) = args.hidden {
        p.hidden = v;
    }
    if let Some(v) = args.ratios {
        p.ratios = v;
    }
    if let Some(v) = args.sharing {
        p.sharing = v;
    }
    if let Some(v) = args.optimizer {
        p.optimizer = v;
    }
    if let Some(v) = args.learning_rate {
        p.learning_rate = Some(v);
    }
    if let Some(v) = args.epochs {
        p.epochs = v;
    }
    if let Some(v) = args.batch_size {
        p.batch_size = v;
    }
    if let Some(v) = args.seeds {
        p.seeds = v;
    }
    if args.dense_bias {
        p.dense_bias = true;
    }
    if args.wall_clock {
        p.wall_clock = true;
    }
    write_manifest(globals, "train", &p)?;

    let kind = DatasetKind::parse(&p.dataset)?;
    let opt_kind = OptimizerKind::parse(&p.optimizer)?;
    let mut opt = OptimizerConfig::default_for(opt_kind);
    if let Some(lr) = p.learning_rate {
        if !(lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        opt.learning_rate = lr;
    }
    let sharings: Vec<SharingMode> = p
        .sharing
        .iter()
        .map(|s| match s.as_str() {
            "global" => Ok(SharingMode::Global),
            "local" => Ok(SharingMode::Local),
            other => Err(Error::Config(format!("unknown sharing mode '{other}'"))),
        })
        .collect::<Result<_>>()?;
    if p.ratios.is_empty() || p.seeds.is_empty() || sharings.is_empty() {
        return Err(Error::Config(
            "need at least one ratio, seed and sharing mode".into(),
        ));
    }

    let dataset = synth_dataset(kind, p.size, p.dim, p.classes, globals.seed)?;
    let (train_set, test_set) = dataset.split(0.2, globals.seed);
    let params = TrainParams {
        epochs: p.epochs,
        batch_size: p.batch_size,
    };

    let mut csv_rows: Vec<TrainCsvRow> = Vec::new();
    println!(
        "{:<8} {:>8} {:>9} {:>6} {:>10}",
        "sharing", "ratio", "achieved", "seed", "accuracy"
    );
    for &ratio in &p.ratios {
        for &sharing in &sharings {
            for &seed in &p.seeds {
                let mut spec =
                    ModelSpec::new(p.dim, p.hidden.clone(), p.classes, ratio, sharing, seed)
                        .with_dense_bias(p.dense_bias);
                if kind == DatasetKind::SparseTokens {
                    // Token data: the vocabulary is `dim`; pick a modest
                    // embedding width.
                    spec.embed_dim = 16.min(p.dim);
                    spec = spec.with_vocab(p.dim);
                }
                let mut model = build_model(&spec)?;
                model.store_mut().set_threads(globals.threads);
                let report = train(&mut model, &train_set, &test_set, &opt, &params)?;
                println!(
                    "{:<8} {:>8.1} {:>9.2} {:>6} {:>10.4}",
                    sharing_name(sharing),
                    ratio,
                    model.achieved_ratio(),
                    seed,
                    report.final_accuracy
                );
                let row = SweepRow {
                    requested_ratio: ratio,
                    achieved_ratio: model.achieved_ratio(),
                    sharing,
                    seed,
                    final_accuracy: report.final_accuracy,
                    report,
                };
                csv_rows.extend(train_rows(&row, opt_kind.name(), !p.wall_clock));
            }
        }
    }
    let path = write_named_csv(&globals.out, "train.csv", &csv_rows)?;
    println!("wrote {} rows to {}", csv_rows.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------- store --

#[derive(Args, Debug)]
pub struct StoreArgs {
    #[command(subcommand)]
    action: StoreAction,
}

#[derive(clap::Subcommand, Debug)]
enum StoreAction {
    /// Create a store from the global seed and write a snapshot.
    Save {
        #[arg(long)]
        path: PathBuf,
        /// Store length in slots.
        #[arg(long)]
        m: usize,
        /// Init scale C: values start Uniform(−1/C, 1/C).
        #[arg(long, default_value_t = 1.0)]
        c: f64,
    },
    /// Read a snapshot and print its header and value checksum.
    Load {
        #[arg(long)]
        path: PathBuf,
    },
}

#[derive(Serialize)]
struct StoreManifestParams {
    action: String,
    path: String,
    m: Option<usize>,
    c: Option<f64>,
}

pub fn run_store(globals: &Globals, args: StoreArgs) -> Result<ExitCode> {
    match args.action {
        StoreAction::Save { path, m, c } => {
            write_manifest(
                globals,
                "store",
                &StoreManifestParams {
                    action: "save".into(),
                    path: path.display().to_string(),
                    m: Some(m),
                    c: Some(c),
                },
            )?;
            let store = CompressedStore::create(m, c, globals.seed, SharingMode::Global)?;
            store.save_path(&path)?;
            println!(
                "saved store: m = {}, C = {}, seed = {} -> {}",
                store.len(),
                store.init_scale(),
                store.master_seed(),
                path.display()
            );
        }
        StoreAction::Load { path } => {
            write_manifest(
                globals,
                "store",
                &StoreManifestParams {
                    action: "load".into(),
                    path: path.display().to_string(),
                    m: None,
                    c: None,
                },
            )?;
            let store = CompressedStore::load_path(&path)?;
            let sum: f64 = store.values().iter().sum();
            let bits = store
                .values()
                .iter()
                .fold(0u64, |acc, v| acc ^ v.to_bits().rotate_left(17));
            println!(
                "loaded store: m = {}, C = {}, seed = {}, value sum = {:.12}, xor-fold = {bits:016x}",
                store.len(),
                store.init_scale(),
                store.master_seed(),
                sum
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
