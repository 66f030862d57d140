//! Inner-product estimators under global and local memory sharing, their
//! exact variance formulas, and Monte Carlo verification.
//!
//! Everything here runs at chunk size one: an index is hashed to a bucket,
//! sign-flipped, and accumulated, giving the classic sign-hash estimate
//!
//! ```text
//! est = Σ_j (Σ_i 1{h(i)=j} g(i) x[i]) (Σ_i 1{h(i)=j} g(i) y[i])
//! ```
//!
//! Local sharing splits the vector into k pieces and estimates each piece in
//! its own memory of ⌊fₗ·m⌋ buckets (remainder slots go to the last piece).
//! Both estimators are unbiased; their variances are
//!
//! ```text
//! V_piece(a, b, mₗ) = (1/mₗ)(Σ_{i≠j} aᵢ²bⱼ² + Σ_{i≠j} aᵢbᵢaⱼbⱼ)
//! V_L = Σₗ Vₗ
//! V_G = Σₗ fₗVₗ + (1/m) Σ_{l1≠l2} (‖x_{l1}‖²‖y_{l2}‖² + ⟨x_{l1},y_{l1}⟩⟨x_{l2},y_{l2}⟩)
//! ```
//!
//! and the decomposed V_G must agree with the direct whole-vector
//! evaluation; that identity is checked, not assumed. Hashes are fresh four-wise
//! instances per trial; four-wise independence is what makes the measured
//! second moments match the formulas.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hashing::{mix_seed, HashFamily, HashKind, Independence};

/// Decomposition of an n-vector into k pieces with memory fractions.
#[derive(Clone, Debug)]
pub struct PieceLayout {
    piece_sizes: Vec<usize>,
    fractions: Vec<f64>,
    memory_m: usize,
}

impl PieceLayout {
    pub fn new(piece_sizes: Vec<usize>, fractions: Vec<f64>, memory_m: usize) -> Result<Self> {
        if piece_sizes.is_empty() || piece_sizes.len() != fractions.len() {
            return Err(Error::Config(
                "piece sizes and fractions must be non-empty and match".into(),
            ));
        }
        if piece_sizes.iter().any(|&n| n == 0) {
            return Err(Error::Config("piece sizes must be positive".into()));
        }
        if memory_m == 0 {
            return Err(Error::Config("memory size must be positive".into()));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("fractions must sum to 1, got {sum}")));
        }
        let layout = Self {
            piece_sizes,
            fractions,
            memory_m,
        };
        if layout.piece_mems().iter().any(|&mi| mi == 0) {
            return Err(Error::Config("every piece needs ⌊fᵢ·m⌋ ≥ 1 buckets".into()));
        }
        Ok(layout)
    }

    /// k equal pieces with fractions 1/k.
    pub fn equal(k: usize, piece_size: usize, memory_m: usize) -> Result<Self> {
        Self::new(vec![piece_size; k], vec![1.0 / k as f64; k], memory_m)
    }

    /// Fractions proportional to piece sizes.
    pub fn proportional(piece_sizes: Vec<usize>, memory_m: usize) -> Result<Self> {
        let total: usize = piece_sizes.iter().sum();
        let fractions = piece_sizes
            .iter()
            .map(|&n| n as f64 / total as f64)
            .collect();
        Self::new(piece_sizes, fractions, memory_m)
    }

    pub fn k(&self) -> usize {
        self.piece_sizes.len()
    }

    pub fn total_n(&self) -> usize {
        self.piece_sizes.iter().sum()
    }

    pub fn memory_m(&self) -> usize {
        self.memory_m
    }

    pub fn piece_sizes(&self) -> &[usize] {
        &self.piece_sizes
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    /// Integer bucket counts ⌊fₗ·m⌋ with the remainder on the last piece, so
    /// the counts always sum to m.
    pub fn piece_mems(&self) -> Vec<usize> {
        let mut mems: Vec<usize> = self
            .fractions
            .iter()
            .map(|f| (f * self.memory_m as f64).floor() as usize)
            .collect();
        let used: usize = mems.iter().sum();
        if let Some(last) = mems.last_mut() {
            *last += self.memory_m.saturating_sub(used);
        }
        mems
    }

    /// Start offset of each piece in the concatenated vector.
    fn piece_starts(&self) -> Vec<usize> {
        let mut starts = Vec::with_capacity(self.k());
        let mut acc = 0;
        for &n in &self.piece_sizes {
            starts.push(acc);
            acc += n;
        }
        starts
    }
}

/// Sample moments of an estimator against the analytic formulas.
#[derive(Clone, Debug)]
pub struct MomentReport {
    pub estimator_mean: f64,
    pub estimator_variance: f64,
    pub trials: usize,
    pub std_error_mean: f64,
    pub std_error_var: f64,
    pub analytic_expectation: f64,
    pub analytic_variance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorKind {
    Gms,
    Lms,
}

fn trial_families(seed: u64) -> (HashFamily, HashFamily) {
    (
        HashFamily::new(HashKind::Chunk1d, Independence::FourWise, mix_seed(seed, 0)),
        HashFamily::new(HashKind::Sign, Independence::FourWise, mix_seed(seed, 1)),
    )
}

/// One draw of the global-sharing estimate of ⟨x, y⟩ hashed into m buckets.
pub fn gms_estimate(x: &[f64], y: &[f64], m: usize, seed: u64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "vector lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if m == 0 {
        return Err(Error::Config("memory size must be positive".into()));
    }
    let (h, g) = trial_families(seed);
    let mut bx = vec![0.0f64; m];
    let mut by = vec![0.0f64; m];
    for (i, (&xi, &yi)) in x.iter().zip(y).enumerate() {
        let j = h.bucket(i as u64, m);
        let s = g.sign(i as u64);
        bx[j] += s * xi;
        by[j] += s * yi;
    }
    Ok(bx.iter().zip(&by).map(|(a, b)| a * b).sum())
}

/// One draw of the local-sharing estimate: the sum of per-piece global
/// estimates into memories of ⌊fₗ·m⌋ buckets, one independent seed per piece.
pub fn lms_estimate(x: &[f64], y: &[f64], layout: &PieceLayout, seeds: &[u64]) -> Result<f64> {
    if x.len() != layout.total_n() || y.len() != layout.total_n() {
        return Err(Error::Shape(format!(
            "vectors of length {} do not match layout with n = {}",
            x.len(),
            layout.total_n()
        )));
    }
    if seeds.len() != layout.k() {
        return Err(Error::Shape(format!(
            "{} seeds for {} pieces",
            seeds.len(),
            layout.k()
        )));
    }
    let mems = layout.piece_mems();
    let starts = layout.piece_starts();
    let mut total = 0.0;
    for l in 0..layout.k() {
        let lo = starts[l];
        let hi = lo + layout.piece_sizes[l];
        total += gms_estimate(&x[lo..hi], &y[lo..hi], mems[l], seeds[l])?;
    }
    Ok(total)
}

/// Σ_{i≠j} aᵢ²bⱼ² + Σ_{i≠j} aᵢbᵢaⱼbⱼ over ordered pairs: the pair sum at the
/// core of every variance formula here.
fn collision_pair_sum(a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0;
    for i in 0..a.len() {
        for j in 0..a.len() {
            if i != j {
                sum += a[i] * a[i] * b[j] * b[j] + a[i] * b[i] * a[j] * b[j];
            }
        }
    }
    sum
}

/// Equivalent closed form of the pair sum:
/// ‖a‖²‖b‖² + ⟨a,b⟩² − 2Σᵢaᵢ²bᵢ².
pub fn collision_pair_sum_closed(a: &[f64], b: &[f64]) -> f64 {
    let na: f64 = a.iter().map(|v| v * v).sum();
    let nb: f64 = b.iter().map(|v| v * v).sum();
    let ip: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
    let sq: f64 = a.iter().zip(b).map(|(p, q)| p * p * q * q).sum();
    na * nb + ip * ip - 2.0 * sq
}

/// Variance of one piece's estimate into a memory of fraction `f_l` of `m`
/// buckets: (1/(fₗ·m)) · pair sum. Takes the fraction raw so callers can read
/// the 1/f unboundedness directly off the formula.
pub fn analytic_variance_piece(x_l: &[f64], y_l: &[f64], f_l: f64, m: usize) -> Result<f64> {
    if x_l.len() != y_l.len() {
        return Err(Error::Shape("piece lengths differ".into()));
    }
    if !(f_l > 0.0) || m == 0 || f_l * (m as f64) < 1.0 {
        return Err(Error::Config(format!(
            "piece memory fₗ·m = {} must be at least 1",
            f_l * m as f64
        )));
    }
    Ok(collision_pair_sum(x_l, y_l) / (f_l * m as f64))
}

/// Direct whole-vector variance of the global estimator: (1/m) · pair sum
/// over the concatenated vectors. Ground truth for the decomposition.
pub fn gms_variance_whole(x: &[f64], y: &[f64], m: usize) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape("vector lengths differ".into()));
    }
    if m == 0 {
        return Err(Error::Config("memory size must be positive".into()));
    }
    Ok(collision_pair_sum(x, y) / m as f64)
}

/// Piece-decomposed variance of the global estimator:
/// Σₗ fₗVₗ plus the cross-piece collision term. Algebraically equal to
/// [`gms_variance_whole`]; the pair is kept separate so the identity stays a
/// checkable statement rather than an assumption.
pub fn analytic_variance_gms(x: &[f64], y: &[f64], layout: &PieceLayout) -> Result<f64> {
    check_layout_vectors(x, y, layout)?;
    let starts = layout.piece_starts();
    let m = layout.memory_m as f64;
    let mut same_piece = 0.0;
    for l in 0..layout.k() {
        let lo = starts[l];
        let hi = lo + layout.piece_sizes[l];
        // fₗ·Vₗ = pair_sum / m: the fraction cancels.
        same_piece += layout.fractions[l]
            * analytic_variance_piece(
                &x[lo..hi],
                &y[lo..hi],
                layout.fractions[l],
                layout.memory_m,
            )?;
    }
    let mut cross = 0.0;
    for l1 in 0..layout.k() {
        for l2 in 0..layout.k() {
            if l1 == l2 {
                continue;
            }
            let (a1, b1) = piece(x, y, &starts, layout, l1);
            let (a2, b2) = piece(x, y, &starts, layout, l2);
            let nx1: f64 = a1.iter().map(|v| v * v).sum();
            let ny2: f64 = b2.iter().map(|v| v * v).sum();
            let ip1: f64 = a1.iter().zip(b1).map(|(p, q)| p * q).sum();
            let ip2: f64 = a2.iter().zip(b2).map(|(p, q)| p * q).sum();
            cross += nx1 * ny2 + ip1 * ip2;
        }
    }
    Ok(same_piece + cross / m)
}

fn piece<'v>(
    x: &'v [f64],
    y: &'v [f64],
    starts: &[usize],
    layout: &PieceLayout,
    l: usize,
) -> (&'v [f64], &'v [f64]) {
    let lo = starts[l];
    let hi = lo + layout.piece_sizes[l];
    (&x[lo..hi], &y[lo..hi])
}

/// Variance of the local estimator: Σₗ Vₗ.
pub fn analytic_variance_lms(x: &[f64], y: &[f64], layout: &PieceLayout) -> Result<f64> {
    check_layout_vectors(x, y, layout)?;
    let starts = layout.piece_starts();
    let mut total = 0.0;
    for l in 0..layout.k() {
        let lo = starts[l];
        let hi = lo + layout.piece_sizes[l];
        total +=
            analytic_variance_piece(&x[lo..hi], &y[lo..hi], layout.fractions[l], layout.memory_m)?;
    }
    Ok(total)
}

fn check_layout_vectors(x: &[f64], y: &[f64], layout: &PieceLayout) -> Result<()> {
    if x.len() != layout.total_n() || y.len() != layout.total_n() {
        return Err(Error::Shape(format!(
            "vectors of length {}/{} do not match layout with n = {}",
            x.len(),
            y.len(),
            layout.total_n()
        )));
    }
    Ok(())
}

/// Sample mean and variance of an estimator over independent hash draws,
/// with standard errors from the same sample and the analytic values filled
/// in for comparison. Trials are seeded individually (`mix(master, trial)`),
/// so results do not depend on the thread count.
pub fn monte_carlo_moments(
    kind: EstimatorKind,
    x: &[f64],
    y: &[f64],
    layout: &PieceLayout,
    trials: usize,
    master_seed: u64,
    exec: Exec,
) -> Result<MomentReport> {
    if trials < 1000 {
        return Err(Error::Config(format!(
            "at least 1000 trials needed for stable moments, got {trials}"
        )));
    }
    check_layout_vectors(x, y, layout)?;
    let chunks = exec.map_chunks(trials, |range| {
        let mut vals = Vec::with_capacity(range.len());
        for t in range {
            let trial_seed = mix_seed(master_seed, t as u64);
            let est = match kind {
                EstimatorKind::Gms => gms_estimate(x, y, layout.memory_m, trial_seed).unwrap(),
                EstimatorKind::Lms => {
                    let seeds: Vec<u64> = (0..layout.k())
                        .map(|l| mix_seed(trial_seed, l as u64))
                        .collect();
                    lms_estimate(x, y, layout, &seeds).unwrap()
                }
            };
            vals.push(est);
        }
        vals
    });
    let samples: Vec<f64> = chunks.into_iter().flatten().collect();

    let t = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / t;
    let m2 = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t;
    let m4 = samples.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / t;
    // Unbiased sample variance; SE of the variance from the fourth moment.
    let variance = m2 * t / (t - 1.0);
    let std_error_mean = (m2 / t).sqrt();
    let std_error_var = ((m4 - m2 * m2).max(0.0) / t).sqrt();

    let analytic_variance = match kind {
        EstimatorKind::Gms => analytic_variance_gms(x, y, layout)?,
        EstimatorKind::Lms => analytic_variance_lms(x, y, layout)?,
    };
    Ok(MomentReport {
        estimator_mean: mean,
        estimator_variance: variance,
        trials,
        std_error_mean,
        std_error_var,
        analytic_expectation: x.iter().zip(y).map(|(a, b)| a * b).sum(),
        analytic_variance,
    })
}

/// How the gap study draws memory fractions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FractionMode {
    /// fᵢ = 1/k for every piece.
    Equal,
    /// Dirichlet(1, …, 1) fractions, re-drawn until every ⌊fᵢ·m⌋ ≥ 1.
    Random,
}

#[derive(Clone, Debug)]
pub struct GapStudyConfig {
    pub k: usize,
    pub piece_size: usize,
    pub memory_m: usize,
    pub draws: usize,
    /// Squared norm each piece is rescaled to (equal-norm profile).
    pub alpha: f64,
    pub fraction_mode: FractionMode,
    pub seed: u64,
}

/// One draw of the gap study: analytic variances under both sharing modes.
#[derive(Clone, Debug)]
pub struct GapDraw {
    pub layout_id: usize,
    pub v_g: f64,
    pub v_l: f64,
}

#[derive(Clone, Debug)]
pub struct GapSummary {
    pub draws: usize,
    /// Fraction of draws with V_L ≥ V_G.
    pub frac_vl_ge_vg: f64,
    /// Draw ids where V_L < V_G (the neglected −2Σxᵢ²yᵢ² correction wins).
    pub exceptions: Vec<usize>,
    /// Mean signed residual of V_G against the (k²/m)(α² + β̄²) approximation.
    pub mean_vg_approx_residual: f64,
}

/// Draws equal-norm random pieces, evaluates the analytic V_G and V_L per
/// draw, and reports how often V_L ≥ V_G together with the approximation
/// residual. Exceptions are reported, never hidden: the ordering ignores a
/// correction term and is not a strict inequality.
pub fn gms_lms_gap_study(cfg: &GapStudyConfig) -> Result<(Vec<GapDraw>, GapSummary)> {
    if cfg.k == 0 || cfg.piece_size == 0 || cfg.draws == 0 {
        return Err(Error::Config(
            "k, piece_size and draws must be positive".into(),
        ));
    }
    if !(cfg.alpha > 0.0) {
        return Err(Error::Config("alpha must be positive".into()));
    }
    let n = cfg.k * cfg.piece_size;
    let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(cfg.seed, 0x6a9));
    let mut rows = Vec::with_capacity(cfg.draws);
    let mut exceptions = Vec::new();
    let mut residual_sum = 0.0;

    for draw in 0..cfg.draws {
        let fractions = match cfg.fraction_mode {
            FractionMode::Equal => vec![1.0 / cfg.k as f64; cfg.k],
            FractionMode::Random => random_fractions(&mut rng, cfg.k, cfg.memory_m),
        };
        let layout = PieceLayout::new(vec![cfg.piece_size; cfg.k], fractions, cfg.memory_m)?;
        let mut x = vec![0.0f64; n];
        let mut y = vec![0.0f64; n];
        for l in 0..cfg.k {
            let lo = l * cfg.piece_size;
            fill_with_norm(&mut rng, &mut x[lo..lo + cfg.piece_size], cfg.alpha.sqrt());
            fill_with_norm(&mut rng, &mut y[lo..lo + cfg.piece_size], cfg.alpha.sqrt());
        }
        let v_g = analytic_variance_gms(&x, &y, &layout)?;
        let v_l = analytic_variance_lms(&x, &y, &layout)?;
        if v_l < v_g {
            exceptions.push(draw);
        }
        // β̄: mean same-piece inner product of this draw.
        let beta: f64 = (0..cfg.k)
            .map(|l| {
                let lo = l * cfg.piece_size;
                x[lo..lo + cfg.piece_size]
                    .iter()
                    .zip(&y[lo..lo + cfg.piece_size])
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .sum::<f64>()
            / cfg.k as f64;
        let approx =
            (cfg.k * cfg.k) as f64 / cfg.memory_m as f64 * (cfg.alpha * cfg.alpha + beta * beta);
        residual_sum += v_g - approx;
        rows.push(GapDraw {
            layout_id: draw,
            v_g,
            v_l,
        });
    }
    let summary = GapSummary {
        draws: cfg.draws,
        frac_vl_ge_vg: (cfg.draws - exceptions.len()) as f64 / cfg.draws as f64,
        exceptions,
        mean_vg_approx_residual: residual_sum / cfg.draws as f64,
    };
    Ok((rows, summary))
}

fn random_fractions<R: Rng>(rng: &mut R, k: usize, m: usize) -> Vec<f64> {
    loop {
        // Dirichlet(1,…,1) via normalized Exp(1) draws.
        let draws: Vec<f64> = (0..k).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
        let total: f64 = draws.iter().sum();
        let fractions: Vec<f64> = draws.iter().map(|d| d / total).collect();
        if fractions.iter().all(|f| (f * m as f64).floor() >= 1.0) {
            return fractions;
        }
    }
}

fn fill_with_norm<R: Rng>(rng: &mut R, out: &mut [f64], target_norm: f64) {
    loop {
        let mut norm2 = 0.0;
        for v in out.iter_mut() {
            *v = gaussian(rng);
            norm2 += *v * *v;
        }
        if norm2 > 0.0 {
            let scale = target_norm / norm2.sqrt();
            out.iter_mut().for_each(|v| *v *= scale);
            return;
        }
    }
}

/// Box–Muller standard normal.
pub(crate) fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let u2: f64 = rng.gen();
        return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    }
}

#[derive(Clone, Debug)]
pub struct NormStudyResult {
    pub global_rate: f64,
    pub local_rate: f64,
    pub trials: usize,
    /// Standard error of the rate difference (independent-proportion model).
    pub diff_std_error: f64,
}

/// Norm-preservation comparison on the same vectors: global hashing of the
/// whole vector into m buckets versus local hashing of k equal pieces into
/// m/k buckets each. A local trial succeeds only when *every* piece estimate
/// lands within ε of its own squared norm, the sufficient condition for the
/// summed estimate to land within ε overall.
pub fn norm_preservation_study(
    n: usize,
    k: usize,
    m: usize,
    epsilon: f64,
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<NormStudyResult> {
    if k == 0 || n == 0 || n % k != 0 {
        return Err(Error::Config(format!("k = {k} must divide n = {n}")));
    }
    if m < k {
        return Err(Error::Config(format!(
            "memory m = {m} cannot give {k} pieces at least one bucket each"
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Config("epsilon must be positive".into()));
    }
    let piece = n / k;
    let piece_mem = {
        let mut mems = vec![m / k; k];
        mems[k - 1] += m - (m / k) * k;
        mems
    };

    let counts = exec.map_chunks(trials, |range| {
        let mut global_ok = 0usize;
        let mut local_ok = 0usize;
        for t in range {
            let trial_seed = mix_seed(seed, t as u64);
            let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(trial_seed, 0xda7a));
            let x: Vec<f64> = (0..n).map(|_| gaussian(&mut rng)).collect();
            let norm2: f64 = x.iter().map(|v| v * v).sum();

            let est = gms_estimate(&x, &x, m, mix_seed(trial_seed, 0x61)).unwrap();
            if (est - norm2).abs() <= epsilon * norm2 {
                global_ok += 1;
            }

            let mut all = true;
            for l in 0..k {
                let lo = l * piece;
                let xs = &x[lo..lo + piece];
                let piece_norm2: f64 = xs.iter().map(|v| v * v).sum();
                let est_l =
                    gms_estimate(xs, xs, piece_mem[l], mix_seed(trial_seed, 0x100 + l as u64))
                        .unwrap();
                if (est_l - piece_norm2).abs() > epsilon * piece_norm2 {
                    all = false;
                    break;
                }
            }
            if all {
                local_ok += 1;
            }
        }
        (global_ok, local_ok)
    });
    let (global_ok, local_ok) = counts
        .into_iter()
        .fold((0, 0), |(g, l), (cg, cl)| (g + cg, l + cl));

    let t = trials as f64;
    let pg = global_ok as f64 / t;
    let pl = local_ok as f64 / t;
    let diff_std_error = ((pg * (1.0 - pg) + pl * (1.0 - pl)) / t).sqrt();
    Ok(NormStudyResult {
        global_rate: pg,
        local_rate: pl,
        trials,
        diff_std_error,
    })
}
