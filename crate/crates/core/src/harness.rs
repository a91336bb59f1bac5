//! Experiment runner: KL-convergence studies, top-K studies and timing
//! benches, emitting plot-ready CSV or JSON.
//!
//! Determinism contract: every sample draws from its own ChaCha8 stream
//! derived from (seed, trial, sample-index), so parallel and serial runs emit
//! identical data and reruns are byte-identical apart from wall-time lines.

use std::collections::HashMap;
use std::io::Write as IoWrite;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CachedSampler, IsoTnsGrid};
use crate::states::{self, DenseState};
use crate::tensor::SvdTruncation;

pub const CSV_VERSION_HEADER: &str = concat!("# isotns-sampler v", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    Ghz,
    W,
    Random,
}

impl StateKind {
    pub fn name(&self) -> &'static str {
        match self {
            StateKind::Ghz => "ghz",
            StateKind::W => "w",
            StateKind::Random => "random",
        }
    }
}

impl std::str::FromStr for StateKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ghz" => Ok(StateKind::Ghz),
            "w" => Ok(StateKind::W),
            "random" => Ok(StateKind::Random),
            other => Err(Error::InvalidState(format!("unknown state `{other}`"))),
        }
    }
}

/// Parameters shared by all experiment modes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub state: StateKind,
    pub l: usize,
    pub chi: usize,
    pub seed: u64,
    /// Increasing schedule of sample counts (convergence mode).
    pub n_samples: Vec<usize>,
    pub n_trials: usize,
    /// Beam width (top-K mode).
    pub k: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l == 0 || self.chi == 0 {
            return Err(Error::Infeasible("L and chi must be >= 1".into()));
        }
        if self.n_trials == 0 {
            return Err(Error::Infeasible("n_trials must be >= 1".into()));
        }
        if self.n_samples.is_empty() || self.n_samples.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Infeasible(
                "n_samples must be a nonempty increasing schedule".into(),
            ));
        }
        if self.k == 0 {
            return Err(Error::Infeasible("k must be >= 1".into()));
        }
        Ok(())
    }
}

/// Default N schedule: 10 points, geometric from 1e2 to 1e5.
pub fn default_schedule() -> Vec<usize> {
    let mut out = Vec::with_capacity(10);
    for i in 0..10 {
        let n = 100.0 * 1000.0_f64.powf(i as f64 / 9.0);
        let n = n.round() as usize;
        if out.last() != Some(&n) {
            out.push(n);
        }
    }
    out
}

/// One (N, trial) measurement.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub n: usize,
    pub trial: usize,
    pub kl: f64,
    pub sum_row_errors: f64,
}

/// Median and 16th/84th percentiles of KL across trials at one N.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MedianPoint {
    pub n: usize,
    pub median_kl: f64,
    pub p16_kl: f64,
    pub p84_kl: f64,
}

/// Convergence-experiment output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config: ExperimentConfig,
    pub points: Vec<ConvergencePoint>,
    pub medians: Vec<MedianPoint>,
    pub wall_time_s: f64,
}

impl ExperimentRecord {
    /// Least-squares slope of ln(median KL) against ln(N).
    pub fn loglog_slope(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .medians
            .iter()
            .filter(|m| m.median_kl > 0.0)
            .map(|m| ((m.n as f64).ln(), m.median_kl.ln()))
            .collect();
        least_squares_slope(&pts)
    }
}

/// Top-K experiment output; oracle-based fields are present only when the
/// dense oracle is feasible (random states at desk scale).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TopKRecord {
    pub config: ExperimentConfig,
    pub configs: Vec<Vec<usize>>,
    pub probs: Vec<f64>,
    pub row_errors: Vec<f64>,
    /// KL between the returned distribution and the reference over the
    /// returned support.
    pub kl: f64,
    pub reference_probs: Vec<f64>,
    /// Σ |returned − reference| over the returned strings.
    pub l1_error: f64,
    /// Fraction of the oracle top-K recovered (oracle states only).
    pub recall: Option<f64>,
    pub wall_time_s: f64,
}

/// One lattice size in a bench run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchPoint {
    pub l: usize,
    pub times_s: Vec<f64>,
    pub median_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchRecord {
    pub config: ExperimentConfig,
    pub points: Vec<BenchPoint>,
    /// Log-log slope of median time against L.
    pub slope: f64,
}

enum Reference {
    Ghz(usize),
    W(usize),
    Oracle(DenseState),
}

impl Reference {
    fn prob(&self, config: &[usize]) -> f64 {
        match self {
            Reference::Ghz(n) => states::ghz_reference(*n)(config),
            Reference::W(n) => states::w_reference(*n)(config),
            Reference::Oracle(s) => s.prob(config),
        }
    }
}

fn build_grid(cfg: &ExperimentConfig) -> Result<IsoTnsGrid> {
    match cfg.state {
        StateKind::Ghz => states::ghz_grid(cfg.l),
        StateKind::W => states::w_grid(cfg.l),
        StateKind::Random => states::random_grid(cfg.l, cfg.chi, cfg.seed),
    }
}

fn build_reference(cfg: &ExperimentConfig, grid: &IsoTnsGrid) -> Result<Reference> {
    let n_sites = cfg.l * cfg.l;
    Ok(match cfg.state {
        StateKind::Ghz => Reference::Ghz(n_sites),
        StateKind::W => Reference::W(n_sites),
        StateKind::Random => Reference::Oracle(states::to_dense(grid)?),
    })
}

/// Deterministic per-sample stream: parallel and serial runs agree.
fn substream(seed: u64, trial: usize, sample_idx: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((trial as u64) << 44) | sample_idx as u64);
    rng
}

/// Draws the largest scheduled N per trial (trials in parallel), evaluating
/// KL against `reference` at every schedule checkpoint on the sample prefix
/// accumulated so far. Lower-level entry point for callers that need the same
/// grid under several truncation policies; [`run_convergence`] wraps it.
pub fn convergence_trials(
    grid: &IsoTnsGrid,
    trunc: SvdTruncation,
    reference: &(impl Fn(&[usize]) -> f64 + Sync),
    schedule: &[usize],
    n_trials: usize,
    seed: u64,
) -> Result<Vec<ConvergencePoint>> {
    let n_max = *schedule.last().ok_or_else(|| {
        Error::Infeasible("n_samples must be a nonempty increasing schedule".into())
    })?;
    let per_trial: Vec<Vec<ConvergencePoint>> = (0..n_trials)
        .into_par_iter()
        .map(|trial| -> Result<Vec<ConvergencePoint>> {
            let mut sampler = CachedSampler::new(grid, trunc)?;
            let mut counts: HashMap<Vec<usize>, u64> = HashMap::new();
            let mut err_sum = 0.0;
            let mut points = Vec::with_capacity(schedule.len());
            let mut next_checkpoint = 0;
            for idx in 0..n_max {
                let mut rng = substream(seed, trial, idx);
                let s = sampler.sample(&mut rng)?;
                err_sum += s.row_errors.iter().sum::<f64>();
                *counts.entry(s.config).or_insert(0) += 1;
                let n = idx + 1;
                if n == schedule[next_checkpoint] {
                    let emp: HashMap<Vec<usize>, f64> = counts
                        .iter()
                        .map(|(c, &k)| (c.clone(), k as f64 / n as f64))
                        .collect();
                    let kl = states::kl_divergence(&emp, reference);
                    points.push(ConvergencePoint {
                        n,
                        trial,
                        kl,
                        sum_row_errors: err_sum,
                    });
                    next_checkpoint += 1;
                    if next_checkpoint == schedule.len() {
                        break;
                    }
                }
            }
            Ok(points)
        })
        .collect::<Result<_>>()?;

    let mut points: Vec<ConvergencePoint> = Vec::new();
    for trial_points in &per_trial {
        points.extend(trial_points.iter().cloned());
    }
    points.sort_by(|a, b| a.n.cmp(&b.n).then(a.trial.cmp(&b.trial)));
    Ok(points)
}

/// Median and 16/84-percentile KL across trials at each scheduled N.
pub fn median_points(points: &[ConvergencePoint], schedule: &[usize]) -> Vec<MedianPoint> {
    let mut medians = Vec::with_capacity(schedule.len());
    for &n in schedule {
        let mut kls: Vec<f64> = points
            .iter()
            .filter(|p| p.n == n)
            .map(|p| p.kl)
            .collect();
        kls.sort_by(|a, b| a.partial_cmp(b).expect("finite KL"));
        medians.push(MedianPoint {
            n,
            median_kl: percentile(&kls, 0.50),
            p16_kl: percentile(&kls, 0.16),
            p84_kl: percentile(&kls, 0.84),
        });
    }
    medians
}

/// Builds the configured state and runs the KL-convergence experiment.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    cfg.validate()?;
    let start = Instant::now();
    let grid = build_grid(cfg)?;
    let reference = build_reference(cfg, &grid)?;
    let trunc = SvdTruncation::max_rank(cfg.chi)?;
    let points = convergence_trials(
        &grid,
        trunc,
        &|c: &[usize]| reference.prob(c),
        &cfg.n_samples,
        cfg.n_trials,
        cfg.seed,
    )?;
    let medians = median_points(&points, &cfg.n_samples);
    Ok(ExperimentRecord {
        config: cfg.clone(),
        points,
        medians,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Runs the grid top-K search and scores it against the reference.
pub fn run_topk(cfg: &ExperimentConfig) -> Result<TopKRecord> {
    cfg.validate()?;
    let start = Instant::now();
    let grid = build_grid(cfg)?;
    let reference = build_reference(cfg, &grid)?;
    let trunc = SvdTruncation::max_rank(cfg.chi)?;
    let out = grid.top_k(cfg.k, &trunc)?;

    let emp: HashMap<Vec<usize>, f64> = out
        .configs
        .iter()
        .cloned()
        .zip(out.probs.iter().cloned())
        .collect();
    let kl = states::kl_divergence(&emp, |c| reference.prob(c));
    let reference_probs: Vec<f64> = out.configs.iter().map(|c| reference.prob(c)).collect();
    let l1_error: f64 = out
        .probs
        .iter()
        .zip(&reference_probs)
        .map(|(p, q)| (p - q).abs())
        .sum();
    let recall = match &reference {
        Reference::Oracle(s) => {
            let (truth, _) = states::oracle_top_k(s, cfg.k);
            let hits = out.configs.iter().filter(|c| truth.contains(c)).count();
            Some(hits as f64 / truth.len() as f64)
        }
        _ => None,
    };
    Ok(TopKRecord {
        config: cfg.clone(),
        configs: out.configs,
        probs: out.probs,
        row_errors: out.row_errors,
        kl,
        reference_probs,
        l1_error,
        recall,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Times `sample()` at L ∈ {4, 8, 16} (5 runs each) and fits the log-log
/// slope of the median against L.
pub fn run_bench(cfg: &ExperimentConfig) -> Result<BenchRecord> {
    if cfg.chi == 0 {
        return Err(Error::Infeasible("chi must be >= 1".into()));
    }
    let trunc = SvdTruncation::max_rank(cfg.chi)?;
    let mut points = Vec::new();
    for l in [4usize, 8, 16] {
        let mut sized = cfg.clone();
        sized.l = l;
        let grid = build_grid(&sized)?;
        let mut times = Vec::with_capacity(5);
        for run in 0..5 {
            let mut rng = substream(cfg.seed, run, l);
            let t0 = Instant::now();
            grid.sample(&trunc, &mut rng)?;
            times.push(t0.elapsed().as_secs_f64());
        }
        let mut sorted = times.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite time"));
        points.push(BenchPoint {
            l,
            times_s: times,
            median_s: percentile(&sorted, 0.50),
        });
    }
    let pts: Vec<(f64, f64)> = points
        .iter()
        .map(|p| ((p.l as f64).ln(), p.median_s.ln()))
        .collect();
    Ok(BenchRecord {
        config: cfg.clone(),
        slope: least_squares_slope(&pts),
        points,
    })
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Ordinary least-squares slope of y against x.
pub fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

fn config_string(config: &[usize]) -> String {
    config.iter().map(|s| s.to_string()).collect()
}

/// CSV schema: `state,L,chi,N,trial,kl,sum_row_errors`; wall time goes in a
/// trailing comment line so reruns stay byte-identical apart from it.
pub fn write_convergence_csv(record: &ExperimentRecord, out: &mut impl IoWrite) -> Result<()> {
    writeln!(out, "{CSV_VERSION_HEADER}")?;
    writeln!(out, "state,L,chi,N,trial,kl,sum_row_errors")?;
    let c = &record.config;
    for p in &record.points {
        writeln!(
            out,
            "{},{},{},{},{},{:e},{:e}",
            c.state.name(),
            c.l,
            c.chi,
            p.n,
            p.trial,
            p.kl,
            p.sum_row_errors
        )?;
    }
    writeln!(out, "# medians: N,median_kl,p16_kl,p84_kl")?;
    for m in &record.medians {
        writeln!(
            out,
            "# {},{:e},{:e},{:e}",
            m.n, m.median_kl, m.p16_kl, m.p84_kl
        )?;
    }
    writeln!(out, "# wall_time_s {:.3}", record.wall_time_s)?;
    Ok(())
}

/// CSV schema: `state,L,chi,k,rank,config,prob,ref_prob,abs_err` plus summary
/// comment lines.
pub fn write_topk_csv(record: &TopKRecord, out: &mut impl IoWrite) -> Result<()> {
    writeln!(out, "{CSV_VERSION_HEADER}")?;
    writeln!(out, "state,L,chi,k,rank,config,prob,ref_prob,abs_err")?;
    let c = &record.config;
    for (rank, (cfg_str, (p, q))) in record
        .configs
        .iter()
        .map(|x| config_string(x))
        .zip(record.probs.iter().zip(&record.reference_probs))
        .enumerate()
    {
        writeln!(
            out,
            "{},{},{},{},{},{},{:e},{:e},{:e}",
            c.state.name(),
            c.l,
            c.chi,
            c.k,
            rank,
            cfg_str,
            p,
            q,
            (p - q).abs()
        )?;
    }
    writeln!(out, "# kl {:e}", record.kl)?;
    writeln!(out, "# l1_error {:e}", record.l1_error)?;
    writeln!(
        out,
        "# sum_row_errors {:e}",
        record.row_errors.iter().sum::<f64>()
    )?;
    if let Some(r) = record.recall {
        writeln!(out, "# recall {r}")?;
    }
    writeln!(out, "# wall_time_s {:.3}", record.wall_time_s)?;
    Ok(())
}

/// CSV schema: `state,chi,L,run,seconds` plus a slope comment (timings are
/// inherently non-deterministic).
pub fn write_bench_csv(record: &BenchRecord, out: &mut impl IoWrite) -> Result<()> {
    writeln!(out, "{CSV_VERSION_HEADER}")?;
    writeln!(out, "state,chi,L,run,seconds")?;
    let c = &record.config;
    for p in &record.points {
        for (run, t) in p.times_s.iter().enumerate() {
            writeln!(out, "{},{},{},{},{:e}", c.state.name(), c.chi, p.l, run, t)?;
        }
    }
    writeln!(out, "# slope {:.3}", record.slope)?;
    Ok(())
}
