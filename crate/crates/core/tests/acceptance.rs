//! End-to-end acceptance suite. Each test exercises one acceptance criterion
//! at its pinned tolerance and prints a single `criterion N: PASS`/`FAIL`
//! line (visible with `--nocapture`; cargo's own pass/fail output mirrors it).

use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use isotns_sampler::grid::{contract_row_into_next, sample_row, CachedSampler, IsoTnsGrid};
use isotns_sampler::harness::{
    self, default_schedule, ExperimentConfig, StateKind,
};
use isotns_sampler::states::{
    ghz_grid, ghz_reference, oracle_distribution, random_grid, random_grid_rect, to_dense,
    w_grid, w_reference,
};
use isotns_sampler::tensor::SvdTruncation;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn report(n: usize, detail: &str, body: impl FnOnce()) {
    let outcome = catch_unwind(AssertUnwindSafe(body));
    match &outcome {
        Ok(()) if detail.is_empty() => println!("criterion {n}: PASS"),
        Ok(()) => println!("criterion {n}: PASS ({detail})"),
        Err(_) => println!("criterion {n}: FAIL"),
    }
    if let Err(e) = outcome {
        resume_unwind(e);
    }
}

/// Criterion 1: on seeded random 3x3 grids with the bond cap above every
/// exact contraction rank, each sampled probability matches the dense oracle
/// to 1e-10 relative and all row errors stay below 1e-12; under one minute.
#[test]
fn criterion_1_sampling_matches_dense_oracle() {
    report(1, "", || {
        let start = Instant::now();
        let trunc = SvdTruncation::max_rank(64).unwrap();
        for seed in 0..10u64 {
            let g = random_grid(3, 4, seed).unwrap();
            let oracle = to_dense(&g).unwrap();
            let mut sampler = CachedSampler::new(&g, trunc).unwrap();
            for idx in 0..300u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed * 100_000 + idx);
                let s = sampler.sample(&mut rng).unwrap();
                let q = oracle.prob(&s.config);
                assert!(
                    (s.prob - q).abs() <= 1e-10 * q,
                    "seed {seed}: prob {} vs oracle {q}",
                    s.prob
                );
                for &e in &s.row_errors {
                    assert!(e < 1e-12, "seed {seed}: row error {e}");
                }
            }
        }
        assert!(start.elapsed().as_secs_f64() < 60.0, "took too long");
    });
}

/// Criterion 2: GHZ and W on 8x8, 10 trials, N from 1e2 to 1e5: the log-log
/// slope of the median KL against N sits in [-1.2, -0.8]; under ten minutes.
#[test]
fn criterion_2_monte_carlo_rate_on_8x8() {
    let mut slopes = (f64::NAN, f64::NAN);
    report(2, "", || {
        let start = Instant::now();
        for state in [StateKind::Ghz, StateKind::W] {
            let cfg = ExperimentConfig {
                state,
                l: 8,
                chi: 2,
                seed: 0,
                n_samples: default_schedule(),
                n_trials: 10,
                k: 1,
            };
            let rec = harness::run_convergence(&cfg).unwrap();
            let slope = rec.loglog_slope();
            match state {
                StateKind::Ghz => slopes.0 = slope,
                _ => slopes.1 = slope,
            }
            assert!(
                (-1.2..=-0.8).contains(&slope),
                "{} slope {slope}",
                state.name()
            );
        }
        let elapsed = start.elapsed().as_secs_f64();
        assert!(elapsed < 600.0, "took {elapsed} s");
    });
}

/// Criterion 3: on a random 3x3 grid, the chi=2 KL curve plateaus above the
/// full-rank curve at N=1e5 while the full-rank curve keeps its Monte-Carlo
/// slope in [-1.2, -0.8].
#[test]
fn criterion_3_truncation_plateau() {
    report(3, "", || {
        let g = random_grid(3, 4, 5).unwrap();
        let oracle = to_dense(&g).unwrap();
        let reference = |c: &[usize]| oracle.prob(c);
        let schedule = default_schedule();
        let full = SvdTruncation::max_rank(64).unwrap();
        let low = SvdTruncation::max_rank(2).unwrap();
        let pts_full =
            harness::convergence_trials(&g, full, &reference, &schedule, 10, 3).unwrap();
        let pts_low = harness::convergence_trials(&g, low, &reference, &schedule, 10, 3).unwrap();
        let med_full = harness::median_points(&pts_full, &schedule);
        let med_low = harness::median_points(&pts_low, &schedule);
        let last_full = med_full.last().unwrap();
        let last_low = med_low.last().unwrap();
        assert!(
            last_low.median_kl > last_full.median_kl,
            "chi=2 KL {} vs full-rank KL {} at N={}",
            last_low.median_kl,
            last_full.median_kl,
            last_full.n
        );
        let pts: Vec<(f64, f64)> = med_full
            .iter()
            .filter(|m| m.median_kl > 0.0)
            .map(|m| ((m.n as f64).ln(), m.median_kl.ln()))
            .collect();
        let slope = harness::least_squares_slope(&pts);
        assert!((-1.2..=-0.8).contains(&slope), "full-rank slope {slope}");
    });
}

fn topk_kl(grid: &IsoTnsGrid, k: usize, reference: impl Fn(&[usize]) -> f64) -> f64 {
    // Bond dimension 2 is exact for both GHZ and W constructions.
    let res = grid.top_k(k, &SvdTruncation::max_rank(2).unwrap()).unwrap();
    let mut kl = 0.0;
    for (config, &p) in res.configs.iter().zip(&res.probs) {
        let q = reference(config);
        assert!(q > 0.0, "returned a zero-probability configuration");
        kl += p * (p / q).ln();
    }
    kl
}

/// Criterion 4: greedy search recovers the exact distributions — GHZ with
/// K=2 for L in {2,4,8,16} and W with K=L^2 for L in {2..8} — with KL below
/// 1e-12.
#[test]
fn criterion_4_top_k_exactness_ghz_w() {
    report(4, "", || {
        for l in [2usize, 4, 8, 16] {
            let g = ghz_grid(l).unwrap();
            let kl = topk_kl(&g, 2, ghz_reference(l * l));
            assert!(kl.abs() < 1e-12, "GHZ L={l}: KL {kl}");
        }
        for l in 2usize..=8 {
            let g = w_grid(l).unwrap();
            let kl = topk_kl(&g, l * l, w_reference(l * l));
            assert!(kl.abs() < 1e-12, "W L={l}: KL {kl}");
        }
    });
}

/// Criterion 5: top-10 on a random 3x3 grid at full rank returns
/// probabilities matching the dense oracle to 1e-10 relative; the recall of
/// the oracle's own top 10 is reported (not asserted).
#[test]
fn criterion_5_top_k_probability_exactness() {
    let mut recall = f64::NAN;
    let body = |out: &mut f64| {
        let cfg = ExperimentConfig {
            state: StateKind::Random,
            l: 3,
            chi: 64,
            seed: 7,
            n_samples: vec![1],
            n_trials: 1,
            k: 10,
        };
        let rec = harness::run_topk(&cfg).unwrap();
        for (p, q) in rec.probs.iter().zip(&rec.reference_probs) {
            assert!((p - q).abs() <= 1e-10 * q, "prob {p} vs oracle {q}");
        }
        *out = rec.recall.expect("oracle recall for random states");
    };
    let outcome = catch_unwind(AssertUnwindSafe(|| body(&mut recall)));
    match &outcome {
        Ok(()) => println!("criterion 5: PASS (recall {recall})"),
        Err(_) => println!("criterion 5: FAIL"),
    }
    if let Err(e) = outcome {
        resume_unwind(e);
    }
}

/// Criterion 6: sweeping the zip-up bond cap on a random 3x3 top-10 search,
/// the summed L1 probability error is below 1e-10 at full rank (with zero
/// recorded row error) and at least 10x larger at chi=1.
#[test]
fn criterion_6_error_vs_chi_trend() {
    report(6, "", || {
        let g = random_grid(3, 4, 11).unwrap();
        let oracle = to_dense(&g).unwrap();
        let mut l1 = Vec::new();
        let mut err_sums = Vec::new();
        // Zip-up bonds multiply two construction bonds, so full rank is 16.
        for chi in 1..=16usize {
            let res = g.top_k(10, &SvdTruncation::max_rank(chi).unwrap()).unwrap();
            let e: f64 = res
                .configs
                .iter()
                .zip(&res.probs)
                .map(|(c, &p)| (p - oracle.prob(c)).abs())
                .sum();
            l1.push(e);
            err_sums.push(res.row_errors.iter().sum::<f64>());
        }
        let full = *l1.last().unwrap();
        assert!(full < 1e-10, "full-rank L1 {full}");
        assert!(
            *err_sums.last().unwrap() < 1e-12,
            "full-rank row errors {}",
            err_sums.last().unwrap()
        );
        assert!(l1[0] >= 10.0 * full, "chi=1 L1 {} vs full {full}", l1[0]);
        assert!(l1[0] > 0.0);
    });
}

fn strip_wall_time(csv: &[u8]) -> Vec<u8> {
    let text = std::str::from_utf8(csv).unwrap();
    text.lines()
        .filter(|l| !l.starts_with("# wall_time_s"))
        .flat_map(|l| l.bytes().chain([b'\n']))
        .collect()
}

/// Criterion 7: invariants — constructor outputs validate to 1e-10; moving
/// the MPS orthogonality center preserves the state to 1e-12; the zip-up's
/// recorded truncation error tracks the dense difference within a factor of
/// 2 on 3-wide rows; represented distributions are normalized to 1e-10; and
/// experiment reruns are byte-identical.
#[test]
fn criterion_7_invariant_suite() {
    report(7, "", || {
        // Constructor isometry residuals.
        let mut grids: Vec<IsoTnsGrid> = vec![];
        for l in [2usize, 4, 8] {
            grids.push(ghz_grid(l).unwrap());
            grids.push(w_grid(l).unwrap());
        }
        for seed in 0..3u64 {
            grids.push(random_grid(3, 4, seed).unwrap());
        }
        grids.push(random_grid_rect(1, 6, 3, 2).unwrap());
        grids.push(random_grid_rect(2, 5, 3, 9).unwrap());
        for g in &grids {
            let rep = g.validate();
            assert!(rep.passes(), "residual {}", rep.max_residual());
        }

        // QR center shifts preserve the state exactly.
        let chain = random_grid_rect(1, 6, 3, 17)
            .unwrap()
            .first_row()
            .unwrap()
            .to_mps(2)
            .unwrap();
        let base = chain.to_statevector().unwrap();
        for center in 0..chain.len() {
            let moved = chain.canonicalized(center).unwrap();
            assert!(moved.canonical_residual().unwrap() < 1e-10);
            let v = moved.to_statevector().unwrap();
            let diff: f64 = base
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(diff < 1e-12, "center {center}: diff {diff}");
        }

        // Zip-up error bookkeeping vs the dense difference on 3-wide rows.
        let g = random_grid(3, 4, 19).unwrap();
        let row = g.first_row().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (_, _, projected) = sample_row(&row, &mut rng).unwrap();
        let next = &g.sites()[3..6];
        let (exact, e0) =
            contract_row_into_next(&projected, next, &SvdTruncation::none()).unwrap();
        assert!(e0 < 1e-12);
        let (approx, err) =
            contract_row_into_next(&projected, next, &SvdTruncation::max_rank(1).unwrap())
                .unwrap();
        assert!(err > 0.0);
        let exact = exact.to_dense().unwrap();
        let approx = approx.to_dense().unwrap();
        let order: Vec<String> = exact.labels().iter().map(|l| l.to_string()).collect();
        let order: Vec<&str> = order.iter().map(|s| s.as_str()).collect();
        let approx = approx.permuted(&order).unwrap();
        let diff: f64 = exact
            .data()
            .iter()
            .zip(approx.data())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(
            err / diff < 2.0 && diff / err < 2.0,
            "err {err} vs dense diff {diff}"
        );

        // Represented distributions are normalized.
        for g in [ghz_grid(3).unwrap(), w_grid(3).unwrap(), random_grid(3, 4, 1).unwrap()] {
            let total: f64 = oracle_distribution(&to_dense(&g).unwrap()).iter().sum();
            assert!((total - 1.0).abs() < 1e-10, "total probability {total}");
        }

        // Byte-identical reruns (modulo the wall-time comment line).
        let conv_cfg = ExperimentConfig {
            state: StateKind::Ghz,
            l: 4,
            chi: 2,
            seed: 2,
            n_samples: vec![100, 400],
            n_trials: 3,
            k: 1,
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        harness::write_convergence_csv(&harness::run_convergence(&conv_cfg).unwrap(), &mut a)
            .unwrap();
        harness::write_convergence_csv(&harness::run_convergence(&conv_cfg).unwrap(), &mut b)
            .unwrap();
        assert_eq!(strip_wall_time(&a), strip_wall_time(&b));

        let topk_cfg = ExperimentConfig {
            state: StateKind::Random,
            l: 3,
            chi: 8,
            seed: 13,
            n_samples: vec![1],
            n_trials: 1,
            k: 5,
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        harness::write_topk_csv(&harness::run_topk(&topk_cfg).unwrap(), &mut a).unwrap();
        harness::write_topk_csv(&harness::run_topk(&topk_cfg).unwrap(), &mut b).unwrap();
        assert_eq!(strip_wall_time(&a), strip_wall_time(&b));
    });
}

/// Criterion 8: on degenerate 1xL grids, grid sampling and the MPS baseline
/// produce identical configurations and probabilities for identical seeds.
#[test]
fn criterion_8_one_row_grid_equals_mps() {
    report(8, "", || {
        for l in [2usize, 4, 8, 16] {
            let g = random_grid_rect(1, l, 3, 40 + l as u64).unwrap();
            let chain = g.first_row().unwrap().to_mps(g.phys_dim()).unwrap();
            let trunc = SvdTruncation::none();
            for seed in 0..25u64 {
                let mut r1 = ChaCha8Rng::seed_from_u64(seed);
                let mut r2 = ChaCha8Rng::seed_from_u64(seed);
                let a = g.sample(&trunc, &mut r1).unwrap();
                let b = chain.sample(&mut r2, None).unwrap();
                assert_eq!(a.config, b.config, "L={l} seed={seed}");
                assert!(
                    (a.prob - b.prob).abs() < 1e-12,
                    "L={l} seed={seed}: {} vs {}",
                    a.prob,
                    b.prob
                );
            }
        }
    });
}
