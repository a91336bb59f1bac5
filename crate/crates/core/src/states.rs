//! Test-state constructors (GHZ, W, random isometry grids) and the dense
//! brute-force oracle.
//!
//! GHZ and W use a comb layout: dim-2 horizontal bonds in every row, vertical
//! bonds only in column 0. Raw flag-propagating tensors are orthogonalized
//! exactly by QR sweeps along the comb (row leaves toward the spine, spine
//! upward to (0,0)), so every constructor output passes the grid isometry
//! check to machine precision. Random grids draw complex Gaussian tensors and
//! orthonormalize them over the incoming legs directly; bond dims are capped
//! so that every site admits an exact isometry.

use std::collections::HashMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::IsoTnsGrid;
use crate::tensor::{contract, qr_split, C64, DenseTensor};

/// Dense-oracle size guard (amplitude count).
pub const ORACLE_LIMIT: u64 = 1 << 20;

/// Full coefficient vector of a grid state, row-major over sites with site
/// (0,0) most significant.
#[derive(Clone, Debug)]
pub struct DenseState {
    pub amplitudes: Vec<C64>,
    pub phys_dim: usize,
    pub n_sites: usize,
}

impl DenseState {
    pub fn norm(&self) -> f64 {
        self.amplitudes
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn prob(&self, config: &[usize]) -> f64 {
        self.amplitudes[self.index_of(config)].norm_sqr()
    }

    pub fn index_of(&self, config: &[usize]) -> usize {
        config.iter().fold(0, |acc, &s| acc * self.phys_dim + s)
    }

    pub fn config_of(&self, mut index: usize) -> Vec<usize> {
        let mut config = vec![0; self.n_sites];
        for slot in config.iter_mut().rev() {
            *slot = index % self.phys_dim;
            index /= self.phys_dim;
        }
        config
    }
}

/// GHZ state (|0…0⟩ + |1…1⟩)/√2 on an L×L lattice; all bonds dim ≤ 2.
pub fn ghz_grid(l: usize) -> Result<IsoTnsGrid> {
    if l == 0 {
        return Err(Error::InvalidState("L must be >= 1".into()));
    }
    let mut sites = Vec::with_capacity(l * l);
    for i in 0..l {
        for j in 0..l {
            let du = if j == 0 && i > 0 { 2 } else { 1 };
            let dd = if j == 0 && i + 1 < l { 2 } else { 1 };
            let dl = if j > 0 { 2 } else { 1 };
            let dr = if j + 1 < l { 2 } else { 1 };
            let amp = if i == 0 && j == 0 {
                C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0)
            } else {
                C64::new(1.0, 0.0)
            };
            let dims = [1, du, dd, dl, dr];
            let t = DenseTensor::from_fn(
                vec!["p", "u", "d", "l", "r"],
                vec![2, du, dd, dl, dr],
                |idx| {
                    // Delta over the physical leg and every nontrivial bond.
                    let mut vals = vec![idx[0]];
                    for (ax, &d) in dims.iter().enumerate() {
                        if d > 1 {
                            vals.push(idx[ax]);
                        }
                    }
                    if vals.windows(2).all(|w| w[0] == w[1]) {
                        amp
                    } else {
                        C64::new(0.0, 0.0)
                    }
                },
            )?;
            sites.push(t);
        }
    }
    IsoTnsGrid::new(sites, l, l, 2)
}

/// W state: uniform superposition of all single-excitation configurations
/// with amplitude 1/L on an L×L lattice; all bonds dim ≤ 2.
pub fn w_grid(l: usize) -> Result<IsoTnsGrid> {
    if l == 0 {
        return Err(Error::InvalidState("L must be >= 1".into()));
    }
    let coeff = C64::new(1.0 / l as f64, 0.0);
    let mut sites = Vec::with_capacity(l * l);
    for i in 0..l {
        for j in 0..l {
            // Bond indices count excitations: horizontal bonds count the row
            // suffix to the right, the column-0 vertical bonds count all rows
            // at or below the site. Counts saturate at 1.
            let du = if j == 0 && i > 0 { 2 } else { 1 };
            let dd = if j == 0 && i + 1 < l { 2 } else { 1 };
            let dl = if j > 0 { 2 } else { 1 };
            let dr = if j + 1 < l { 2 } else { 1 };
            let t = DenseTensor::from_fn(
                vec!["p", "u", "d", "l", "r"],
                vec![2, du, dd, dl, dr],
                |idx| {
                    let (p, u, d, lc, r) = (idx[0], idx[1], idx[2], idx[3], idx[4]);
                    let ok = if j == 0 {
                        // Spine site: count flowing up is everything below
                        // plus this row (carried in via r) plus this site.
                        let total = d + r + p;
                        if i == 0 {
                            u == 0 && total == 1
                        } else {
                            total <= 1 && u == total
                        }
                    } else {
                        // Row site: count flowing left is the suffix count
                        // plus this site's occupation.
                        let total = r + p;
                        total <= 1 && lc == total
                    };
                    if ok {
                        if i == 0 && j == 0 {
                            coeff
                        } else {
                            C64::new(1.0, 0.0)
                        }
                    } else {
                        C64::new(0.0, 0.0)
                    }
                },
            )?;
            sites.push(t);
        }
    }
    let sites = comb_canonicalize(sites, l, l)?;
    IsoTnsGrid::new(sites, l, l, 2)
}

/// Exact QR orthogonalization of a comb grid (vertical bonds only in column
/// 0): sweeps each row right-to-left into the spine, then the spine bottom-up
/// into (0,0), and finally normalizes the center. Preserves the state.
fn comb_canonicalize(
    mut sites: Vec<DenseTensor>,
    rows: usize,
    cols: usize,
) -> Result<Vec<DenseTensor>> {
    let idx = |i: usize, j: usize| i * cols + j;
    for i in 0..rows {
        for j in (1..cols).rev() {
            let t = sites[idx(i, j)].squeezed("u")?;
            let (q, rest) = qr_split(&t, &["p", "d", "r"], "b")?;
            sites[idx(i, j)] = q
                .renamed("b", "l")?
                .with_unit_leg("u", 1)?
                .permuted(&["p", "u", "d", "l", "r"])?;
            sites[idx(i, j - 1)] = contract(&sites[idx(i, j - 1)], &rest, &[("r", "l")])?
                .renamed("b", "r")?
                .permuted(&["p", "u", "d", "l", "r"])?;
        }
    }
    for i in (1..rows).rev() {
        let t = sites[idx(i, 0)].squeezed("l")?;
        let (q, rest) = qr_split(&t, &["p", "d", "r"], "b")?;
        sites[idx(i, 0)] = q
            .renamed("b", "u")?
            .with_unit_leg("l", 3)?
            .permuted(&["p", "u", "d", "l", "r"])?;
        sites[idx(i - 1, 0)] = contract(&sites[idx(i - 1, 0)], &rest, &[("d", "u")])?
            .renamed("b", "d")?
            .permuted(&["p", "u", "d", "l", "r"])?;
    }
    let n = sites[0].norm();
    if n <= 0.0 {
        return Err(Error::ZeroNorm);
    }
    sites[0] = sites[0].scaled(C64::new(1.0 / n, 0.0));
    Ok(sites)
}

/// Random normalized isoTNS: every non-center tensor is an exact isometry
/// obtained by QR-orthonormalizing a seeded complex Gaussian over the
/// incoming legs. Bond dims are capped at `chi` and at the capacity bound
/// l·u ≤ d·down·right required for an exact isometry. Deterministic in seed.
pub fn random_grid(l: usize, chi: usize, seed: u64) -> Result<IsoTnsGrid> {
    random_grid_rect(l, l, chi, seed)
}

/// Rectangular variant of [`random_grid`] (1×L and L×1 grids included).
pub fn random_grid_rect(rows: usize, cols: usize, chi: usize, seed: u64) -> Result<IsoTnsGrid> {
    if rows == 0 || cols == 0 || chi == 0 {
        return Err(Error::InvalidState("rows, cols and chi must be >= 1".into()));
    }
    let d = 2usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // h[i][j]: bond between (i,j) and (i,j+1); v[i][j]: bond (i,j)-(i+1,j).
    let mut h = vec![vec![1usize; cols]; rows];
    let mut v = vec![vec![1usize; cols]; rows];
    for i in (0..rows).rev() {
        for j in (0..cols).rev() {
            if i == 0 && j == 0 {
                continue;
            }
            let dd = if i + 1 < rows { v[i][j] } else { 1 };
            let dr = if j + 1 < cols { h[i][j] } else { 1 };
            let cap = d * dd * dr;
            if j == 0 {
                v[i - 1][j] = cap.min(chi);
            } else if i == 0 {
                h[i][j - 1] = cap.min(chi);
            } else {
                let du = (cap as f64).sqrt().floor() as usize;
                let du = du.clamp(1, chi);
                v[i - 1][j] = du;
                h[i][j - 1] = (cap / du).min(chi);
            }
        }
    }
    let mut sites = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let du = if i > 0 { v[i - 1][j] } else { 1 };
            let dd = if i + 1 < rows { v[i][j] } else { 1 };
            let dl = if j > 0 { h[i][j - 1] } else { 1 };
            let dr = if j + 1 < cols { h[i][j] } else { 1 };
            let n = d * du * dd * dl * dr;
            let data: Vec<C64> = (0..n)
                .map(|_| {
                    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
                })
                .collect();
            let raw = DenseTensor::new(
                vec!["p", "u", "d", "l", "r"],
                vec![d, du, dd, dl, dr],
                data,
            )?;
            if i == 0 && j == 0 {
                let norm = raw.norm();
                sites.push(raw.scaled(C64::new(1.0 / norm, 0.0)));
            } else {
                // Orthonormalize over the incoming legs; the capacity cap
                // guarantees the QR bond has the full outgoing dim du*dl.
                let (q, _) = qr_split(&raw, &["p", "d", "r"], "b")?;
                let site = q
                    .split_leg("b", "u", du, "l", dl)?
                    .permuted(&["p", "u", "d", "l", "r"])?;
                sites.push(site);
            }
        }
    }
    IsoTnsGrid::new(sites, rows, cols, d)
}

/// Brute-force contraction of the whole grid into a coefficient vector.
pub fn to_dense(g: &IsoTnsGrid) -> Result<DenseState> {
    let n_sites = g.rows() * g.cols();
    let required = (g.phys_dim() as u128).checked_pow(n_sites as u32);
    match required {
        Some(n) if n <= ORACLE_LIMIT as u128 => {}
        _ => {
            return Err(Error::OracleTooLarge {
                required: required.unwrap_or(u128::MAX),
                limit: ORACLE_LIMIT,
            })
        }
    }
    let mut acc = DenseTensor::new(vec!["r"], vec![1], vec![C64::new(1.0, 0.0)])?;
    let mut phys_labels = Vec::with_capacity(n_sites);
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let n = i * g.cols() + j;
            let pname = format!("s{n}");
            let dname = format!("c{j}");
            let mut site = g.site(i, j).renamed("p", &pname)?.renamed("d", "_d")?;
            if i == 0 {
                site = site.squeezed("u")?;
            }
            let pairs: Vec<(&str, &str)> = if i == 0 {
                vec![("r", "l")]
            } else {
                vec![("r", "l"), (dname.as_str(), "u")]
            };
            acc = contract(&acc, &site, &pairs)?.renamed("_d", &dname)?;
            phys_labels.push(pname);
        }
    }
    for j in 0..g.cols() {
        acc = acc.squeezed(&format!("c{j}"))?;
    }
    acc = acc.squeezed("r")?;
    let order: Vec<&str> = phys_labels.iter().map(|s| s.as_str()).collect();
    acc = acc.permuted(&order)?;
    Ok(DenseState {
        amplitudes: acc.data().to_vec(),
        phys_dim: g.phys_dim(),
        n_sites,
    })
}

/// Exact Born-rule probabilities of every configuration.
pub fn oracle_distribution(s: &DenseState) -> Vec<f64> {
    s.amplitudes.iter().map(|z| z.norm_sqr()).collect()
}

/// Exact top-k by full sort; ties broken by configuration index ascending.
pub fn oracle_top_k(s: &DenseState, k: usize) -> (Vec<Vec<usize>>, Vec<f64>) {
    let probs = oracle_distribution(s);
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .expect("probabilities are finite")
            .then(a.cmp(&b))
    });
    order.truncate(k);
    (
        order.iter().map(|&i| s.config_of(i)).collect(),
        order.iter().map(|&i| probs[i]).collect(),
    )
}

/// KL divergence Σ p_emp ln(p_emp/p) over the support of the empirical table.
/// Returns +∞ if the empirical table puts mass where the reference is zero.
pub fn kl_divergence(
    emp: &HashMap<Vec<usize>, f64>,
    reference: impl Fn(&[usize]) -> f64,
) -> f64 {
    // Sum in sorted key order so results are reproducible bit for bit.
    let mut entries: Vec<(&Vec<usize>, f64)> = emp.iter().map(|(c, &p)| (c, p)).collect();
    entries.sort_by(|a, b| a.0.cmp(b.0));
    let mut kl = 0.0;
    for (config, pe) in entries {
        if pe <= 0.0 {
            continue;
        }
        let p = reference(config);
        if p <= 0.0 {
            return f64::INFINITY;
        }
        kl += pe * (pe / p).ln();
    }
    kl
}

/// Analytic GHZ reference distribution on n sites.
pub fn ghz_reference(n_sites: usize) -> impl Fn(&[usize]) -> f64 {
    move |config: &[usize]| {
        debug_assert_eq!(config.len(), n_sites);
        if config.iter().all(|&s| s == 0) || config.iter().all(|&s| s == 1) {
            0.5
        } else {
            0.0
        }
    }
}

/// Analytic W reference distribution on n sites.
pub fn w_reference(n_sites: usize) -> impl Fn(&[usize]) -> f64 {
    move |config: &[usize]| {
        debug_assert_eq!(config.len(), n_sites);
        if config.iter().sum::<usize>() == 1 {
            1.0 / n_sites as f64
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ghz_l2_dense_amplitudes() {
        let g = ghz_grid(2).unwrap();
        let s = to_dense(&g).unwrap();
        assert_eq!(s.amplitudes.len(), 16);
        for (i, a) in s.amplitudes.iter().enumerate() {
            let expect = if i == 0 || i == 15 {
                std::f64::consts::FRAC_1_SQRT_2
            } else {
                0.0
            };
            assert_abs_diff_eq!(a.re, expect, epsilon = 1e-12);
            assert_abs_diff_eq!(a.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ghz_l1_is_plus_state() {
        let g = ghz_grid(1).unwrap();
        let s = to_dense(&g).unwrap();
        assert_eq!(s.amplitudes.len(), 2);
        for a in &s.amplitudes {
            assert_abs_diff_eq!(a.re, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        }
    }

    #[test]
    fn ghz_l3_validates() {
        let report = ghz_grid(3).unwrap().validate();
        assert!(report.max_residual() < 1e-12, "{}", report.max_residual());
        assert_abs_diff_eq!(report.center_norm, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn w_l2_dense_amplitudes() {
        let g = w_grid(2).unwrap();
        let s = to_dense(&g).unwrap();
        for (i, a) in s.amplitudes.iter().enumerate() {
            let weight = (i as u32).count_ones();
            let expect = if weight == 1 { 0.5 } else { 0.0 };
            assert_abs_diff_eq!(a.norm(), expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn w_l1_is_excited_state() {
        let g = w_grid(1).unwrap();
        let s = to_dense(&g).unwrap();
        assert_abs_diff_eq!(s.amplitudes[0].norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.amplitudes[1].norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn w_l3_has_nine_equal_peaks() {
        let g = w_grid(3).unwrap();
        let report = g.validate();
        assert!(report.max_residual() < 1e-10, "{}", report.max_residual());
        let s = to_dense(&g).unwrap();
        let mut nonzero = 0;
        for (i, a) in s.amplitudes.iter().enumerate() {
            if (i as u32).count_ones() == 1 {
                assert_abs_diff_eq!(a.norm(), 1.0 / 3.0, epsilon = 1e-12);
                nonzero += 1;
            } else {
                assert!(a.norm() < 1e-12);
            }
        }
        assert_eq!(nonzero, 9);
    }

    #[test]
    fn w_bond_dims_at_most_two() {
        let g = w_grid(4).unwrap();
        for s in g.sites() {
            assert!(s.dims().iter().all(|&d| d <= 2));
        }
    }

    #[test]
    fn random_grid_chi1_is_product_state() {
        let g = random_grid(3, 1, 11).unwrap();
        for s in g.sites() {
            assert_eq!(&s.dims()[1..], &[1, 1, 1, 1]);
        }
        assert!(g.validate().passes());
    }

    #[test]
    fn random_grid_normalized_and_deterministic() {
        let a = random_grid(3, 4, 7).unwrap();
        let b = random_grid(3, 4, 7).unwrap();
        for (x, y) in a.sites().iter().zip(b.sites()) {
            assert_eq!(x, y);
        }
        let s = to_dense(&a).unwrap();
        assert_abs_diff_eq!(s.norm(), 1.0, epsilon = 1e-12);
        let report = a.validate();
        assert!(report.max_residual() < 1e-12, "{}", report.max_residual());
    }

    #[test]
    fn random_grid_is_statistically_nondegenerate() {
        let mut good = 0;
        for seed in 0..10 {
            let g = random_grid(3, 4, seed).unwrap();
            let s = to_dense(&g).unwrap();
            let spread = oracle_distribution(&s)
                .iter()
                .filter(|&&p| p > 1e-6)
                .count();
            if spread > 512 / 4 {
                good += 1;
            }
        }
        assert!(good >= 9, "only {good}/10 seeds nondegenerate");
    }

    #[test]
    fn to_dense_product_grid_is_basis_vector() {
        let site = DenseTensor::from_fn(
            vec!["p", "u", "d", "l", "r"],
            vec![2, 1, 1, 1, 1],
            |idx| C64::new(if idx[0] == 0 { 1.0 } else { 0.0 }, 0.0),
        )
        .unwrap();
        let g = IsoTnsGrid::new(vec![site; 4], 2, 2, 2).unwrap();
        let s = to_dense(&g).unwrap();
        assert_abs_diff_eq!(s.amplitudes[0].re, 1.0, epsilon = 1e-14);
        for a in &s.amplitudes[1..] {
            assert!(a.norm() < 1e-14);
        }
    }

    #[test]
    fn oracle_distribution_and_top_k() {
        let g = w_grid(2).unwrap();
        let s = to_dense(&g).unwrap();
        let dist = oracle_distribution(&s);
        assert_abs_diff_eq!(dist.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let (configs, probs) = oracle_top_k(&s, 4);
        assert_eq!(configs.len(), 4);
        for (c, p) in configs.iter().zip(&probs) {
            assert_eq!(c.iter().sum::<usize>(), 1);
            assert_abs_diff_eq!(*p, 0.25, epsilon = 1e-12);
        }
        // Tie-break: ascending configuration index among exactly equal
        // probabilities (synthetic state; constructor amplitudes can differ
        // at the last ulp).
        let tied = DenseState {
            amplitudes: vec![
                C64::new(0.5, 0.0),
                C64::new(0.5, 0.0),
                C64::new(0.5, 0.0),
                C64::new(0.5, 0.0),
            ],
            phys_dim: 2,
            n_sites: 2,
        };
        let (tc, _) = oracle_top_k(&tied, 2);
        assert_eq!(tc, vec![vec![0, 0], vec![0, 1]]);
    }

    #[test]
    fn kl_divergence_basics() {
        let mut emp = HashMap::new();
        emp.insert(vec![0], 0.5);
        emp.insert(vec![1], 0.5);
        let same = |c: &[usize]| if c[0] == 0 { 0.5 } else { 0.5 };
        assert_abs_diff_eq!(kl_divergence(&emp, same), 0.0, epsilon = 1e-15);
        let skewed = |c: &[usize]| if c[0] == 0 { 0.25 } else { 0.75 };
        let expect = 0.5 * 2.0_f64.ln() + 0.5 * (2.0_f64 / 3.0).ln();
        assert_abs_diff_eq!(kl_divergence(&emp, skewed), expect, epsilon = 1e-12);
        assert_abs_diff_eq!(expect, 0.14384, epsilon = 1e-5);
        let zero = |c: &[usize]| if c[0] == 0 { 1.0 } else { 0.0 };
        assert!(kl_divergence(&emp, zero).is_infinite());
    }

    #[test]
    fn references_match_constructors() {
        let g = to_dense(&ghz_grid(2).unwrap()).unwrap();
        let r = ghz_reference(4);
        for i in 0..16 {
            let c = g.config_of(i);
            assert_abs_diff_eq!(g.prob(&c), r(&c), epsilon = 1e-12);
        }
        let w = to_dense(&w_grid(2).unwrap()).unwrap();
        let r = w_reference(4);
        for i in 0..16 {
            let c = w.config_of(i);
            assert_abs_diff_eq!(w.prob(&c), r(&c), epsilon = 1e-12);
        }
    }
}
