//! Matrix product states: canonical form, perfect sampling, greedy top-K.
//!
//! Site tensors are rank-3 with legs `l` (left bond), `p` (physical) and `r`
//! (right bond); boundary bonds have dimension 1. A chain in canonical form
//! keeps one orthogonality center: sites to its right are right-isometries
//! (contracting with the conjugate over `p`,`r` gives the identity on `l`),
//! sites to its left the mirror image.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{contract, qr_split, C64, DenseTensor};

/// Candidate branch extensions below this joint probability are dropped from
/// top-K selection instead of padding the result with dead strings.
pub const BRANCH_FLOOR: f64 = 1e-15;

/// A sampled conditional below this value would make the 1/sqrt(p) rescale
/// singular; unreachable for normalized states but guarded anyway.
pub(crate) const ZERO_BRANCH_GUARD: f64 = 1e-300;

/// Dense-oracle size guard: refuse to materialize more amplitudes than this.
pub(crate) const ORACLE_LIMIT: u64 = 1 << 20;

/// MPS chain with an orthogonality-center index.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "MpsChainRepr", into = "MpsChainRepr")]
pub struct MpsChain {
    sites: Vec<DenseTensor>,
    ortho_center: usize,
    phys_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct MpsChainRepr {
    sites: Vec<DenseTensor>,
    ortho_center: usize,
    phys_dim: usize,
}

impl From<MpsChain> for MpsChainRepr {
    fn from(m: MpsChain) -> Self {
        MpsChainRepr {
            sites: m.sites,
            ortho_center: m.ortho_center,
            phys_dim: m.phys_dim,
        }
    }
}

impl TryFrom<MpsChainRepr> for MpsChain {
    type Error = Error;
    fn try_from(r: MpsChainRepr) -> Result<Self> {
        MpsChain::new(r.sites, r.ortho_center, r.phys_dim)
    }
}

/// One drawn configuration and its probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpsSample {
    pub config: Vec<usize>,
    pub prob: f64,
}

/// Up to K distinct configurations with probabilities in descending order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopKList {
    pub configs: Vec<Vec<usize>>,
    pub probs: Vec<f64>,
}

impl MpsChain {
    /// Validates bond structure: each site carries legs `(l, p, r)` in that
    /// order, neighbors agree on shared bond dims, boundaries are dim 1.
    pub fn new(sites: Vec<DenseTensor>, ortho_center: usize, phys_dim: usize) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::InvalidState("empty chain".into()));
        }
        if ortho_center >= sites.len() {
            return Err(Error::InvalidState(format!(
                "ortho_center {ortho_center} out of range for {} sites",
                sites.len()
            )));
        }
        for (i, s) in sites.iter().enumerate() {
            if s.labels() != ["l", "p", "r"] {
                return Err(Error::InvalidState(format!(
                    "site {i} legs {:?}, expected [l, p, r]",
                    s.labels()
                )));
            }
            if s.dims()[1] != phys_dim {
                return Err(Error::DimensionMismatch(format!(
                    "site {i} phys dim {} != {phys_dim}",
                    s.dims()[1]
                )));
            }
        }
        if sites[0].dims()[0] != 1 || sites[sites.len() - 1].dims()[2] != 1 {
            return Err(Error::DimensionMismatch("boundary bonds must be dim 1".into()));
        }
        for i in 1..sites.len() {
            if sites[i - 1].dims()[2] != sites[i].dims()[0] {
                return Err(Error::DimensionMismatch(format!(
                    "bond between sites {} and {i}: {} vs {}",
                    i - 1,
                    sites[i - 1].dims()[2],
                    sites[i].dims()[0]
                )));
            }
        }
        Ok(MpsChain {
            sites,
            ortho_center,
            phys_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[DenseTensor] {
        &self.sites
    }

    pub fn ortho_center(&self) -> usize {
        self.ortho_center
    }

    pub fn phys_dim(&self) -> usize {
        self.phys_dim
    }

    /// Moves the orthogonality center to `center`: LQ sweeps right-to-left
    /// for sites above it, QR sweeps left-to-right below it. Represents the
    /// same state; bonds may shrink to their exact rank.
    pub fn canonicalized(&self, center: usize) -> Result<MpsChain> {
        if center >= self.len() {
            return Err(Error::InvalidState(format!(
                "center {center} out of range for {} sites",
                self.len()
            )));
        }
        let mut sites = self.sites.clone();
        for i in (center + 1..sites.len()).rev() {
            let (q, r) = qr_split(&sites[i], &["p", "r"], "b")?;
            sites[i] = q.renamed("b", "l")?.permuted(&["l", "p", "r"])?;
            sites[i - 1] = contract(&sites[i - 1], &r, &[("r", "l")])?.renamed("b", "r")?;
        }
        for i in 0..center {
            let (q, r) = qr_split(&sites[i], &["l", "p"], "b")?;
            sites[i] = q.renamed("b", "r")?;
            sites[i + 1] = contract(&r, &sites[i + 1], &[("r", "l")])?
                .renamed("b", "l")?
                .permuted(&["l", "p", "r"])?;
        }
        MpsChain::new(sites, center, self.phys_dim)
    }

    /// Rescales the center tensor to unit Frobenius norm.
    pub fn normalized(&self) -> Result<MpsChain> {
        let mut sites = self.sites.clone();
        let n = sites[self.ortho_center].norm();
        if n <= 0.0 {
            return Err(Error::ZeroNorm);
        }
        sites[self.ortho_center] = sites[self.ortho_center].scaled(C64::new(1.0 / n, 0.0));
        MpsChain::new(sites, self.ortho_center, self.phys_dim)
    }

    /// Largest isometry residual ‖Q†Q − I‖_F over all non-center sites.
    pub fn canonical_residual(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (i, s) in self.sites.iter().enumerate() {
            if i == self.ortho_center {
                continue;
            }
            let (paired, out_leg): (&[(&str, &str)], &str) = if i > self.ortho_center {
                (&[("p", "p"), ("r", "r")], "l")
            } else {
                (&[("l", "l"), ("p", "p")], "r")
            };
            let sc = s.conj().renamed(out_leg, "x")?;
            let m = contract(&sc, s, paired)?;
            worst = worst.max(identity_residual(&m));
        }
        Ok(worst)
    }

    /// Draws one configuration per the chain rule of conditionals, rescaling
    /// the projected tensor by 1/sqrt(p) at every site. Optional per-site
    /// unitaries rotate the measurement basis.
    pub fn sample(&self, rng: &mut impl Rng, basis: Option<&[DMatrix<C64>]>) -> Result<MpsSample> {
        self.check_sampling_pre(basis)?;
        let mut center = self.sites[0].clone();
        let mut config = Vec::with_capacity(self.len());
        let mut prob = 1.0;
        for i in 0..self.len() {
            let rotated = match basis {
                Some(us) => rotate_phys(&center, &us[i], "p")?,
                None => center.clone(),
            };
            let marg = marginal_over_phys(&rotated, "p")?;
            let sigma = draw_categorical(rng, &marg);
            let p = marg[sigma];
            if p < ZERO_BRANCH_GUARD {
                return Err(Error::ZeroProbabilityBranch { site: i, prob: p });
            }
            config.push(sigma);
            prob *= p;
            let projected = rotated
                .fixed("p", sigma)?
                .scaled(C64::new(1.0 / p.sqrt(), 0.0));
            if i + 1 < self.len() {
                center = contract(&projected, &self.sites[i + 1], &[("r", "l")])?;
            }
        }
        Ok(MpsSample { config, prob })
    }

    /// Greedy beam search for the K most probable configurations. Reported
    /// probabilities are exact for every returned string regardless of K.
    pub fn top_k(&self, k: usize, basis: Option<&[DMatrix<C64>]>) -> Result<TopKList> {
        self.check_sampling_pre(basis)?;
        if k == 0 {
            return Err(Error::InvalidState("k must be >= 1".into()));
        }
        let trivial_env =
            DenseTensor::new(vec!["l", "r"], vec![1, 1], vec![C64::new(1.0, 0.0)])?;
        let mut branches = vec![Branch {
            config: Vec::new(),
            prob: 1.0,
            env: trivial_env,
        }];
        for i in 0..self.len() {
            let mut centers = Vec::with_capacity(branches.len());
            let mut candidates = Vec::new();
            for (parent, b) in branches.iter().enumerate() {
                let center = contract(&b.env, &self.sites[i], &[("r", "l")])?;
                let rotated = match basis {
                    Some(us) => rotate_phys(&center, &us[i], "p")?,
                    None => center,
                };
                let marg = marginal_over_phys(&rotated, "p")?;
                for (sigma, &p) in marg.iter().enumerate() {
                    let joint = b.prob * p;
                    if joint > BRANCH_FLOOR {
                        candidates.push(Candidate {
                            parent,
                            outcome: sigma,
                            prob: joint,
                            cond: p,
                        });
                    }
                }
                centers.push(rotated);
            }
            let selected = select_top_k(candidates, k);
            let mut next = Vec::with_capacity(selected.len());
            for c in selected {
                let env = centers[c.parent]
                    .fixed("p", c.outcome)?
                    .scaled(C64::new(1.0 / c.cond.sqrt(), 0.0));
                let mut config = branches[c.parent].config.clone();
                config.push(c.outcome);
                next.push(Branch {
                    config,
                    prob: c.prob,
                    env,
                });
            }
            if next.is_empty() {
                return Err(Error::InvalidState(
                    "no branch above probability floor".into(),
                ));
            }
            branches = next;
        }
        Ok(TopKList {
            configs: branches.iter().map(|b| b.config.clone()).collect(),
            probs: branches.iter().map(|b| b.prob).collect(),
        })
    }

    /// Full coefficient vector, row-major with site 0 most significant.
    pub fn to_statevector(&self) -> Result<Vec<C64>> {
        let required = (self.phys_dim as u128).checked_pow(self.len() as u32);
        match required {
            Some(n) if n <= ORACLE_LIMIT as u128 => {}
            _ => {
                return Err(Error::OracleTooLarge {
                    required: required.unwrap_or(u128::MAX),
                    limit: ORACLE_LIMIT,
                })
            }
        }
        let mut acc = self.sites[0].renamed("p", "s0")?.squeezed("l")?;
        for i in 1..self.len() {
            let site = self.sites[i].renamed("p", &format!("s{i}"))?;
            acc = contract(&acc, &site, &[("r", "l")])?;
        }
        Ok(acc.squeezed("r")?.data().to_vec())
    }

    fn check_sampling_pre(&self, basis: Option<&[DMatrix<C64>]>) -> Result<()> {
        if self.ortho_center != 0 {
            return Err(Error::InvalidState(format!(
                "sampling requires ortho_center 0, found {}",
                self.ortho_center
            )));
        }
        if let Some(us) = basis {
            if us.len() != self.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} basis matrices for {} sites",
                    us.len(),
                    self.len()
                )));
            }
        }
        Ok(())
    }
}

struct Branch {
    config: Vec<usize>,
    prob: f64,
    env: DenseTensor,
}

/// One proposed beam extension: branch `parent` extended by `outcome`.
pub(crate) struct Candidate {
    pub parent: usize,
    pub outcome: usize,
    /// Joint probability of the extended string.
    pub prob: f64,
    /// Conditional probability of the extension alone.
    pub cond: f64,
}

/// Keeps the k most probable candidates; ties broken by (parent, outcome)
/// ascending for determinism.
pub(crate) fn select_top_k(mut candidates: Vec<Candidate>, k: usize) -> Vec<Candidate> {
    candidates.sort_by(|a, b| {
        b.prob
            .partial_cmp(&a.prob)
            .expect("probabilities are finite")
            .then(a.parent.cmp(&b.parent))
            .then(a.outcome.cmp(&b.outcome))
    });
    candidates.truncate(k);
    candidates
}

/// Marginal over the physical leg of an orthogonality-center tensor:
/// entry σ is the squared Frobenius norm of the σ-slice.
pub(crate) fn marginal_over_phys(t: &DenseTensor, leg: &str) -> Result<Vec<f64>> {
    let d = t.dim(leg)?;
    // Move the phys leg to the front so each outcome is one contiguous chunk.
    let mut order: Vec<&str> = vec![leg];
    order.extend(t.labels().iter().filter(|l| *l != leg).map(|s| s.as_str()));
    let moved = t.permuted(&order)?;
    let chunk = moved.len() / d;
    Ok(moved
        .data()
        .chunks(chunk)
        .map(|c| c.iter().map(|z| z.norm_sqr()).sum())
        .collect())
}

/// Applies a unitary to the physical leg: out[σ] = Σ_τ U[σ,τ] in[τ].
pub(crate) fn rotate_phys(t: &DenseTensor, u: &DMatrix<C64>, leg: &str) -> Result<DenseTensor> {
    let d = t.dim(leg)?;
    if u.nrows() != d || u.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "basis matrix {}x{} for phys dim {d}",
            u.nrows(),
            u.ncols()
        )));
    }
    let res = unitarity_residual(u);
    if res > 1e-10 {
        return Err(Error::NonUnitaryBasis(res));
    }
    let mut data = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            data.push(u[(i, j)]);
        }
    }
    let order: Vec<&str> = t.labels().iter().map(|s| s.as_str()).collect();
    let ut = DenseTensor::new(vec!["_rot_out", leg], vec![d, d], data)?;
    contract(&ut, t, &[(leg, leg)])?
        .renamed("_rot_out", leg)?
        .permuted(&order)
}

pub(crate) fn unitarity_residual(u: &DMatrix<C64>) -> f64 {
    let gram = u.adjoint() * u;
    let mut acc = 0.0;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let expect = if i == j { 1.0 } else { 0.0 };
            acc += (gram[(i, j)] - C64::new(expect, 0.0)).norm_sqr();
        }
    }
    acc.sqrt()
}

fn identity_residual(m: &DenseTensor) -> f64 {
    let d = m.dims()[0];
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            let expect = if i == j { 1.0 } else { 0.0 };
            acc += (m.value(&[i, j]) - C64::new(expect, 0.0)).norm_sqr();
        }
    }
    acc.sqrt()
}

/// Inverse-CDF draw over outcomes in index order; `weights` need not be
/// normalized.
pub(crate) fn draw_categorical(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}
