//! 2D isometric tensor network states: row-by-row perfect sampling and
//! greedy top-K search.
//!
//! Grid sites are rank-5 tensors with legs `p` (physical), `u`/`d` (vertical
//! bonds) and `l`/`r` (horizontal bonds). The orthogonality center sits at
//! (0,0); every other tensor is an isometry from its incoming legs `(p, d, r)`
//! onto its outgoing legs `(l, u)` — arrows point along each row toward
//! column 0 and up column 0 toward the center.
//!
//! Sampling proceeds row by row: the top row is sampled site by site with QR
//! shifts of the row-local center, the projected (physless) row is contracted
//! into the next row with a truncated zip-up MPO-MPS product, and the last row
//! degenerates to an ordinary MPS.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mps::{
    draw_categorical, marginal_over_phys, select_top_k, Candidate, MpsChain, BRANCH_FLOOR,
    ZERO_BRANCH_GUARD,
};
use crate::tensor::{contract, qr_split, svd_split, C64, DenseTensor, Label, SvdTruncation};

const GRID_LEGS: [&str; 5] = ["p", "u", "d", "l", "r"];

/// Grid of rank-5 site tensors with the orthogonality center at (0,0).
///
/// Square `L`×`L` lattices are the primary case; degenerate 1×L and L×1
/// lattices are supported for cross-validation against the MPS module.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct IsoTnsGrid {
    sites: Vec<DenseTensor>,
    rows: usize,
    cols: usize,
    phys_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    l: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cols: Option<usize>,
    phys_dim: usize,
    ortho: [usize; 2],
    sites: Vec<DenseTensor>,
}

impl From<IsoTnsGrid> for GridRepr {
    fn from(g: IsoTnsGrid) -> Self {
        let square = g.rows == g.cols;
        GridRepr {
            l: square.then_some(g.rows),
            rows: (!square).then_some(g.rows),
            cols: (!square).then_some(g.cols),
            phys_dim: g.phys_dim,
            ortho: [0, 0],
            sites: g.sites,
        }
    }
}

impl TryFrom<GridRepr> for IsoTnsGrid {
    type Error = Error;
    fn try_from(r: GridRepr) -> Result<Self> {
        if r.ortho != [0, 0] {
            return Err(Error::InvalidState(
                "orthogonality center must be at (0,0)".into(),
            ));
        }
        let (rows, cols) = match (r.l, r.rows, r.cols) {
            (Some(l), None, None) => (l, l),
            (None, Some(rows), Some(cols)) => (rows, cols),
            _ => {
                return Err(Error::InvalidState(
                    "grid shape requires either L or rows+cols".into(),
                ))
            }
        };
        IsoTnsGrid::new(r.sites, rows, cols, r.phys_dim)
    }
}

/// One drawn grid configuration: outcomes in row-major order, its
/// probability, and the accumulated truncation error of each row contraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub config: Vec<usize>,
    pub prob: f64,
    pub row_errors: Vec<f64>,
}

/// Up to K distinct grid configurations, probabilities descending, plus the
/// per-row contraction errors shared by all of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopKGridResult {
    pub configs: Vec<Vec<usize>>,
    pub probs: Vec<f64>,
    pub row_errors: Vec<f64>,
}

/// Per-site isometry residuals ‖Q†Q − I‖_F (0 at the center slot) and the
/// center-tensor norm.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub residuals: Vec<f64>,
    pub center_norm: f64,
    pub rows: usize,
    pub cols: usize,
}

impl ValidationReport {
    pub fn passes(&self) -> bool {
        self.residuals.iter().all(|&r| r < 1e-10)
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().cloned().fold(0.0, f64::max)
    }
}

/// One row of the lattice mid-algorithm: tensors with legs `(p, d, l, r)`
/// before sampling, `(d, l, r)` after projection, plus an optional `k` leg on
/// the orthogonality-center tensor in top-K mode.
#[derive(Clone, Debug)]
pub struct RowState {
    sites: Vec<DenseTensor>,
    ortho: usize,
}

impl RowState {
    pub fn sites(&self) -> &[DenseTensor] {
        &self.sites
    }

    pub fn ortho(&self) -> usize {
        self.ortho
    }

    pub fn width(&self) -> usize {
        self.sites.len()
    }

    /// View as an MPS for final-row dispatch; requires phys legs present and
    /// all down-legs of dim 1.
    pub fn to_mps(&self, phys_dim: usize) -> Result<MpsChain> {
        let sites = self
            .sites
            .iter()
            .map(|s| s.squeezed("d")?.permuted(&["l", "p", "r"]))
            .collect::<Result<Vec<_>>>()?;
        MpsChain::new(sites, self.ortho, phys_dim)
    }

    /// Dense coefficient tensor of the row with legs in the order
    /// (phys legs if any, then down legs, site-major); test-scale only.
    pub fn to_dense(&self) -> Result<DenseTensor> {
        let mut acc: Option<DenseTensor> = None;
        for (j, s) in self.sites.iter().enumerate() {
            let mut t = s.renamed("d", &format!("d{j}"))?;
            if t.has_leg("p") {
                t = t.renamed("p", &format!("p{j}"))?;
            }
            acc = Some(match acc {
                None => t.squeezed("l")?,
                Some(a) => contract(&a, &t, &[("r", "l")])?,
            });
        }
        acc.unwrap().squeezed("r")
    }
}

impl IsoTnsGrid {
    pub fn new(sites: Vec<DenseTensor>, rows: usize, cols: usize, phys_dim: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidState("empty grid".into()));
        }
        if sites.len() != rows * cols {
            return Err(Error::InvalidState(format!(
                "{} sites for a {rows}x{cols} grid",
                sites.len()
            )));
        }
        for (n, s) in sites.iter().enumerate() {
            let (i, j) = (n / cols, n % cols);
            if s.labels() != GRID_LEGS {
                return Err(Error::InvalidState(format!(
                    "site ({i},{j}) legs {:?}, expected {GRID_LEGS:?}",
                    s.labels()
                )));
            }
            if s.dim("p")? != phys_dim {
                return Err(Error::DimensionMismatch(format!(
                    "site ({i},{j}) phys dim {} != {phys_dim}",
                    s.dim("p")?
                )));
            }
            for (leg, at_boundary) in [
                ("u", i == 0),
                ("d", i == rows - 1),
                ("l", j == 0),
                ("r", j == cols - 1),
            ] {
                if at_boundary && s.dim(leg)? != 1 {
                    return Err(Error::DimensionMismatch(format!(
                        "site ({i},{j}) boundary leg {leg} has dim {}",
                        s.dim(leg)?
                    )));
                }
            }
        }
        let idx = |i: usize, j: usize| i * cols + j;
        for i in 0..rows {
            for j in 0..cols {
                if j + 1 < cols && sites[idx(i, j)].dim("r")? != sites[idx(i, j + 1)].dim("l")? {
                    return Err(Error::DimensionMismatch(format!(
                        "horizontal bond ({i},{j})-({i},{})",
                        j + 1
                    )));
                }
                if i + 1 < rows && sites[idx(i, j)].dim("d")? != sites[idx(i + 1, j)].dim("u")? {
                    return Err(Error::DimensionMismatch(format!(
                        "vertical bond ({i},{j})-({},{j})",
                        i + 1
                    )));
                }
            }
        }
        Ok(IsoTnsGrid {
            sites,
            rows,
            cols,
            phys_dim,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn phys_dim(&self) -> usize {
        self.phys_dim
    }

    pub fn site(&self, i: usize, j: usize) -> &DenseTensor {
        &self.sites[i * self.cols + j]
    }

    pub fn sites(&self) -> &[DenseTensor] {
        &self.sites
    }

    fn row(&self, i: usize) -> &[DenseTensor] {
        &self.sites[i * self.cols..(i + 1) * self.cols]
    }

    /// Isometry residuals for every site plus the center norm (diagnostic;
    /// never fails on a structurally valid grid).
    pub fn validate(&self) -> ValidationReport {
        let mut residuals = Vec::with_capacity(self.sites.len());
        for (n, s) in self.sites.iter().enumerate() {
            if n == 0 {
                residuals.push(0.0);
                continue;
            }
            let gram = contract(
                &s.conj()
                    .renamed("l", "l2")
                    .and_then(|t| t.renamed("u", "u2"))
                    .expect("fresh names"),
                s,
                &[("p", "p"), ("d", "d"), ("r", "r")],
            )
            .expect("structurally valid site");
            // gram legs are (u2, l2, u, l) in input order.
            let du = s.dims()[1];
            let dl = s.dims()[3];
            let mut acc = 0.0;
            for a in 0..du {
                for b in 0..dl {
                    for c in 0..du {
                        for e in 0..dl {
                            let expect = if a == c && b == e { 1.0 } else { 0.0 };
                            acc += (gram.value(&[a, b, c, e]) - C64::new(expect, 0.0)).norm_sqr();
                        }
                    }
                }
            }
            residuals.push(acc.sqrt());
        }
        ValidationReport {
            residuals,
            center_norm: self.sites[0].norm(),
            rows: self.rows,
            cols: self.cols,
        }
    }

    /// Row 0 as a row state with the trivial up-legs absorbed; ortho at 0.
    pub fn first_row(&self) -> Result<RowState> {
        let sites = self
            .row(0)
            .iter()
            .map(|s| s.squeezed("u"))
            .collect::<Result<Vec<_>>>()?;
        Ok(RowState { sites, ortho: 0 })
    }

    /// Draws one configuration; perfect sampling whenever every row
    /// contraction is exact (all `row_errors` ≈ 0).
    pub fn sample(
        &self,
        trunc: &SvdTruncation,
        rng: &mut impl Rng,
    ) -> Result<SampleResult> {
        let mut row = self.first_row()?;
        let mut config = Vec::with_capacity(self.rows * self.cols);
        let mut prob = 1.0;
        let mut row_errors = Vec::with_capacity(self.rows.saturating_sub(1));
        for i in 0..self.rows - 1 {
            let (outcomes, factor, projected) = sample_row(&row, rng)?;
            config.extend(outcomes);
            prob *= factor;
            let (mut next, err) = contract_row_into_next(&projected, self.row(i + 1), trunc)?;
            row_errors.push(err);
            let n = next.sites[next.ortho].norm();
            if n <= 0.0 {
                return Err(Error::ZeroNorm);
            }
            next.sites[next.ortho] = next.sites[next.ortho].scaled(C64::new(1.0 / n, 0.0));
            row = next;
        }
        let chain = row.to_mps(self.phys_dim)?;
        let last = chain.sample(rng, None)?;
        config.extend(last.config);
        prob *= last.prob;
        Ok(SampleResult {
            config,
            prob,
            row_errors,
        })
    }

    /// Greedy beam search for the K most probable configurations; reported
    /// probabilities are exact for the represented (post-truncation) network.
    pub fn top_k(&self, k: usize, trunc: &SvdTruncation) -> Result<TopKGridResult> {
        if k == 0 {
            return Err(Error::InvalidState("k must be >= 1".into()));
        }
        let mut row = self.first_row()?;
        row.sites[0] = row.sites[0].with_unit_leg("k", 0)?;
        let mut strings: Vec<Vec<usize>> = vec![Vec::new()];
        let mut probs: Vec<f64> = vec![1.0];
        let mut row_errors = Vec::with_capacity(self.rows.saturating_sub(1));
        for i in 0..self.rows - 1 {
            let (s, p, projected) = top_k_row(&row, k, &strings, &probs)?;
            strings = s;
            probs = p;
            let (next, err) = contract_row_into_next(&projected, self.row(i + 1), trunc)?;
            row_errors.push(err);
            row = next;
        }
        let (mut strings, mut probs, _) = {
            let (s, p, proj) = top_k_row(&row, k, &strings, &probs)?;
            (s, p, proj)
        };
        // Final ordering: descending probability, ties by configuration.
        let mut order: Vec<usize> = (0..strings.len()).collect();
        order.sort_by(|&a, &b| {
            probs[b]
                .partial_cmp(&probs[a])
                .expect("probabilities are finite")
                .then(strings[a].cmp(&strings[b]))
        });
        strings = order.iter().map(|&i| strings[i].clone()).collect();
        probs = order.iter().map(|&i| probs[i]).collect();
        Ok(TopKGridResult {
            configs: strings,
            probs,
            row_errors,
        })
    }
}

/// Repeat-sampling driver that memoizes the row-contraction step.
///
/// The projected row handed to [`contract_row_into_next`] is a deterministic
/// function of the outcomes drawn so far, so whenever a prefix of row
/// outcomes recurs across samples, the zip-up and renormalization — the bulk
/// of the per-sample cost — can be reused. Output is bit-identical to
/// [`IsoTnsGrid::sample`] on the same RNG stream; only the running time
/// changes. States with small support (GHZ, W) hit the cache almost always.
/// The cache is bounded: once full, misses recompute without inserting.
pub struct CachedSampler<'a> {
    grid: &'a IsoTnsGrid,
    trunc: SvdTruncation,
    first: RowState,
    first_chain: Option<MpsChain>,
    cache: HashMap<Vec<usize>, CacheEntry>,
    capacity: usize,
}

struct CacheEntry {
    row: RowState,
    err: f64,
    chain: Option<MpsChain>,
}

impl<'a> CachedSampler<'a> {
    const DEFAULT_CAPACITY: usize = 4096;

    pub fn new(grid: &'a IsoTnsGrid, trunc: SvdTruncation) -> Result<Self> {
        Self::with_capacity(grid, trunc, Self::DEFAULT_CAPACITY)
    }

    /// `capacity` bounds the number of cached row prefixes (0 disables
    /// caching entirely; sampling still works, just without reuse).
    pub fn with_capacity(
        grid: &'a IsoTnsGrid,
        trunc: SvdTruncation,
        capacity: usize,
    ) -> Result<Self> {
        Ok(CachedSampler {
            grid,
            trunc,
            first: grid.first_row()?,
            first_chain: None,
            cache: HashMap::new(),
            capacity,
        })
    }

    /// Draws one configuration; equivalent to [`IsoTnsGrid::sample`].
    pub fn sample(&mut self, rng: &mut impl Rng) -> Result<SampleResult> {
        let rows = self.grid.rows;
        let mut config = Vec::with_capacity(rows * self.grid.cols);
        let mut prob = 1.0;
        let mut row_errors = Vec::with_capacity(rows.saturating_sub(1));
        // Holds rows that could not be cached (capacity exhausted).
        let mut local: Option<CacheEntry> = None;
        let mut key: Vec<usize> = Vec::new();
        for i in 0..rows - 1 {
            let row = match &local {
                Some(e) => &e.row,
                None if i == 0 => &self.first,
                None => &self.cache[&key].row,
            };
            let (outcomes, factor, projected) = sample_row(row, rng)?;
            key.extend(outcomes.iter().copied());
            config.extend(outcomes);
            prob *= factor;
            if let Some(e) = self.cache.get(&key) {
                row_errors.push(e.err);
                local = None;
            } else {
                let (mut next, err) =
                    contract_row_into_next(&projected, self.grid.row(i + 1), &self.trunc)?;
                let n = next.sites[next.ortho].norm();
                if n <= 0.0 {
                    return Err(Error::ZeroNorm);
                }
                next.sites[next.ortho] = next.sites[next.ortho].scaled(C64::new(1.0 / n, 0.0));
                row_errors.push(err);
                let entry = CacheEntry {
                    row: next,
                    err,
                    chain: None,
                };
                if self.cache.len() < self.capacity {
                    self.cache.insert(key.clone(), entry);
                    local = None;
                } else {
                    local = Some(entry);
                }
            }
        }
        let phys_dim = self.grid.phys_dim;
        let last = if rows == 1 {
            if self.first_chain.is_none() {
                self.first_chain = Some(self.first.to_mps(phys_dim)?);
            }
            self.first_chain.as_ref().expect("just filled").sample(rng, None)?
        } else if let Some(e) = &local {
            e.row.to_mps(phys_dim)?.sample(rng, None)?
        } else {
            let e = self.cache.get_mut(&key).expect("prefix entry just ensured");
            if e.chain.is_none() {
                e.chain = Some(e.row.to_mps(phys_dim)?);
            }
            e.chain.as_ref().expect("just filled").sample(rng, None)?
        };
        config.extend(last.config);
        prob *= last.prob;
        Ok(SampleResult {
            config,
            prob,
            row_errors,
        })
    }
}

/// Samples every site of a row left to right, shifting the row-local ortho
/// center by QR after each projection. Returns the outcomes, the product of
/// conditionals, and the projected (physless) row with ortho at the right end.
pub fn sample_row(r: &RowState, rng: &mut impl Rng) -> Result<(Vec<usize>, f64, RowState)> {
    if r.ortho != 0 {
        return Err(Error::InvalidState("row ortho must be at position 0".into()));
    }
    let w = r.width();
    let mut center = r.sites[0].clone();
    let mut outcomes = Vec::with_capacity(w);
    let mut factor = 1.0;
    let mut projected = Vec::with_capacity(w);
    for j in 0..w {
        let marg = marginal_over_phys(&center, "p")?;
        let total: f64 = marg.iter().sum();
        let sigma = draw_categorical(rng, &marg);
        let p = marg[sigma];
        if p < ZERO_BRANCH_GUARD {
            return Err(Error::ZeroProbabilityBranch { site: j, prob: p });
        }
        outcomes.push(sigma);
        factor *= p / total;
        let s = center
            .fixed("p", sigma)?
            .scaled(C64::new(1.0 / p.sqrt(), 0.0));
        if j + 1 < w {
            let (q, rest) = qr_split(&s, &["d", "l"], "b")?;
            projected.push(q.into_renamed("b", "r")?);
            center = contract(&rest, &r.sites[j + 1], &[("r", "l")])?.into_renamed("b", "l")?;
        } else {
            projected.push(s);
        }
    }
    Ok((
        outcomes,
        factor,
        RowState {
            sites: projected,
            ortho: w - 1,
        },
    ))
}

/// Top-K beam step over one row. The row's branch dependence is carried by a
/// `k` leg on the ortho tensor; the stored row tensors stay branch-independent
/// because each QR shift moves the `k` leg rightward with the R factor.
pub fn top_k_row(
    r: &RowState,
    k: usize,
    carried_strings: &[Vec<usize>],
    carried_probs: &[f64],
) -> Result<(Vec<Vec<usize>>, Vec<f64>, RowState)> {
    if r.ortho != 0 {
        return Err(Error::InvalidState("row ortho must be at position 0".into()));
    }
    let k_dim = r.sites[0].dim("k")?;
    if k_dim != carried_strings.len() || k_dim != carried_probs.len() {
        return Err(Error::DimensionMismatch(format!(
            "k-leg dim {k_dim} vs {} carried strings, {} probs",
            carried_strings.len(),
            carried_probs.len()
        )));
    }
    let w = r.width();
    let mut center = r.sites[0].clone();
    let mut strings: Vec<Vec<usize>> = carried_strings.to_vec();
    let mut probs: Vec<f64> = carried_probs.to_vec();
    let mut projected = Vec::with_capacity(w);
    for j in 0..w {
        let kd = center.dim("k")?;
        let mut slices = Vec::with_capacity(kd);
        let mut candidates = Vec::new();
        for b in 0..kd {
            let slice = center.fixed("k", b)?;
            let marg = marginal_over_phys(&slice, "p")?;
            let total: f64 = marg.iter().sum();
            for (sigma, &m) in marg.iter().enumerate() {
                let cond = if total > 0.0 { m / total } else { 0.0 };
                let joint = probs[b] * cond;
                if joint > BRANCH_FLOOR {
                    candidates.push(Candidate {
                        parent: b,
                        outcome: sigma,
                        prob: joint,
                        cond: m,
                    });
                }
            }
            slices.push((slice, marg));
        }
        let selected = select_top_k(candidates, k);
        if selected.is_empty() {
            return Err(Error::InvalidState(
                "no branch above probability floor".into(),
            ));
        }
        let mut new_slices = Vec::with_capacity(selected.len());
        let mut new_strings = Vec::with_capacity(selected.len());
        let mut new_probs = Vec::with_capacity(selected.len());
        for c in &selected {
            let (slice, _) = &slices[c.parent];
            if c.cond < ZERO_BRANCH_GUARD {
                return Err(Error::ZeroProbabilityBranch {
                    site: j,
                    prob: c.cond,
                });
            }
            let s = slice
                .fixed("p", c.outcome)?
                .scaled(C64::new(1.0 / c.cond.sqrt(), 0.0));
            new_slices.push(s);
            let mut string = strings[c.parent].clone();
            string.push(c.outcome);
            new_strings.push(string);
            new_probs.push(c.prob);
        }
        strings = new_strings;
        probs = new_probs;
        let stacked = stack_on_new_leg(&new_slices, "k")?;
        if j + 1 < w {
            let (q, rest) = qr_split(&stacked, &["d", "l"], "b")?;
            projected.push(q.into_renamed("b", "r")?);
            center = contract(&rest, &r.sites[j + 1], &[("r", "l")])?.into_renamed("b", "l")?;
        } else {
            projected.push(stacked);
        }
    }
    Ok((
        strings,
        probs,
        RowState {
            sites: projected,
            ortho: w - 1,
        },
    ))
}

/// Multiplies a projected (physless) row into the next lattice row with a
/// zip-up sweep: contract site pairs left to right, truncating each new
/// horizontal bond by SVD, then an exact right-to-left QR sweep returning the
/// ortho center (and any `k` leg) to position 0.
///
/// `err` is the accumulated discarded singular weight,
/// sqrt(Σ discarded_i²). No renormalization happens here.
pub fn contract_row_into_next(
    projected: &RowState,
    next_row: &[DenseTensor],
    trunc: &SvdTruncation,
) -> Result<(RowState, f64)> {
    let w = projected.width();
    if next_row.len() != w {
        return Err(Error::DimensionMismatch(format!(
            "projected row width {w} vs next row width {}",
            next_row.len()
        )));
    }
    if projected.ortho != w - 1 {
        return Err(Error::InvalidState(
            "projected row ortho must be at the right end".into(),
        ));
    }
    let mut err_sq = 0.0;
    // Carried-tensor legs: `rp` awaits the projected row's bond, `rn` the
    // next row's; both arrive by relabeling the contraction output, so the
    // operand tensors never need copying renames.
    let mut carried = DenseTensor::new(
        vec!["l", "rp", "rn"],
        vec![1, 1, 1],
        vec![C64::new(1.0, 0.0)],
    )?;
    let mut sites = Vec::with_capacity(w);
    for j in 0..w {
        let t = contract(&carried, &projected.sites[j], &[("rp", "l")])?
            .into_renamed("r", "rp")?;
        let t = contract(&t, &next_row[j], &[("rn", "l"), ("d", "u")])?
            .into_renamed("r", "rn")?;
        if j + 1 < w {
            let split = svd_split(&t, &["p", "d", "l"], trunc, "b")?;
            err_sq += split.discarded_weight * split.discarded_weight;
            sites.push(split.u.into_renamed("b", "r")?);
            // v comes out of the split with the bond leg leading.
            carried = scale_leading_leg(split.v, &split.s)?.into_renamed("b", "l")?;
        } else {
            let t = t.squeezed("rp")?.squeezed("rn")?;
            let pos = t.rank();
            sites.push(t.with_unit_leg("r", pos)?);
        }
    }
    // Exact canonicalization sweep: ortho (and k leg) travel back to site 0.
    for j in (1..w).rev() {
        let (q, rest) = qr_split(&sites[j], &["p", "d", "r"], "b")?;
        sites[j] = q.into_renamed("b", "l")?;
        sites[j - 1] = contract(&sites[j - 1], &rest, &[("r", "l")])?.into_renamed("b", "r")?;
    }
    Ok((RowState { sites, ortho: 0 }, err_sq.sqrt()))
}

/// Multiplies slice i of the leading leg by `factors[i]`.
fn scale_leading_leg(mut t: DenseTensor, factors: &[f64]) -> Result<DenseTensor> {
    let d = t.dims()[0];
    if d != factors.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} factors for leading leg of dim {d}",
            factors.len()
        )));
    }
    let chunk = t.len() / d;
    for (i, c) in t.data_mut().chunks_mut(chunk).enumerate() {
        for z in c.iter_mut() {
            *z *= C64::new(factors[i], 0.0);
        }
    }
    Ok(t)
}

/// Stacks same-shaped tensors along a fresh leading leg.
fn stack_on_new_leg(slices: &[DenseTensor], leg: &str) -> Result<DenseTensor> {
    let first = &slices[0];
    let mut data = Vec::with_capacity(first.len() * slices.len());
    for s in slices {
        if s.labels() != first.labels() || s.dims() != first.dims() {
            return Err(Error::DimensionMismatch(
                "stacked slices must share shape and legs".into(),
            ));
        }
        data.extend_from_slice(s.data());
    }
    let mut labels: Vec<Label> = vec![Label::new(leg)];
    labels.extend(first.labels().iter().cloned());
    let mut dims = vec![slices.len()];
    dims.extend_from_slice(first.dims());
    DenseTensor::new(labels, dims, data)
}
