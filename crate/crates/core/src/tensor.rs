//! Dense complex tensors with named legs.
//!
//! Every tensor in this crate is a [`DenseTensor`]: an arbitrary-rank array of
//! complex doubles stored row-major over its leg order, with one distinct
//! string label per leg. All contractions, permutations and matrix
//! factorizations (QR, truncated SVD) on leg bipartitions go through this
//! module.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use smallvec::SmallVec;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Leg label. Inline small-string storage: labels are cloned on every tensor
/// op, and heap-allocating them dominates the cost of small-tensor workloads.
pub type Label = compact_str::CompactString;

/// Inline label/dim lists; rank rarely exceeds 6, so tensor bookkeeping stays
/// off the heap.
type Labels = SmallVec<[Label; 6]>;
type Dims = SmallVec<[usize; 6]>;

/// Dense complex tensor with labeled legs and row-major data layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TensorRepr", into = "TensorRepr")]
pub struct DenseTensor {
    labels: Labels,
    dims: Dims,
    data: Vec<C64>,
}

/// Wire format: `{dims, labels, re, im}` with data in canonical row-major order.
#[derive(Serialize, Deserialize)]
struct TensorRepr {
    dims: Vec<usize>,
    labels: Vec<Label>,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl From<DenseTensor> for TensorRepr {
    fn from(t: DenseTensor) -> Self {
        TensorRepr {
            dims: t.dims.to_vec(),
            labels: t.labels.to_vec(),
            re: t.data.iter().map(|z| z.re).collect(),
            im: t.data.iter().map(|z| z.im).collect(),
        }
    }
}

impl TryFrom<TensorRepr> for DenseTensor {
    type Error = Error;

    fn try_from(r: TensorRepr) -> Result<Self> {
        if r.re.len() != r.im.len() {
            return Err(Error::DimensionMismatch(format!(
                "re/im length mismatch: {} vs {}",
                r.re.len(),
                r.im.len()
            )));
        }
        let data = r
            .re
            .iter()
            .zip(r.im.iter())
            .map(|(&re, &im)| C64::new(re, im))
            .collect();
        DenseTensor::new(r.labels, r.dims, data)
    }
}

impl DenseTensor {
    pub fn new<L: Into<Label>>(labels: Vec<L>, dims: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        let labels: Labels = labels.into_iter().map(Into::into).collect();
        if labels.len() != dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} legs",
                labels.len(),
                dims.len()
            )));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::DuplicateLeg(l.to_string()));
            }
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::DimensionMismatch("zero-dimensional leg".into()));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for shape of size {}",
                data.len(),
                n
            )));
        }
        Ok(DenseTensor {
            labels,
            dims: Dims::from_vec(dims),
            data,
        })
    }

    pub fn zeros<L: Into<Label>>(labels: Vec<L>, dims: Vec<usize>) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(labels, dims, vec![C64::new(0.0, 0.0); n])
    }

    pub fn from_fn<L: Into<Label>>(
        labels: Vec<L>,
        dims: Vec<usize>,
        mut f: impl FnMut(&[usize]) -> C64,
    ) -> Result<Self> {
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..n {
            data.push(f(&idx));
            for ax in (0..dims.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < dims[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Self::new(labels, dims, data)
    }

    pub fn scalar(value: C64) -> Self {
        DenseTensor {
            labels: Labels::new(),
            dims: Dims::new(),
            data: vec![value],
        }
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    /// Mutable access to the values (shape and labels stay fixed).
    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn axis(&self, leg: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == leg)
            .ok_or_else(|| Error::UnknownLeg(leg.to_string()))
    }

    pub fn dim(&self, leg: &str) -> Result<usize> {
        Ok(self.dims[self.axis(leg)?])
    }

    pub fn has_leg(&self, leg: &str) -> bool {
        self.labels.iter().any(|l| l == leg)
    }

    /// Value at a full multi-index (in current leg order).
    pub fn value(&self, idx: &[usize]) -> C64 {
        debug_assert_eq!(idx.len(), self.rank());
        let mut lin = 0usize;
        for (ax, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.dims[ax]);
            lin = lin * self.dims[ax] + i;
        }
        self.data[lin]
    }

    pub fn conj(&self) -> Self {
        DenseTensor {
            labels: self.labels.clone(),
            dims: self.dims.clone(),
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn scaled(&self, factor: C64) -> Self {
        DenseTensor {
            labels: self.labels.clone(),
            dims: self.dims.clone(),
            data: self.data.iter().map(|z| z * factor).collect(),
        }
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn renamed(&self, old: &str, new: &str) -> Result<Self> {
        self.renamed_pairs(&[(old, new)])
    }

    /// Renames a leg on an owned tensor without copying the data.
    pub fn into_renamed(mut self, old: &str, new: &str) -> Result<Self> {
        let ax = self.axis(old)?;
        if old != new
            && self
                .labels
                .iter()
                .enumerate()
                .any(|(i, l)| i != ax && l == new)
        {
            return Err(Error::DuplicateLeg(new.to_string()));
        }
        self.labels[ax] = Label::new(new);
        Ok(self)
    }

    /// Renames several legs in one pass (single data copy).
    pub fn renamed_pairs(&self, pairs: &[(&str, &str)]) -> Result<Self> {
        let mut labels = self.labels.clone();
        for &(old, new) in pairs {
            let ax = self.axis(old)?;
            labels[ax] = Label::new(new);
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::DuplicateLeg(l.to_string()));
            }
        }
        Ok(DenseTensor {
            labels,
            dims: self.dims.clone(),
            data: self.data.clone(),
        })
    }

    /// Reorders legs to `order`, which must name every leg exactly once.
    pub fn permuted(&self, order: &[&str]) -> Result<Self> {
        Ok(self.ordered(order)?.into_owned())
    }

    /// Like [`Self::permuted`] but borrows when the order is already right;
    /// the factorization and contraction paths hit that case constantly.
    fn ordered<'a>(&'a self, order: &[&str]) -> Result<std::borrow::Cow<'a, Self>> {
        if order.len() != self.rank() {
            return Err(Error::InvalidSplit(format!(
                "permutation names {} of {} legs",
                order.len(),
                self.rank()
            )));
        }
        let perm: Dims = order
            .iter()
            .map(|l| self.axis(l))
            .collect::<Result<_>>()?;
        {
            let mut seen: SmallVec<[bool; 6]> = smallvec::smallvec![false; perm.len()];
            for &p in perm.iter() {
                if seen[p] {
                    return Err(Error::DuplicateLeg(self.labels[p].to_string()));
                }
                seen[p] = true;
            }
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(std::borrow::Cow::Borrowed(self));
        }
        Ok(std::borrow::Cow::Owned(self.permuted_axes(&perm)))
    }

    fn permuted_axes(&self, perm: &[usize]) -> Self {
        let rank = self.rank();
        let out_dims: Dims = perm.iter().map(|&p| self.dims[p]).collect();
        let out_labels: Labels = perm.iter().map(|&p| self.labels[p].clone()).collect();
        let mut strides: Dims = smallvec::smallvec![1usize; rank];
        for ax in (0..rank.saturating_sub(1)).rev() {
            strides[ax] = strides[ax + 1] * self.dims[ax + 1];
        }
        let perm_strides: Dims = perm.iter().map(|&p| strides[p]).collect();
        let n = self.data.len();
        let mut out = Vec::with_capacity(n);
        let mut counters: Dims = smallvec::smallvec![0usize; rank];
        let mut in_idx = 0usize;
        for _ in 0..n {
            out.push(self.data[in_idx]);
            for ax in (0..rank).rev() {
                counters[ax] += 1;
                in_idx += perm_strides[ax];
                if counters[ax] < out_dims[ax] {
                    break;
                }
                in_idx -= perm_strides[ax] * out_dims[ax];
                counters[ax] = 0;
            }
        }
        DenseTensor {
            labels: out_labels,
            dims: out_dims,
            data: out,
        }
    }

    /// Removes a leg of dimension 1.
    pub fn squeezed(&self, leg: &str) -> Result<Self> {
        let ax = self.axis(leg)?;
        if self.dims[ax] != 1 {
            return Err(Error::DimensionMismatch(format!(
                "cannot squeeze leg `{leg}` of dim {}",
                self.dims[ax]
            )));
        }
        let mut labels = self.labels.clone();
        let mut dims = self.dims.clone();
        labels.remove(ax);
        dims.remove(ax);
        Ok(DenseTensor {
            labels,
            dims,
            data: self.data.clone(),
        })
    }

    /// Inserts a new leg of dimension 1 at position `pos`.
    pub fn with_unit_leg(&self, leg: &str, pos: usize) -> Result<Self> {
        if self.has_leg(leg) {
            return Err(Error::DuplicateLeg(leg.to_string()));
        }
        let pos = pos.min(self.rank());
        let mut labels = self.labels.clone();
        let mut dims = self.dims.clone();
        labels.insert(pos, Label::new(leg));
        dims.insert(pos, 1);
        Ok(DenseTensor {
            labels,
            dims,
            data: self.data.clone(),
        })
    }

    /// Fixes one leg at `index`, removing it from the result.
    pub fn fixed(&self, leg: &str, index: usize) -> Result<Self> {
        let ax = self.axis(leg)?;
        if index >= self.dims[ax] {
            return Err(Error::DimensionMismatch(format!(
                "index {index} out of range for leg `{leg}` of dim {}",
                self.dims[ax]
            )));
        }
        // Gather the strided slice at `index` directly; leg order is
        // preserved minus the fixed leg.
        let stride: usize = self.dims[ax + 1..].iter().product();
        let block = self.dims[ax] * stride;
        let outer = self.data.len() / block;
        let mut data = Vec::with_capacity(outer * stride);
        for o in 0..outer {
            let start = o * block + index * stride;
            data.extend_from_slice(&self.data[start..start + stride]);
        }
        let mut labels = self.labels.clone();
        let mut dims = self.dims.clone();
        labels.remove(ax);
        dims.remove(ax);
        Ok(DenseTensor { labels, dims, data })
    }

    /// Fuses legs `first` and `second` (in that index order) into one leg
    /// `fused` with row-major combined index `i_first * dim_second + i_second`.
    pub fn fused(&self, first: &str, second: &str, fused: &str) -> Result<Self> {
        let mut order: Vec<&str> = Vec::with_capacity(self.rank());
        for l in &self.labels {
            if l == second {
                continue;
            }
            order.push(l);
            if l == first {
                order.push(second);
            }
        }
        if first == second || !self.has_leg(second) {
            return Err(Error::UnknownLeg(second.to_string()));
        }
        let moved = self.permuted(&order)?;
        let ax = moved.axis(first)?;
        let mut labels = moved.labels.clone();
        let mut dims = moved.dims.clone();
        dims[ax] *= dims[ax + 1];
        labels[ax] = Label::new(fused);
        labels.remove(ax + 1);
        dims.remove(ax + 1);
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::DuplicateLeg(l.to_string()));
            }
        }
        Ok(DenseTensor {
            labels,
            dims,
            data: moved.data,
        })
    }

    /// Splits `leg` of dim `d1*d2` into two legs with row-major combined
    /// index `i1 * d2 + i2` (inverse of [`Self::fused`]); the new legs take
    /// the old leg's position.
    pub fn split_leg(
        &self,
        leg: &str,
        first: &str,
        d1: usize,
        second: &str,
        d2: usize,
    ) -> Result<Self> {
        let ax = self.axis(leg)?;
        if self.dims[ax] != d1 * d2 {
            return Err(Error::DimensionMismatch(format!(
                "cannot split leg `{leg}` of dim {} into {d1}x{d2}",
                self.dims[ax]
            )));
        }
        let mut labels = self.labels.clone();
        let mut dims = self.dims.clone();
        labels[ax] = Label::new(first);
        dims[ax] = d1;
        labels.insert(ax + 1, Label::new(second));
        dims.insert(ax + 1, d2);
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::DuplicateLeg(l.to_string()));
            }
        }
        Ok(DenseTensor {
            labels,
            dims,
            data: self.data.clone(),
        })
    }

}

/// Truncation policy for [`svd_split`]: keep at most `max_rank` singular
/// values, discarding any below `rel_cutoff` times the largest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvdTruncation {
    pub max_rank: usize,
    pub rel_cutoff: f64,
}

impl SvdTruncation {
    pub fn new(max_rank: usize, rel_cutoff: f64) -> Result<Self> {
        if max_rank == 0 {
            return Err(Error::InvalidTruncation("max_rank must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&rel_cutoff) {
            return Err(Error::InvalidTruncation(format!(
                "rel_cutoff {rel_cutoff} not in [0, 1)"
            )));
        }
        Ok(SvdTruncation {
            max_rank,
            rel_cutoff,
        })
    }

    /// No truncation: full rank, no cutoff.
    pub fn none() -> Self {
        SvdTruncation {
            max_rank: usize::MAX,
            rel_cutoff: 0.0,
        }
    }

    pub fn max_rank(chi: usize) -> Result<Self> {
        Self::new(chi, 0.0)
    }
}

/// Result of a truncated SVD split: `u · diag(s) · v` approximates the input,
/// with `discarded_weight` the Frobenius norm of the discarded part.
#[derive(Clone, Debug)]
pub struct SvdSplit {
    pub u: DenseTensor,
    pub s: Vec<f64>,
    pub v: DenseTensor,
    pub discarded_weight: f64,
}

/// Pairwise contraction (Einstein sum over `pairs`).
///
/// The result carries all unpaired legs of `a` followed by those of `b`, in
/// input order.
pub fn contract(a: &DenseTensor, b: &DenseTensor, pairs: &[(&str, &str)]) -> Result<DenseTensor> {
    for (la, lb) in pairs {
        let da = a.dim(la)?;
        let db = b.dim(lb)?;
        if da != db {
            return Err(Error::DimensionMismatch(format!(
                "paired legs `{la}` (dim {da}) and `{lb}` (dim {db})"
            )));
        }
    }
    for (i, (la, lb)) in pairs.iter().enumerate() {
        for (la2, lb2) in &pairs[..i] {
            if la == la2 {
                return Err(Error::DuplicateLeg(la.to_string()));
            }
            if lb == lb2 {
                return Err(Error::DuplicateLeg(lb.to_string()));
            }
        }
    }
    type Names<'x> = SmallVec<[&'x str; 6]>;
    let paired_a: Names = pairs.iter().map(|p| p.0).collect();
    let paired_b: Names = pairs.iter().map(|p| p.1).collect();
    let free_a: Names = a
        .labels
        .iter()
        .map(|s| s.as_str())
        .filter(|l| !paired_a.contains(l))
        .collect();
    let free_b: Names = b
        .labels
        .iter()
        .map(|s| s.as_str())
        .filter(|l| !paired_b.contains(l))
        .collect();
    for l in &free_b {
        if free_a.contains(l) {
            return Err(Error::DuplicateLeg(l.to_string()));
        }
    }

    let mut order_a = free_a.clone();
    order_a.extend_from_slice(&paired_a);
    let a2 = a.ordered(&order_a)?;
    let mut order_b = paired_b.clone();
    order_b.extend_from_slice(&free_b);
    let b2 = b.ordered(&order_b)?;

    let ra: usize = a2.dims[..free_a.len()].iter().product();
    let ca: usize = a2.dims[free_a.len()..].iter().product();
    let cb: usize = b2.dims[paired_b.len()..].iter().product();
    let data = matmul_rm(&a2.data, ra, ca, &b2.data, cb);

    let mut labels: Labels = a2.labels[..free_a.len()].iter().cloned().collect();
    labels.extend(b2.labels[paired_b.len()..].iter().cloned());
    let mut dims = Dims::from_slice(&a2.dims[..free_a.len()]);
    dims.extend_from_slice(&b2.dims[paired_b.len()..]);
    Ok(DenseTensor { labels, dims, data })
}

/// Row-major matmul: `a` is `ra x ca`, `b` is `ca x cb`.
fn matmul_rm(a: &[C64], ra: usize, ca: usize, b: &[C64], cb: usize) -> Vec<C64> {
    let zero = C64::new(0.0, 0.0);
    let mut c = vec![zero; ra * cb];
    for i in 0..ra {
        let arow = &a[i * ca..(i + 1) * ca];
        let crow = &mut c[i * cb..(i + 1) * cb];
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b[k * cb..(k + 1) * cb];
            for (cij, &bkj) in crow.iter_mut().zip(brow) {
                *cij += aik * bkj;
            }
        }
    }
    c
}

/// Row-major Householder QR of an `m x n` matrix. Returns thin `q` (`m x k`)
/// with orthonormal columns and `r` (`k x n`) upper triangular with a real
/// nonnegative diagonal, `k = min(m, n)`.
fn qr_rm(a: &[C64], m: usize, n: usize) -> (Vec<C64>, Vec<C64>, usize) {
    let zero = C64::new(0.0, 0.0);
    let k = m.min(n);
    let mut a = a.to_vec();
    // Reflectors stored in one flat buffer: reflector j occupies m - j slots
    // starting at offs[j]; usize::MAX marks a column that needed no work.
    let mut vbuf: Vec<C64> = Vec::with_capacity(k * m);
    let mut offs: SmallVec<[usize; 16]> = SmallVec::new();
    for j in 0..k {
        let norm2: f64 = (j..m).map(|i| a[i * n + j].norm_sqr()).sum();
        let norm = norm2.sqrt();
        if norm <= 0.0 {
            offs.push(usize::MAX);
            continue;
        }
        let x0 = a[j * n + j];
        let phase = if x0.norm() > 0.0 {
            x0 / x0.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        // Pick the sign that avoids cancellation in v = x - alpha e1.
        let alpha = -phase * norm;
        let off = vbuf.len();
        vbuf.extend((j..m).map(|i| a[i * n + j]));
        vbuf[off] -= alpha;
        let v = &vbuf[off..];
        let vn2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if vn2 <= 0.0 {
            vbuf.truncate(off);
            offs.push(usize::MAX);
            continue;
        }
        let scale = 2.0 / vn2;
        for col in j..n {
            let mut dot = zero;
            for (idx, i) in (j..m).enumerate() {
                dot += v[idx].conj() * a[i * n + col];
            }
            let f = dot * scale;
            for (idx, i) in (j..m).enumerate() {
                a[i * n + col] -= f * v[idx];
            }
        }
        offs.push(off);
    }
    let mut r = vec![zero; k * n];
    for i in 0..k {
        for j in i..n {
            r[i * n + j] = a[i * n + j];
        }
    }
    // Accumulate q by applying the reflectors to the first k identity columns.
    let mut q = vec![zero; m * k];
    for i in 0..k {
        q[i * k + i] = C64::new(1.0, 0.0);
    }
    for j in (0..k).rev() {
        if offs[j] == usize::MAX {
            continue;
        }
        let v = &vbuf[offs[j]..offs[j] + (m - j)];
        let vn2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        let scale = 2.0 / vn2;
        for col in 0..k {
            let mut dot = zero;
            for (idx, i) in (j..m).enumerate() {
                dot += v[idx].conj() * q[i * k + col];
            }
            let f = dot * scale;
            for (idx, i) in (j..m).enumerate() {
                q[i * k + col] -= f * v[idx];
            }
        }
    }
    // Gauge fix: rotate each bond phase so diag(r) is real and nonnegative.
    for j in 0..k {
        let d = r[j * n + j];
        let dn = d.norm();
        if dn > 0.0 {
            let phase = d / dn;
            let conj = phase.conj();
            for i in 0..m {
                q[i * k + j] *= phase;
            }
            for c in 0..n {
                r[j * n + c] *= conj;
            }
        }
    }
    (q, r, k)
}

/// Row-major one-sided Jacobi SVD of an `m x n` matrix: `a = u diag(s) vh`
/// with `u` `m x k`, `vh` `k x n`, `k = min(m, n)`, singular values sorted
/// descending. Jacobi keeps full relative accuracy on the small singular
/// values, which the truncation bookkeeping depends on.
fn svd_rm(a: &[C64], m: usize, n: usize) -> (Vec<C64>, Vec<f64>, Vec<C64>) {
    // Wide matrices: factor the adjoint instead, a = (u2 s vh2)^H = v2 s u2^H.
    if m < n {
        let mut ah = vec![C64::new(0.0, 0.0); n * m];
        for i in 0..m {
            for j in 0..n {
                ah[j * m + i] = a[i * n + j].conj();
            }
        }
        let (u2, s, vh2) = svd_rm(&ah, n, m);
        let k = s.len();
        let mut u = vec![C64::new(0.0, 0.0); m * k];
        for i in 0..m {
            for c in 0..k {
                u[i * k + c] = vh2[c * m + i].conj();
            }
        }
        let mut vh = vec![C64::new(0.0, 0.0); k * n];
        for c in 0..k {
            for j in 0..n {
                vh[c * n + j] = u2[j * k + c].conj();
            }
        }
        return (u, s, vh);
    }
    // Very tall matrices: QR first, Jacobi on the small square factor. For
    // mildly tall ones the extra factorization costs more than it saves.
    if m > 4 * n {
        let (q, r, k) = qr_rm(a, m, n);
        let (ur, s, vh) = jacobi_svd_rm(&r, k, n);
        let u = matmul_rm(&q, m, k, &ur, s.len());
        return (u, s, vh);
    }
    jacobi_svd_rm(a, m, n)
}

/// One-sided Jacobi kernel; requires `m >= n`.
fn jacobi_svd_rm(a: &[C64], m: usize, n: usize) -> (Vec<C64>, Vec<f64>, Vec<C64>) {
    let zero = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    // Work on x = a^T so the columns being orthogonalized are contiguous.
    let mut x = vec![zero; n * m];
    for i in 0..m {
        for j in 0..n {
            x[j * m + i] = a[i * n + j];
        }
    }
    // vt accumulates the right-unitary, also transposed (rows = columns of v).
    let mut vt = vec![zero; n * n];
    for j in 0..n {
        vt[j * n + j] = one;
    }
    let tol = 1e-14_f64;
    for _sweep in 0..60 {
        let mut off = 0.0_f64;
        for p in 0..n {
            for q in p + 1..n {
                let (mut app, mut aqq) = (0.0_f64, 0.0_f64);
                let mut apq = zero;
                for i in 0..m {
                    let xp = x[p * m + i];
                    let xq = x[q * m + i];
                    app += xp.norm_sqr();
                    aqq += xq.norm_sqr();
                    apq += xp.conj() * xq;
                }
                let beta = apq.norm();
                if app <= 0.0 || aqq <= 0.0 || beta <= tol * (app * aqq).sqrt() {
                    continue;
                }
                off = off.max(beta / (app * aqq).sqrt());
                let phi = apq / beta;
                let tau = (aqq - app) / (2.0 * beta);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let cphi = phi.conj();
                for i in 0..m {
                    let xp = x[p * m + i];
                    let xq = x[q * m + i];
                    x[p * m + i] = xp * c - xq * cphi * s;
                    x[q * m + i] = xp * s + xq * cphi * c;
                }
                for i in 0..n {
                    let vp = vt[p * n + i];
                    let vq = vt[q * n + i];
                    vt[p * n + i] = vp * c - vq * cphi * s;
                    vt[q * n + i] = vp * s + vq * cphi * c;
                }
            }
        }
        if off <= tol {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n)
        .map(|j| x[j * m..(j + 1) * m].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).expect("finite norms"));
    let k = m.min(n);
    let mut s = Vec::with_capacity(k);
    let mut u = vec![zero; m * k];
    let mut vh = vec![zero; k * n];
    for (col, &j) in order[..k].iter().enumerate() {
        let sigma = norms[j];
        s.push(sigma);
        if sigma > 0.0 {
            let inv = 1.0 / sigma;
            for i in 0..m {
                u[i * k + col] = x[j * m + i] * inv;
            }
        } else {
            u[col * k + col] = one;
        }
        for i in 0..n {
            vh[col * n + i] = vt[j * n + i].conj();
        }
    }
    (u, s, vh)
}

fn split_orders<'a>(t: &'a DenseTensor, row_legs: &[&str]) -> Result<SmallVec<[&'a str; 6]>> {
    if row_legs.is_empty() {
        return Err(Error::InvalidSplit("empty row-leg set".into()));
    }
    for (i, l) in row_legs.iter().enumerate() {
        t.axis(l)?;
        if row_legs[..i].contains(l) {
            return Err(Error::DuplicateLeg(l.to_string()));
        }
    }
    if row_legs.len() == t.rank() {
        return Err(Error::InvalidSplit("row legs cover every leg".into()));
    }
    let mut order: SmallVec<[&str; 6]> = row_legs
        .iter()
        .map(|l| t.labels.iter().find(|s| s.as_str() == *l).unwrap().as_str())
        .collect();
    order.extend(
        t.labels
            .iter()
            .map(|s| s.as_str())
            .filter(|l| !row_legs.contains(l)),
    );
    Ok(order)
}

/// QR split over a leg bipartition: `q` carries `row_legs` plus a new `bond`
/// leg and has orthonormal columns; `r` carries `bond` plus the remaining
/// legs. The diagonal of `r` is made real nonnegative for determinism.
pub fn qr_split(t: &DenseTensor, row_legs: &[&str], bond: &str) -> Result<(DenseTensor, DenseTensor)> {
    let order = split_orders(t, row_legs)?;
    let nrow = row_legs.len();
    let t2 = t.ordered(&order)?;
    let m: usize = t2.dims[..nrow].iter().product();
    let n: usize = t2.dims[nrow..].iter().product();
    let (q, r, k) = qr_rm(&t2.data, m, n);

    let mut q_labels: Labels = t2.labels[..nrow].iter().cloned().collect();
    q_labels.push(Label::new(bond));
    let mut q_dims = Dims::from_slice(&t2.dims[..nrow]);
    q_dims.push(k);
    let q_tensor = DenseTensor {
        labels: q_labels,
        dims: q_dims,
        data: q,
    };

    let mut r_labels = Labels::new();
    r_labels.push(Label::new(bond));
    r_labels.extend(t2.labels[nrow..].iter().cloned());
    let mut r_dims = Dims::new();
    r_dims.push(k);
    r_dims.extend_from_slice(&t2.dims[nrow..]);
    let r_tensor = DenseTensor {
        labels: r_labels,
        dims: r_dims,
        data: r,
    };
    Ok((q_tensor, r_tensor))
}

/// Truncated SVD over a leg bipartition.
pub fn svd_split(
    t: &DenseTensor,
    row_legs: &[&str],
    trunc: &SvdTruncation,
    bond: &str,
) -> Result<SvdSplit> {
    let order = split_orders(t, row_legs)?;
    let nrow = row_legs.len();
    let t2 = t.ordered(&order)?;
    let m: usize = t2.dims[..nrow].iter().product();
    let n: usize = t2.dims[nrow..].iter().product();
    let (u_full, s_full, vh_full) = svd_rm(&t2.data, m, n);
    let k = s_full.len();

    let smax = s_full.first().copied().unwrap_or(0.0);
    let mut keep = s_full
        .iter()
        .filter(|&&s| s > trunc.rel_cutoff * smax)
        .count();
    keep = keep.clamp(1, trunc.max_rank.min(k));
    let discarded_weight = s_full[keep..]
        .iter()
        .map(|s| s * s)
        .sum::<f64>()
        .sqrt();

    // u: first `keep` of k columns; vh rows are already contiguous.
    let mut u = Vec::with_capacity(m * keep);
    for i in 0..m {
        u.extend_from_slice(&u_full[i * k..i * k + keep]);
    }
    let mut u_labels: Labels = t2.labels[..nrow].iter().cloned().collect();
    u_labels.push(Label::new(bond));
    let mut u_dims = Dims::from_slice(&t2.dims[..nrow]);
    u_dims.push(keep);
    let u_tensor = DenseTensor {
        labels: u_labels,
        dims: u_dims,
        data: u,
    };

    let mut v_labels = Labels::new();
    v_labels.push(Label::new(bond));
    v_labels.extend(t2.labels[nrow..].iter().cloned());
    let mut v_dims = Dims::new();
    v_dims.push(keep);
    v_dims.extend_from_slice(&t2.dims[nrow..]);
    let v_tensor = DenseTensor {
        labels: v_labels,
        dims: v_dims,
        data: vh_full[..keep * n].to_vec(),
    };
    Ok(SvdSplit {
        u: u_tensor,
        s: s_full[..keep].to_vec(),
        v: v_tensor,
        discarded_weight,
    })
}

/// `u · diag(s) · v` recombined into one tensor (test and bookkeeping helper).
pub fn svd_recompose(split: &SvdSplit, bond: &str) -> Result<DenseTensor> {
    let mut us = split.u.clone();
    let ax = us.axis(bond)?;
    debug_assert_eq!(ax, us.rank() - 1);
    let bond_dim = us.dims[ax];
    let chunk = bond_dim;
    for row in us.data.chunks_mut(chunk) {
        for (j, z) in row.iter_mut().enumerate() {
            *z *= C64::new(split.s[j], 0.0);
        }
    }
    contract(&us, &split.v, &[(bond, bond)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(labels: Vec<&str>, dims: Vec<usize>, seed: u64) -> DenseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = dims.iter().product();
        let data = (0..n)
            .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        DenseTensor::new(labels, dims, data).unwrap()
    }

    #[test]
    fn contract_identity_returns_vector() {
        let id = DenseTensor::from_fn(vec!["row", "col"], vec![2, 2], |i| {
            C64::new(if i[0] == i[1] { 1.0 } else { 0.0 }, 0.0)
        })
        .unwrap();
        let v = DenseTensor::new(vec!["leg"], vec![2], vec![C64::new(0.3, 0.1), C64::new(-0.7, 0.4)])
            .unwrap();
        let out = contract(&id, &v, &[("col", "leg")]).unwrap();
        assert_eq!(out.labels(), &["row".to_string()]);
        for (a, b) in out.data().iter().zip(v.data()) {
            assert_abs_diff_eq!(a.re, b.re, epsilon = 1e-15);
            assert_abs_diff_eq!(a.im, b.im, epsilon = 1e-15);
        }
    }

    #[test]
    fn delta_tensor_pair_contracts_to_identity() {
        let delta = DenseTensor::from_fn(vec!["i", "j", "k"], vec![2, 2, 2], |x| {
            C64::new(if x[0] == x[1] && x[1] == x[2] { 1.0 } else { 0.0 }, 0.0)
        })
        .unwrap();
        let out = contract(
            &delta,
            &delta.conj().renamed("i", "i2").unwrap(),
            &[("j", "j"), ("k", "k")],
        )
        .unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let expect = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(out.value(&[a, b]).re, expect, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn contract_matches_triple_loop_matmul() {
        let a = random_tensor(vec!["i", "j"], vec![2, 3], 11);
        let b = random_tensor(vec!["j", "k"], vec![3, 4], 12);
        let out = contract(&a, &b, &[("j", "j")]).unwrap();
        for i in 0..2 {
            for k in 0..4 {
                let mut acc = C64::new(0.0, 0.0);
                for j in 0..3 {
                    acc += a.value(&[i, j]) * b.value(&[j, k]);
                }
                let got = out.value(&[i, k]);
                assert_abs_diff_eq!(got.re, acc.re, epsilon = 1e-13);
                assert_abs_diff_eq!(got.im, acc.im, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn contract_rejects_mismatched_dims_and_unknown_legs() {
        let a = random_tensor(vec!["i", "j"], vec![2, 3], 1);
        let b = random_tensor(vec!["j", "k"], vec![4, 2], 2);
        assert!(matches!(
            contract(&a, &b, &[("j", "j")]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            contract(&a, &b, &[("nope", "j")]),
            Err(Error::UnknownLeg(_))
        ));
    }

    #[test]
    fn qr_reconstructs_and_q_is_isometric() {
        let t = random_tensor(vec!["a", "b", "c"], vec![3, 2, 4], 21);
        let (q, r) = qr_split(&t, &["a", "b"], "bond").unwrap();
        let qdagq = contract(
            &q.conj().renamed("bond", "bond2").unwrap(),
            &q,
            &[("a", "a"), ("b", "b")],
        )
        .unwrap();
        let k = q.dim("bond").unwrap();
        for i in 0..k {
            for j in 0..k {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(qdagq.value(&[i, j]).re, expect, epsilon = 1e-12);
                assert_abs_diff_eq!(qdagq.value(&[i, j]).im, 0.0, epsilon = 1e-12);
            }
        }
        let back = contract(&q, &r, &[("bond", "bond")]).unwrap();
        let t2 = t.permuted(&["a", "b", "c"]).unwrap();
        let diff: f64 = back
            .data()
            .iter()
            .zip(t2.data())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(diff / t.norm() < 1e-12);
    }

    #[test]
    fn qr_of_rank2_matches_gram_schmidt() {
        // Gram-Schmidt oracle on a 3x2 complex matrix.
        let t = random_tensor(vec!["r", "c"], vec![3, 2], 31);
        let (q, _r) = qr_split(&t, &["r"], "bond").unwrap();

        let col = |j: usize| -> Vec<C64> { (0..3).map(|i| t.value(&[i, j])).collect() };
        let dot = |x: &[C64], y: &[C64]| -> C64 {
            x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
        };
        let mut q0 = col(0);
        let n0 = dot(&q0, &q0).re.sqrt();
        for z in &mut q0 {
            *z /= n0;
        }
        let mut q1 = col(1);
        let proj = dot(&q0, &q1);
        for (z, b) in q1.iter_mut().zip(&q0) {
            *z -= proj * b;
        }
        let n1 = dot(&q1, &q1).re.sqrt();
        for z in &mut q1 {
            *z /= n1;
        }
        // Phase convention: both force a real nonnegative diagonal on r, so the
        // columns agree up to that same convention.
        for i in 0..3 {
            let got0 = q.value(&[i, 0]);
            let got1 = q.value(&[i, 1]);
            assert_abs_diff_eq!(got0.re, q0[i].re, epsilon = 1e-12);
            assert_abs_diff_eq!(got0.im, q0[i].im, epsilon = 1e-12);
            assert_abs_diff_eq!(got1.re, q1[i].re, epsilon = 1e-12);
            assert_abs_diff_eq!(got1.im, q1[i].im, epsilon = 1e-12);
        }
    }

    #[test]
    fn qr_of_isometry_gives_unitary_r() {
        let t = random_tensor(vec!["a", "b"], vec![4, 2], 41);
        let (iso, _) = qr_split(&t, &["a"], "b2").unwrap();
        // iso has orthonormal columns; QR over its row leg must give unitary r.
        let (q2, r2) = qr_split(&iso, &["a"], "bond").unwrap();
        let rr = contract(
            &r2.conj().renamed("b2", "b3").unwrap(),
            &r2,
            &[("bond", "bond")],
        )
        .unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(rr.value(&[i, j]).re, expect, epsilon = 1e-12);
            }
        }
        let back = contract(&q2, &r2, &[("bond", "bond")]).unwrap();
        let diff: f64 = back
            .data()
            .iter()
            .zip(iso.data())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(diff < 1e-12);
    }

    #[test]
    fn qr_rejects_empty_and_full_row_sets() {
        let t = random_tensor(vec!["a", "b"], vec![2, 2], 51);
        assert!(qr_split(&t, &[], "bond").is_err());
        assert!(qr_split(&t, &["a", "b"], "bond").is_err());
    }

    #[test]
    fn svd_rank1_product_has_zero_discarded_weight() {
        let u = random_tensor(vec!["a"], vec![3], 61);
        let v = random_tensor(vec!["b"], vec![4], 62);
        let t = DenseTensor::from_fn(vec!["a", "b"], vec![3, 4], |i| {
            u.value(&[i[0]]) * v.value(&[i[1]])
        })
        .unwrap();
        let split = svd_split(&t, &["a"], &SvdTruncation::max_rank(1).unwrap(), "bond").unwrap();
        assert!(split.discarded_weight < 1e-12);
    }

    #[test]
    fn svd_of_diag_321_truncated_to_rank2() {
        let t = DenseTensor::from_fn(vec!["a", "b"], vec![3, 3], |i| {
            C64::new(if i[0] == i[1] { (3 - i[0]) as f64 } else { 0.0 }, 0.0)
        })
        .unwrap();
        let split = svd_split(&t, &["a"], &SvdTruncation::max_rank(2).unwrap(), "bond").unwrap();
        assert_abs_diff_eq!(split.discarded_weight, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(split.s[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(split.s[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn svd_full_rank_reconstructs() {
        let t = random_tensor(vec!["a", "b"], vec![4, 4], 71);
        let split = svd_split(&t, &["a"], &SvdTruncation::none(), "bond").unwrap();
        let back = svd_recompose(&split, "bond").unwrap();
        let diff: f64 = back
            .data()
            .iter()
            .zip(t.data())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(diff / t.norm() < 1e-12);
        // Frobenius norm identity with no truncation.
        let s2: f64 = split.s.iter().map(|s| s * s).sum();
        assert_abs_diff_eq!(s2, t.norm() * t.norm(), epsilon = 1e-12 * t.norm() * t.norm());
    }

    #[test]
    fn svd_truncated_error_equals_discarded_weight() {
        let t = random_tensor(vec!["a", "b"], vec![5, 6], 81);
        let split = svd_split(&t, &["a"], &SvdTruncation::max_rank(2).unwrap(), "bond").unwrap();
        let back = svd_recompose(&split, "bond").unwrap();
        let diff: f64 = back
            .data()
            .iter()
            .zip(t.data())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert_abs_diff_eq!(diff, split.discarded_weight, epsilon = 1e-10 * diff.max(1.0));
    }

    #[test]
    fn truncation_validation() {
        assert!(SvdTruncation::new(0, 0.0).is_err());
        assert!(SvdTruncation::new(2, 1.0).is_err());
        assert!(SvdTruncation::new(2, -0.1).is_err());
        assert!(SvdTruncation::new(2, 0.5).is_ok());
    }

    #[test]
    fn json_round_trip() {
        let t = random_tensor(vec!["x", "y", "z"], vec![2, 3, 2], 91);
        let json = serde_json::to_string(&t).unwrap();
        let back: DenseTensor = serde_json::from_str(&json).unwrap();
        assert_eq!(t, back);
        assert!(json.contains("\"dims\""));
        assert!(json.contains("\"labels\""));
        assert!(json.contains("\"re\""));
        assert!(json.contains("\"im\""));
    }

    #[test]
    fn rejects_malformed_json_shape() {
        let bad = r#"{"dims":[2,2],"labels":["a","b"],"re":[1.0],"im":[0.0]}"#;
        assert!(serde_json::from_str::<DenseTensor>(bad).is_err());
    }

    proptest! {
        #[test]
        fn chain_contraction_is_associative(seed in 0u64..500) {
            let a = random_tensor(vec!["i", "j"], vec![3, 4], seed);
            let b = random_tensor(vec!["j", "k"], vec![4, 2], seed.wrapping_add(1));
            let c = random_tensor(vec!["k", "l"], vec![2, 3], seed.wrapping_add(2));
            let left = contract(&contract(&a, &b, &[("j", "j")]).unwrap(), &c, &[("k", "k")]).unwrap();
            let right = contract(&a, &contract(&b, &c, &[("k", "k")]).unwrap(), &[("j", "j")]).unwrap();
            let scale = left.norm().max(1e-30);
            let diff: f64 = left
                .data()
                .iter()
                .zip(right.data())
                .map(|(x, y)| (x - y).norm_sqr())
                .sum::<f64>()
                .sqrt();
            prop_assert!(diff / scale < 1e-12);
        }

        #[test]
        fn contraction_is_leg_permutation_invariant(seed in 0u64..500) {
            let a = random_tensor(vec!["i", "j", "k"], vec![2, 3, 2], seed);
            let b = random_tensor(vec!["k", "m"], vec![2, 4], seed.wrapping_add(7));
            let direct = contract(&a, &b, &[("k", "k")]).unwrap();
            let shuffled = contract(
                &a.permuted(&["k", "i", "j"]).unwrap(),
                &b.permuted(&["m", "k"]).unwrap(),
                &[("k", "k")],
            )
            .unwrap()
            .permuted(&["i", "j", "m"])
            .unwrap();
            for (x, y) in direct.data().iter().zip(shuffled.data()) {
                prop_assert!((x - y).norm() < 1e-14);
            }
        }
    }
}
