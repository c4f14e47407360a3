//! Toeplitz positional channel and its diagonal-sparse pruning.
//!
//! The causal map `W[i][j] = w[i − j]` (zero above the diagonal) is cut into
//! `s × s` blocks after zero-padding the top rows and right columns so the
//! side becomes a multiple of `s`. Padding on those two edges keeps the
//! padded map Toeplitz, so every block on a block diagonal holds the same
//! values and the leftmost block of each diagonal can stand in for all of
//! them. Pruning picks the `⌊(n/s)·τ⌋` leftmost blocks with the smallest
//! absolute mass and slides each one down its diagonal.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const DEFAULT_STRIDE: usize = 8;

/// Learned weight per non-negative relative offset `d = i − j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzPositionalWeights {
    pub w: Vec<f64>,
}

impl ToeplitzPositionalWeights {
    pub fn new(w: Vec<f64>) -> Self {
        ToeplitzPositionalWeights { w }
    }

    pub fn n(&self) -> usize {
        self.w.len()
    }
}

/// Causal `n × n` Toeplitz map.
pub fn materialize(weights: &ToeplitzPositionalWeights, n: usize) -> Result<Matrix> {
    if n > weights.n() {
        return Err(Error::Config(format!(
            "cannot materialize a {n}x{n} map from {} stored offsets",
            weights.n()
        )));
    }
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        let row = out.row_mut(i);
        for (j, v) in row[..=i].iter_mut().enumerate() {
            *v = weights.w[i - j];
        }
    }
    Ok(out)
}

/// Backward of [`materialize`]: sums the upstream gradient along each
/// lower diagonal.
pub fn toeplitz_gradient(upstream: &Matrix) -> Vec<f64> {
    let n = upstream.rows();
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let row = upstream.row(i);
        for j in 0..=i.min(upstream.cols().saturating_sub(1)) {
            grad[i - j] += row[j];
        }
    }
    grad
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockGrid {
    pub n: usize,
    pub stride: usize,
    pub num_blocks: usize,
    pub pad: usize,
}

impl BlockGrid {
    pub fn padded_len(&self) -> usize {
        self.n + self.pad
    }

    /// Flat block index of original cell `(i, j)`; rows shift down by `pad`.
    #[inline]
    pub fn block_of(&self, i: usize, j: usize) -> usize {
        ((i + self.pad) / self.stride) * self.num_blocks + j / self.stride
    }

    /// Whether block `(r, c)` touches a causal cell `j ≤ i` of the original map.
    #[inline]
    pub fn block_is_causal(&self, r: usize, c: usize) -> bool {
        (r + 1) * self.stride > c * self.stride + self.pad
    }
}

pub fn block_divide(n: usize, s: usize) -> Result<BlockGrid> {
    if s == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    if n == 0 {
        return Err(Error::Config("sequence length must be >= 1".into()));
    }
    let pad = (s - n % s) % s;
    Ok(BlockGrid {
        n,
        stride: s,
        num_blocks: (n + pad) / s,
        pad,
    })
}

/// Zero-pads the top rows and right columns up to a multiple of `s`.
pub fn pad_map(w: &Matrix, s: usize) -> Result<Matrix> {
    let grid = block_divide(w.rows(), s)?;
    if w.rows() != w.cols() {
        return Err(Error::Shape {
            op: "pad_map",
            lhs: w.shape(),
            rhs: (w.cols(), w.rows()),
        });
    }
    let m = grid.padded_len();
    let mut out = Matrix::zeros(m, m);
    for i in 0..grid.n {
        out.row_mut(i + grid.pad)[..grid.n].copy_from_slice(w.row(i));
    }
    Ok(out)
}

/// Sum of absolute values of each block in the first block column of a
/// padded map.
pub fn leftmost_scores(padded: &Matrix, s: usize) -> Result<Vec<f64>> {
    if s == 0 || !padded.rows().is_multiple_of(s) || padded.rows() != padded.cols() {
        return Err(Error::Config(format!(
            "map of shape {:?} is not divisible into {s}x{s} blocks",
            padded.shape()
        )));
    }
    let nb = padded.rows() / s;
    Ok((0..nb)
        .map(|r| {
            (r * s..(r + 1) * s)
                .map(|i| padded.row(i)[..s].iter().map(|v| v.abs()).sum::<f64>())
                .sum()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMask {
    pub grid: BlockGrid,
    pub tau: f64,
    /// Flat row-major indices into the padded block grid.
    pub pruned: BTreeSet<usize>,
}

/// `⌊num_blocks · τ⌋`, tolerant of representation error in `τ`.
pub fn blocks_to_prune(num_blocks: usize, tau: f64) -> usize {
    ((num_blocks as f64 * tau + 1e-9).floor() as usize).min(num_blocks)
}

/// Diagonal-sliding mask generation over an unpadded causal map.
pub fn generate_sparse_mask(w: &Matrix, s: usize, tau: f64) -> Result<SparseMask> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("pruning ratio must lie in [0, 1], got {tau}")));
    }
    let grid = block_divide(w.rows(), s)?;
    let scores = leftmost_scores(&pad_map(w, s)?, s)?;
    let nb = grid.num_blocks;
    let k = blocks_to_prune(nb, tau);

    // Smallest scores first; equal scores resolve to the lower row.
    let mut order: Vec<usize> = (0..nb).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));

    let max_index = nb * nb - 1;
    let increment = nb + 1;
    let mut pruned = BTreeSet::new();
    for &row in &order[..k] {
        let mut index = row * nb;
        while index <= max_index {
            pruned.insert(index);
            index += increment;
        }
    }
    Ok(SparseMask { grid, tau, pruned })
}

impl SparseMask {
    pub fn empty(n: usize, s: usize) -> Result<Self> {
        Ok(SparseMask {
            grid: block_divide(n, s)?,
            tau: 0.0,
            pruned: BTreeSet::new(),
        })
    }

    #[inline]
    pub fn is_pruned(&self, i: usize, j: usize) -> bool {
        self.pruned.contains(&self.grid.block_of(i, j))
    }

    /// Checks index range and that the pruned set is closed along diagonals.
    pub fn validate(&self) -> Result<()> {
        let nb = self.grid.num_blocks;
        for &f in &self.pruned {
            if f >= nb * nb {
                return Err(Error::Data(format!("pruned block {f} outside a {nb}x{nb} grid")));
            }
            let next = f + nb + 1;
            let (r, c) = (f / nb, f % nb);
            if r + 1 < nb && c + 1 < nb && !self.pruned.contains(&next) {
                return Err(Error::Data(format!(
                    "pruned block {f} is not followed along its diagonal by {next}"
                )));
            }
        }
        Ok(())
    }

    /// Dense lower-triangular block rows with pruned blocks removed, in
    /// row-major order.
    pub fn kept_blocks(&self) -> Vec<(usize, usize)> {
        let nb = self.grid.num_blocks;
        let mut out = Vec::new();
        for r in 0..nb {
            for c in 0..nb {
                if self.grid.block_is_causal(r, c) && !self.pruned.contains(&(r * nb + c)) {
                    out.push((r, c));
                }
            }
        }
        out
    }

    /// Text form: `n s tau` header then one sorted flat index per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.grid.n, self.grid.stride, self.tau);
        for idx in &self.pruned {
            let _ = writeln!(out, "{idx}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Data("empty mask file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Data(format!("mask header must be `n s tau`, got `{header}`")));
        }
        let bad = |what: &str| Error::Data(format!("mask header: invalid {what} in `{header}`"));
        let n: usize = fields[0].parse().map_err(|_| bad("n"))?;
        let s: usize = fields[1].parse().map_err(|_| bad("s"))?;
        let tau: f64 = fields[2].parse().map_err(|_| bad("tau"))?;
        let mut pruned = BTreeSet::new();
        for (lineno, line) in lines {
            let idx: usize = line
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("mask line {}: `{line}` is not an index", lineno + 1)))?;
            pruned.insert(idx);
        }
        let mask = SparseMask {
            grid: block_divide(n, s)?,
            tau,
            pruned,
        };
        mask.validate()?;
        Ok(mask)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Zeroes every cell that falls in a pruned block.
pub fn apply_sparse_mask(w: &Matrix, mask: &SparseMask) -> Result<Matrix> {
    check_mask_shape(w, mask)?;
    let mut out = w.clone();
    if mask.pruned.is_empty() {
        return Ok(out);
    }
    for i in 0..w.rows() {
        let row = out.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            if mask.is_pruned(i, j) {
                *v = 0.0;
            }
        }
    }
    Ok(out)
}

fn check_mask_shape(w: &Matrix, mask: &SparseMask) -> Result<()> {
    if w.rows() != mask.grid.n || w.cols() != mask.grid.n {
        return Err(Error::Shape {
            op: "sparse mask",
            lhs: w.shape(),
            rhs: (mask.grid.n, mask.grid.n),
        });
    }
    Ok(())
}

/// Precomputed list of surviving causal blocks for block-skipping products.
#[derive(Debug, Clone)]
pub struct BlockSparsePlan {
    grid: BlockGrid,
    blocks: Vec<(usize, usize)>,
}

impl BlockSparsePlan {
    pub fn new(mask: &SparseMask) -> Self {
        BlockSparsePlan {
            grid: mask.grid,
            blocks: mask.kept_blocks(),
        }
    }

    /// Block multiplies performed per product.
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// `W · V` visiting only kept causal blocks; pruned blocks and the strict
    /// upper triangle are never read.
    pub fn matmul(&self, w: &Matrix, v: &Matrix) -> Result<Matrix> {
        let g = self.grid;
        if w.rows() != g.n || w.cols() != g.n || v.rows() != g.n {
            return Err(Error::Shape {
                op: "BlockSparsePlan::matmul",
                lhs: w.shape(),
                rhs: v.shape(),
            });
        }
        let d = v.cols();
        let mut out = Matrix::zeros(g.n, d);
        let (ws, vs) = (w.as_slice(), v.as_slice());
        for &(r, c) in &self.blocks {
            let row_lo = (r * g.stride).max(g.pad) - g.pad;
            let row_hi = (r * g.stride + g.stride) - g.pad;
            let col_lo = c * g.stride;
            let col_hi = (col_lo + g.stride).min(g.n);
            for i in row_lo..row_hi {
                let out_row = &mut out.as_mut_slice()[i * d..(i + 1) * d];
                for j in col_lo..col_hi.min(i + 1) {
                    let wij = ws[i * g.n + j];
                    for (o, &x) in out_row.iter_mut().zip(&vs[j * d..(j + 1) * d]) {
                        *o += wij * x;
                    }
                }
            }
        }
        Ok(out)
    }

    /// `W · x` for a single vector.
    pub fn matvec(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        let g = self.grid;
        debug_assert_eq!(w.len(), g.n * g.n);
        out.fill(0.0);
        for &(r, c) in &self.blocks {
            let row_lo = (r * g.stride).max(g.pad) - g.pad;
            let row_hi = (r * g.stride + g.stride) - g.pad;
            let col_lo = c * g.stride;
            let col_hi = (col_lo + g.stride).min(g.n);
            for i in row_lo..row_hi {
                let hi = col_hi.min(i + 1);
                if hi <= col_lo {
                    continue;
                }
                let wr = &w[i * g.n + col_lo..i * g.n + hi];
                out[i] += wr.iter().zip(&x[col_lo..hi]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlopsReport {
    pub kept_blocks: usize,
    pub dense_blocks: usize,
    pub reduction_percent: f64,
}

/// Block-level cost of the positional product with and without the mask.
pub fn flops_count(n: usize, s: usize, mask: &SparseMask) -> Result<FlopsReport> {
    let grid = block_divide(n, s)?;
    if grid != mask.grid {
        return Err(Error::Config(format!(
            "mask built for n={}, s={} used with n={n}, s={s}",
            mask.grid.n, mask.grid.stride
        )));
    }
    let nb = grid.num_blocks;
    let mut dense = 0;
    let mut pruned = 0;
    for r in 0..nb {
        for c in 0..nb {
            if grid.block_is_causal(r, c) {
                dense += 1;
                if mask.pruned.contains(&(r * nb + c)) {
                    pruned += 1;
                }
            }
        }
    }
    let kept = dense - pruned;
    Ok(FlopsReport {
        kept_blocks: kept,
        dense_blocks: dense,
        reduction_percent: 100.0 * (1.0 - kept as f64 / dense as f64),
    })
}
