//! Standard-form semidefinite programming: problem types, SDPA sparse-format
//! import/export, and a dense primal-dual interior-point solver.
//!
//! The primal problem is
//!
//! ```text
//!   minimize    <C, X>
//!   subject to  <A_k, X> = b_k   (k = 1..m)
//!               X ⪰ 0
//! ```
//!
//! with `X` block-diagonal: a mix of dense symmetric blocks and diagonal
//! (nonnegative-vector) blocks.  The solver is an infeasible-start
//! path-following method with Nesterov–Todd scaling and a Mehrotra
//! predictor-corrector step; the Schur complement is formed densely and
//! factored by Cholesky.  That combination is exact for the problem sizes this
//! crate produces (matrix sides up to a few hundred, a few thousand equality
//! rows) and keeps the implementation free of sparse-factorization machinery.
//!
//! Conventions: constraint matrices are stored as sparse upper-triangle entry
//! lists; an entry `(i, j, v)` with `i < j` denotes the symmetric pair
//! `A[i][j] = A[j][i] = v`, so its inner-product contribution is
//! `v * (X[i][j] + X[j][i])`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

/// One block of the block-diagonal variable.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct BlockSpec {
    pub size: usize,
    /// Diagonal blocks restrict the block to a nonnegative vector; in SDPA
    /// files they appear with a negative size.
    pub diag: bool,
}

/// One entry of a sparse symmetric coefficient matrix, upper triangle
/// (`i <= j`), 0-based.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct MatEntry {
    pub block: usize,
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// A standard-form SDP with block-diagonal variable.
#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct SdpProblem {
    pub blocks: Vec<BlockSpec>,
    /// Sparse entries of the cost matrix `C`.
    pub cost: Vec<MatEntry>,
    /// Sparse entries of each constraint matrix `A_k`.
    pub rows: Vec<Vec<MatEntry>>,
    /// Right-hand sides `b_k`, parallel to `rows`.
    pub b: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("row {row}: entry references block {block} but only {nblocks} blocks exist")]
    BadBlock { row: usize, block: usize, nblocks: usize },
    #[error("row {row}: entry ({i},{j}) out of range for block {block} of size {size}")]
    BadIndex { row: usize, block: usize, i: usize, j: usize, size: usize },
    #[error("row {row}: off-diagonal entry ({i},{j}) in diagonal block {block}")]
    OffDiagonalInDiagBlock { row: usize, block: usize, i: usize, j: usize },
    #[error("rows/right-hand-side length mismatch: {rows} rows vs {rhs} rhs values")]
    RhsMismatch { rows: usize, rhs: usize },
}

impl SdpProblem {
    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Total variable dimension: `Σ n_b(n_b+1)/2` over dense blocks plus the
    /// sizes of diagonal blocks.
    pub fn num_scalar_vars(&self) -> usize {
        self.blocks
            .iter()
            .map(|bs| if bs.diag { bs.size } else { bs.size * (bs.size + 1) / 2 })
            .sum()
    }

    /// Side lengths summed over blocks (diagonal blocks count their size).
    pub fn total_side(&self) -> usize {
        self.blocks.iter().map(|bs| bs.size).sum()
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        if self.rows.len() != self.b.len() {
            return Err(SdpError::RhsMismatch { rows: self.rows.len(), rhs: self.b.len() });
        }
        let check = |row: usize, es: &[MatEntry]| -> Result<(), SdpError> {
            for e in es {
                let bs = self.blocks.get(e.block).ok_or(SdpError::BadBlock {
                    row,
                    block: e.block,
                    nblocks: self.blocks.len(),
                })?;
                if e.i > e.j || e.j >= bs.size {
                    return Err(SdpError::BadIndex {
                        row,
                        block: e.block,
                        i: e.i,
                        j: e.j,
                        size: bs.size,
                    });
                }
                if bs.diag && e.i != e.j {
                    return Err(SdpError::OffDiagonalInDiagBlock {
                        row,
                        block: e.block,
                        i: e.i,
                        j: e.j,
                    });
                }
            }
            Ok(())
        };
        check(usize::MAX, &self.cost)?;
        for (k, r) in self.rows.iter().enumerate() {
            check(k, r)?;
        }
        Ok(())
    }

    /// Sort entries, merge duplicates, drop exact zeros, normalize `-0.0`.
    /// Canonical problems compare bit-exactly after an SDPA round trip.
    pub fn canonicalize(&mut self) {
        let fix = |es: &mut Vec<MatEntry>| {
            es.sort_by_key(|e| (e.block, e.i, e.j));
            let mut out: Vec<MatEntry> = Vec::with_capacity(es.len());
            for e in es.drain(..) {
                if let Some(last) = out.last_mut() {
                    if (last.block, last.i, last.j) == (e.block, e.i, e.j) {
                        last.value += e.value;
                        continue;
                    }
                }
                out.push(e);
            }
            out.retain(|e| e.value != 0.0);
            for e in out.iter_mut() {
                if e.value == 0.0 {
                    e.value = 0.0;
                }
            }
            *es = out;
        };
        fix(&mut self.cost);
        for r in self.rows.iter_mut() {
            fix(r);
        }
        for v in self.b.iter_mut() {
            if *v == 0.0 {
                *v = 0.0;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// SDPA sparse format
// ---------------------------------------------------------------------------

/// Format a double like C's `%.17g`: up to 17 significant digits, trailing
/// zeros stripped, scientific notation outside the `%g` fixed-point window.
/// 17 significant digits guarantee an exact round trip through `str::parse  `.
pub fn fmt_g17(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".to_string()
        } else if x > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    let neg = x < 0.0;
    let s = format!("{:.16e}", x.abs());
    let (mant, exp) = s.split_once('e').expect("exponential format");
    let exp: i32 = exp.parse().expect("exponent parses");
    let digits: String = mant.chars().filter(|c| c.is_ascii_digit()).collect();
    let digits = digits.trim_end_matches('0');
    let digits = if digits.is_empty() { "0" } else { digits };
    let mut out = String::new();
    if neg {
        out.push('-');
    }
    if exp >= -4 && exp < 17 {
        if exp < 0 {
            out.push_str("0.");
            for _ in 0..(-exp - 1) {
                out.push('0');
            }
            out.push_str(digits);
        } else {
            let ip = exp as usize + 1;
            if digits.len() > ip {
                out.push_str(&digits[..ip]);
                out.push('.');
                out.push_str(&digits[ip..]);
            } else {
                out.push_str(digits);
                for _ in 0..(ip - digits.len()) {
                    out.push('0');
                }
            }
        }
    } else {
        out.push_str(&digits[..1]);
        if digits.len() > 1 {
            out.push('.');
            out.push_str(&digits[1..]);
        }
        out.push('e');
        if exp < 0 {
            out.push('-');
        } else {
            out.push('+');
        }
        let ae = exp.abs();
        if ae < 10 {
            out.push('0');
        }
        out.push_str(&ae.to_string());
    }
    out
}

/// Write a problem in SDPA sparse format (`.dat-s`).
///
/// The file describes the pair
/// `min c^T x  s.t.  Σ x_k F_k - F_0 ⪰ 0` /
/// `max <F_0, Y>  s.t.  <F_k, Y> = c_k, Y ⪰ 0`;
/// our primal matches the second form with `F_0 = -C`, `F_k = A_k`, `c = b`.
pub fn export_sdpa(p: &SdpProblem) -> String {
    let mut out = String::new();
    out.push_str(&format!("{}\n", p.num_rows()));
    out.push_str(&format!("{}\n", p.blocks.len()));
    let sizes: Vec<String> = p
        .blocks
        .iter()
        .map(|bs| if bs.diag { format!("-{}", bs.size) } else { format!("{}", bs.size) })
        .collect();
    out.push_str(&sizes.join(" "));
    out.push('\n');
    let bvals: Vec<String> = p.b.iter().map(|&v| fmt_g17(v)).collect();
    out.push_str(&bvals.join(" "));
    out.push('\n');
    let mut emit = |matno: usize, es: &[MatEntry], negate: bool| {
        let mut sorted = es.to_vec();
        sorted.sort_by_key(|e| (e.block, e.i, e.j));
        for e in &sorted {
            let v = if negate { -e.value } else { e.value };
            if v == 0.0 {
                continue;
            }
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                matno,
                e.block + 1,
                e.i + 1,
                e.j + 1,
                fmt_g17(v)
            ));
        }
    };
    emit(0, &p.cost, true);
    for (k, r) in p.rows.iter().enumerate() {
        emit(k + 1, r, false);
    }
    out
}

#[derive(Debug, Error)]
pub enum SdpaParseError {
    #[error("line {0}: {1}")]
    Malformed(usize, String),
    #[error("unexpected end of file: {0}")]
    Truncated(String),
}

/// Read SDPA sparse format.  Comment lines start with `*` or `"`; the block
/// size and rhs lines tolerate the `{ } ( ) ,` decoration the format allows.
pub fn parse_sdpa(text: &str) -> Result<SdpProblem, SdpaParseError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l))
        .filter(|(_, l)| {
            let t = l.trim_start();
            !t.is_empty() && !t.starts_with('*') && !t.starts_with('"')
        });
    let clean = |l: &str| -> String {
        l.chars().map(|c| if "{}(),".contains(c) { ' ' } else { c }).collect()
    };

    let (ln, l) = lines.next().ok_or_else(|| SdpaParseError::Truncated("mDIM".into()))?;
    let m: usize = clean(l)
        .split_whitespace()
        .next()
        .ok_or_else(|| SdpaParseError::Malformed(ln, "missing mDIM".into()))?
        .parse()
        .map_err(|_| SdpaParseError::Malformed(ln, "mDIM not an integer".into()))?;

    let (ln, l) = lines.next().ok_or_else(|| SdpaParseError::Truncated("nBLOCK".into()))?;
    let nblock: usize = clean(l)
        .split_whitespace()
        .next()
        .ok_or_else(|| SdpaParseError::Malformed(ln, "missing nBLOCK".into()))?
        .parse()
        .map_err(|_| SdpaParseError::Malformed(ln, "nBLOCK not an integer".into()))?;

    let (ln, l) = lines.next().ok_or_else(|| SdpaParseError::Truncated("block sizes".into()))?;
    let mut blocks = Vec::with_capacity(nblock);
    for tok in clean(l).split_whitespace() {
        let v: i64 = tok
            .parse()
            .map_err(|_| SdpaParseError::Malformed(ln, format!("bad block size `{tok}`")))?;
        if v == 0 {
            return Err(SdpaParseError::Malformed(ln, "zero block size".into()));
        }
        blocks.push(BlockSpec { size: v.unsigned_abs() as usize, diag: v < 0 });
    }
    if blocks.len() != nblock {
        return Err(SdpaParseError::Malformed(
            ln,
            format!("expected {nblock} block sizes, found {}", blocks.len()),
        ));
    }

    let (ln, l) = lines.next().ok_or_else(|| SdpaParseError::Truncated("rhs vector".into()))?;
    let mut b = Vec::with_capacity(m);
    for tok in clean(l).split_whitespace() {
        let v: f64 = tok
            .parse()
            .map_err(|_| SdpaParseError::Malformed(ln, format!("bad rhs value `{tok}`")))?;
        b.push(v);
    }
    if b.len() != m {
        return Err(SdpaParseError::Malformed(ln, format!("expected {m} rhs values, found {}", b.len())));
    }

    let mut cost: Vec<MatEntry> = Vec::new();
    let mut rows: Vec<Vec<MatEntry>> = vec![Vec::new(); m];
    for (ln, l) in lines {
        let cleaned = clean(l);
        let toks: Vec<&str> = cleaned.split_whitespace().collect();
        if toks.len() != 5 {
            return Err(SdpaParseError::Malformed(ln, format!("expected 5 fields, found {}", toks.len())));
        }
        let matno: usize = toks[0]
            .parse()
            .map_err(|_| SdpaParseError::Malformed(ln, "bad matrix number".into()))?;
        let blk: usize = toks[1]
            .parse()
            .map_err(|_| SdpaParseError::Malformed(ln, "bad block number".into()))?;
        let i: usize = toks[2].parse().map_err(|_| SdpaParseError::Malformed(ln, "bad row index".into()))?;
        let j: usize = toks[3].parse().map_err(|_| SdpaParseError::Malformed(ln, "bad col index".into()))?;
        let v: f64 = toks[4].parse().map_err(|_| SdpaParseError::Malformed(ln, "bad value".into()))?;
        if matno > m || blk == 0 || blk > nblock || i == 0 || j == 0 {
            return Err(SdpaParseError::Malformed(ln, "index out of range".into()));
        }
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let e = MatEntry { block: blk - 1, i: i - 1, j: j - 1, value: v };
        if matno == 0 {
            cost.push(MatEntry { value: -e.value, ..e });
        } else {
            rows[matno - 1].push(e);
        }
    }
    let mut p = SdpProblem { blocks, cost, rows, b };
    p.canonicalize();
    Ok(p)
}

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Relative duality-gap tolerance for declaring optimality.
    pub gap_tol: f64,
    /// Relative primal/dual feasibility tolerance.
    pub feas_tol: f64,
    /// Slack allowed below zero for primal-block eigenvalues.
    pub psd_tol: f64,
    pub max_iters: usize,
    /// Fraction of the distance to the cone boundary taken each step.
    pub step_frac: f64,
    /// Looser fallback tolerance: an early-terminated run still counts as
    /// solved if some iterate had relative gap and residuals below this.
    pub accept_tol: f64,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            gap_tol: 1e-8,
            feas_tol: 1e-8,
            psd_tol: 1e-9,
            max_iters: 200,
            step_frac: 0.98,
            accept_tol: 1e-6,
            verbose: false,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SolveStatus {
    Optimal,
    /// A certificate of primal infeasibility was found (dual improving ray).
    PrimalInfeasible,
    /// A certificate of dual infeasibility was found (primal improving ray).
    DualInfeasible,
    NumericalFailure,
    IterationLimit,
}

/// One block of a primal or dual iterate.
#[derive(Clone, Debug)]
pub enum BlockData {
    /// Full symmetric storage, row-major `size*size`.
    Dense { size: usize, data: Vec<f64> },
    Diag { data: Vec<f64> },
}

/// Per-iterate objective/residual record; used by tests to assert invariants
/// along the whole path, not just at the end.
#[derive(Clone, Copy, Debug)]
pub struct IterStat {
    pub pobj: f64,
    pub dobj: f64,
    pub mu: f64,
    pub primal_res: f64,
    pub dual_res: f64,
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub primal_blocks: Vec<BlockData>,
    pub dual_vector: Vec<f64>,
    pub dual_blocks: Vec<BlockData>,
    pub pobj: f64,
    pub dobj: f64,
    /// Relative duality gap `<X,S> / (1 + |pobj| + |dobj|)` at the final iterate.
    pub gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub trace: Vec<IterStat>,
}

/// Structural hints the caller may pass to the solver.  `split_pairs` lists
/// diagonal-block coordinate pairs `(block, plus, minus)` that encode one free
/// scalar as a difference of nonnegatives; the solver recenters such pairs to
/// keep their common growth bounded.
#[derive(Clone, Debug, Default)]
pub struct SolveHints {
    pub split_pairs: Vec<(usize, usize, usize)>,
}

pub fn solve(p: &SdpProblem, opts: &SolverOptions) -> SdpSolution {
    solve_with_hints(p, opts, &SolveHints::default())
}

/// Block-diagonal value aligned with a problem's block structure.
#[derive(Clone, Debug)]
struct BlockVec {
    specs: Vec<BlockSpec>,
    data: Vec<Vec<f64>>,
}

impl BlockVec {
    fn zeros(specs: &[BlockSpec]) -> Self {
        let data = specs
            .iter()
            .map(|bs| vec![0.0; if bs.diag { bs.size } else { bs.size * bs.size }])
            .collect();
        BlockVec { specs: specs.to_vec(), data }
    }

    fn identity_scaled(specs: &[BlockSpec], rho: f64) -> Self {
        let mut v = BlockVec::zeros(specs);
        for (bs, d) in specs.iter().zip(v.data.iter_mut()) {
            if bs.diag {
                d.fill(rho);
            } else {
                for i in 0..bs.size {
                    d[i * bs.size + i] = rho;
                }
            }
        }
        v
    }

    fn dot(&self, other: &BlockVec) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    fn axpy(&mut self, alpha: f64, other: &BlockVec) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += alpha * y;
            }
        }
    }

    fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    fn scatter(&mut self, entries: &[MatEntry], scale: f64) {
        for e in entries {
            let bs = self.specs[e.block];
            if bs.diag {
                self.data[e.block][e.i] += scale * e.value;
            } else {
                self.data[e.block][e.i * bs.size + e.j] += scale * e.value;
                if e.i != e.j {
                    self.data[e.block][e.j * bs.size + e.i] += scale * e.value;
                }
            }
        }
    }

    fn sparse_dot(&self, entries: &[MatEntry]) -> f64 {
        let mut s = 0.0;
        for e in entries {
            let bs = self.specs[e.block];
            if bs.diag {
                s += e.value * self.data[e.block][e.i];
            } else if e.i == e.j {
                s += e.value * self.data[e.block][e.i * bs.size + e.i];
            } else {
                s += e.value
                    * (self.data[e.block][e.i * bs.size + e.j] + self.data[e.block][e.j * bs.size + e.i]);
            }
        }
        s
    }

    fn to_block_data(&self) -> Vec<BlockData> {
        self.specs
            .iter()
            .zip(&self.data)
            .map(|(bs, d)| {
                if bs.diag {
                    BlockData::Diag { data: d.clone() }
                } else {
                    BlockData::Dense { size: bs.size, data: d.clone() }
                }
            })
            .collect()
    }

    fn from_block_data(specs: &[BlockSpec], blocks: &[BlockData]) -> Self {
        let data = blocks
            .iter()
            .map(|b| match b {
                BlockData::Dense { data, .. } => data.clone(),
                BlockData::Diag { data } => data.clone(),
            })
            .collect();
        BlockVec { specs: specs.to_vec(), data }
    }
}

/// Weighted least-squares correction of a primal iterate onto the affine
/// subspace `{X : <A_k, X> = b_k}`: minimize `Σ_b ‖Δ_b‖² / w_b` subject to
/// `A(Δ) = b − A(x)`, with `w_b = (1 + ‖X_b‖_F)²`, giving
/// `Δ = W A^T (A W A^T)^{-1} r`.
///
/// An interior-point iterate satisfies the equalities only to its stopping
/// tolerance *times the iterate norm*, while certificates are judged
/// coefficient by coefficient, so removing the leftover affine error down to
/// linear-algebra precision is worth a factorization.  The block weighting
/// sends the correction where the iterate is large — exactly where it is
/// relatively negligible and where complementarity makes the dual small — so
/// blocks of modest size keep their eigenvalues and the objective barely
/// moves.  The factorization is built once and reused across projection
/// rounds (the weights drift only by the tiny corrections themselves).
struct Polisher<'a> {
    p: &'a SdpProblem,
    weights: Vec<f64>,
    chol: Vec<f64>,
    b_norm: f64,
    /// Allowed absolute residual per row; only the overshoot beyond it is
    /// corrected.  Empty slack means project fully onto the subspace.
    slack: Option<Vec<f64>>,
}

impl<'a> Polisher<'a> {
    fn weighted_scatter(&self, bv: &mut BlockVec, row: &[MatEntry], sgn: f64) {
        for e in row {
            let bs = bv.specs[e.block];
            let wv = sgn * self.weights[e.block] * e.value;
            if bs.diag {
                bv.data[e.block][e.i] += wv;
            } else {
                bv.data[e.block][e.i * bs.size + e.j] += wv;
                if e.i != e.j {
                    bv.data[e.block][e.j * bs.size + e.i] += wv;
                }
            }
        }
    }

    /// Build the weighted row Gram `A W A^T` and factor it.  `None` when the
    /// rows are too dependent to factor even with a ridge.
    fn new(p: &'a SdpProblem, x: &BlockVec, slack: Option<Vec<f64>>) -> Option<Self> {
        let m = p.num_rows();
        let weights: Vec<f64> = x
            .data
            .iter()
            .map(|d| {
                let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                (1.0 + n) * (1.0 + n)
            })
            .collect();
        let b_norm = p.b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut me = Polisher { p, weights, chol: Vec::new(), b_norm, slack };
        let mut gram = vec![0.0; m * m];
        let mut scratch = BlockVec::zeros(&p.blocks);
        for k in 0..m {
            me.weighted_scatter(&mut scratch, &p.rows[k], 1.0);
            for l in k..m {
                let v = scratch.sparse_dot(&p.rows[l]);
                gram[k * m + l] = v;
                gram[l * m + k] = v;
            }
            me.weighted_scatter(&mut scratch, &p.rows[k], -1.0);
        }
        // ridge only as a last resort against nearly dependent rows
        let scale = (0..m).map(|i| gram[i * m + i]).fold(0.0f64, f64::max).max(1e-300);
        let mut ridge = 0.0;
        for _ in 0..4 {
            let mut chol = gram.clone();
            if ridge > 0.0 {
                for i in 0..m {
                    chol[i * m + i] += ridge;
                }
            }
            if linalg::cholesky_in_place(&mut chol, m).is_ok() {
                me.chol = chol;
                return Some(me);
            }
            ridge = if ridge == 0.0 { 1e-12 * scale } else { ridge * 1e3 };
        }
        None
    }

    /// Residual to correct: beyond-slack overshoot only, or the full
    /// residual when no slack is configured.
    fn overshoot(&self, x: &BlockVec) -> Vec<f64> {
        (0..self.p.num_rows())
            .map(|k| {
                let r = self.p.b[k] - x.sparse_dot(&self.p.rows[k]);
                match &self.slack {
                    Some(s) => r - r.clamp(-s[k], s[k]),
                    None => r,
                }
            })
            .collect()
    }

    fn within_slack(&self, x: &BlockVec) -> bool {
        let over = self.overshoot(x);
        let norm = over.iter().map(|v| v * v).sum::<f64>().sqrt();
        norm <= 1e-10 * (1.0 + self.b_norm)
    }

    /// Apply one correction.  Returns false (leaving `x` untouched) when the
    /// correction would be implausibly large for a near-feasible point.
    fn apply(&self, x: &mut BlockVec) -> bool {
        let m = self.p.num_rows();
        let mut lam = self.overshoot(x);
        let r_norm = lam.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r_norm <= 1e-13 * (1.0 + self.b_norm) {
            return true; // already inside the box to working precision
        }
        linalg::cholesky_solve(&self.chol, m, &mut lam);
        let mut delta = BlockVec::zeros(&self.p.blocks);
        for (k, &lk) in lam.iter().enumerate() {
            self.weighted_scatter(&mut delta, &self.p.rows[k], lk);
        }
        if delta.norm() > 0.1 * (1.0 + x.norm()) {
            return false;
        }
        x.axpy(1.0, &delta);
        true
    }
}

/// Project every block onto the cone (eigenvalue clipping for dense blocks,
/// componentwise max with 0 for diagonal ones).  Returns the worst violation
/// found before clipping, *relative to each block's own largest entry
/// magnitude* (floored at 1) — certificates are judged blockwise on that
/// scale, so a tiny absolute negative in a tiny block counts as much as a
/// large one in a huge block.
fn clip_to_cone(x: &mut BlockVec) -> f64 {
    let mut worst = 0.0f64;
    for (bs, d) in x.specs.clone().iter().zip(x.data.iter_mut()) {
        let block_scale =
            d.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(1.0);
        if bs.diag {
            for v in d.iter_mut() {
                if *v < 0.0 {
                    worst = worst.min(*v / block_scale);
                    *v = 0.0;
                }
            }
            continue;
        }
        let n = bs.size;
        // symmetrize first: the projection is onto symmetric PSD matrices
        for i in 0..n {
            for j in (i + 1)..n {
                let s = 0.5 * (d[i * n + j] + d[j * n + i]);
                d[i * n + j] = s;
                d[j * n + i] = s;
            }
        }
        let eig = linalg::sym_eig(d, n);
        let min = eig.values.iter().copied().fold(f64::INFINITY, f64::min);
        worst = worst.min(min / block_scale);
        if min >= 0.0 {
            continue;
        }
        // rebuild V max(Λ,0) V^T
        d.fill(0.0);
        for (k, &lam) in eig.values.iter().enumerate() {
            if lam <= 0.0 {
                continue;
            }
            for i in 0..n {
                let vi = lam * eig.vectors[i * n + k];
                if vi == 0.0 {
                    continue;
                }
                for j in 0..n {
                    d[i * n + j] += vi * eig.vectors[j * n + k];
                }
            }
        }
    }
    worst
}

/// Per-block Nesterov–Todd scaling data.
struct Scaling {
    /// W such that W S W = X (dense blocks), or the vector w (diag blocks).
    w: Vec<f64>,
    /// G with G G^T = W; the scaled iterate V = G^{-1} X G^{-T} = G^T S G is
    /// diagonal with entries `v`.
    g: Vec<f64>,
    g_inv: Vec<f64>,
    /// Inverse Cholesky factor of X (dense blocks), for step lengths.
    lx_inv: Vec<f64>,
    v: Vec<f64>,
}

struct Workspace {
    m: usize,
    specs: Vec<BlockSpec>,
    /// For each block, the list of (row index, entries in that block).
    block_rows: Vec<Vec<(usize, Vec<MatEntry>)>>,
    /// For diagonal blocks chosen for the dense Schur path: row-major m × size
    /// coefficient matrix.
    diag_dense: Vec<Option<Vec<f64>>>,
    cost_bv: BlockVec,
    b_norm: f64,
    c_norm: f64,
    row_norms: Vec<f64>,
    ntot: f64,
}

/// Row equilibration: divide each equality by its coefficient norm so the
/// Schur complement is well conditioned even when constraint rows differ by
/// orders of magnitude (high-degree composition rows versus plain Gram
/// rows).  X is unaffected; dual quantities must be rescaled back.
fn equilibrate(p: &SdpProblem) -> (SdpProblem, Vec<f64>) {
    let row_scales: Vec<f64> = p
        .rows
        .iter()
        .map(|r| {
            let n = r
                .iter()
                .map(|e| if e.i == e.j { e.value * e.value } else { 2.0 * e.value * e.value })
                .sum::<f64>()
                .sqrt();
            if n > 0.0 { n } else { 1.0 }
        })
        .collect();
    let scaled = SdpProblem {
        blocks: p.blocks.clone(),
        cost: p.cost.clone(),
        rows: p
            .rows
            .iter()
            .zip(&row_scales)
            .map(|(r, &n)| {
                r.iter()
                    .map(|e| MatEntry { value: e.value / n, ..*e })
                    .collect()
            })
            .collect(),
        b: p.b.iter().zip(&row_scales).map(|(v, &n)| v / n).collect(),
    };
    (scaled, row_scales)
}

pub fn solve_with_hints(p: &SdpProblem, opts: &SolverOptions, hints: &SolveHints) -> SdpSolution {
    if let Err(e) = p.validate() {
        // structural errors are caller bugs; surface them loudly
        panic!("invalid SDP passed to solve: {e}");
    }
    let (scaled, row_scales) = equilibrate(p);
    let mut sol = solve_scaled(&scaled, opts, hints);
    for (yk, &n) in sol.dual_vector.iter_mut().zip(&row_scales) {
        *yk /= n;
    }
    sol
}

/// Refine a solution's primal point in place: project it onto the affine
/// constraints — relaxed, when `row_slack` is given, to the box
/// `|b_k − <A_k, X>| ≤ row_slack[k]` — alternating with projection onto the
/// cone.
///
/// An interior-point iterate satisfies the equalities only to its stopping
/// tolerance *times the iterate norm*, while certificates are judged
/// coefficient by coefficient; and on problems feasible only near the
/// boundary the exact affine subspace may sit measurably away from the cone,
/// while the slackened box still intersects it.  Correcting only the
/// out-of-budget rows keeps the correction (and hence the eigenvalue echo of
/// each cone projection) as small as the acceptance boxes allow.
///
/// Returns true when the refined point satisfies the slack box; `pobj`,
/// residual, gap, and the primal blocks are refreshed from the refined
/// point.  On failure the solution is left as solved.
pub fn refine_primal(p: &SdpProblem, sol: &mut SdpSolution, row_slack: Option<&[f64]>) -> bool {
    if !matches!(
        sol.status,
        SolveStatus::Optimal | SolveStatus::IterationLimit | SolveStatus::NumericalFailure
    ) {
        return false;
    }
    let (scaled, row_scales) = equilibrate(p);
    let slack_eq: Option<Vec<f64>> =
        row_slack.map(|s| s.iter().zip(&row_scales).map(|(v, n)| v / n).collect());
    let mut x = BlockVec::from_block_data(&scaled.blocks, &sol.primal_blocks);
    let Some(polisher) = Polisher::new(&scaled, &x, slack_eq) else {
        return false;
    };
    if !polisher.apply(&mut x) {
        return false;
    }
    // `worst` measures the violation *entering* the round; the final
    // projection leaves the point exactly on the cone, and by then the
    // leftover cone violation — hence the displacement of that projection —
    // is small enough to fit inside the residual slack
    for round in 0..10 {
        let worst = clip_to_cone(&mut x);
        if !polisher.apply(&mut x) {
            return false;
        }
        if round > 0 && worst >= -1e-9 {
            break;
        }
    }
    clip_to_cone(&mut x);
    if !polisher.within_slack(&x) {
        return false;
    }
    sol.pobj = x.sparse_dot(&scaled.cost);
    let rp = (0..scaled.num_rows())
        .map(|k| {
            let d = scaled.b[k] - x.sparse_dot(&scaled.rows[k]);
            d * d
        })
        .sum::<f64>()
        .sqrt();
    let b_norm = scaled.b.iter().map(|v| v * v).sum::<f64>().sqrt();
    sol.primal_residual = rp / (1.0 + b_norm + x.norm());
    let s = BlockVec::from_block_data(&scaled.blocks, &sol.dual_blocks);
    sol.gap = x.dot(&s) / (1.0 + sol.pobj.abs() + sol.dobj.abs());
    sol.primal_blocks = x.to_block_data();
    true
}

fn solve_scaled(p: &SdpProblem, opts: &SolverOptions, hints: &SolveHints) -> SdpSolution {
    let m = p.num_rows();
    let specs = p.blocks.clone();

    let mut cost_bv = BlockVec::zeros(&specs);
    cost_bv.scatter(&p.cost, 1.0);

    // group each row's entries by block, and build per-block row lists
    let mut block_rows: Vec<Vec<(usize, Vec<MatEntry>)>> = vec![Vec::new(); specs.len()];
    for (k, row) in p.rows.iter().enumerate() {
        let mut per_block: Vec<Vec<MatEntry>> = vec![Vec::new(); specs.len()];
        for e in row {
            per_block[e.block].push(*e);
        }
        for (bi, es) in per_block.into_iter().enumerate() {
            if !es.is_empty() {
                block_rows[bi].push((k, es));
            }
        }
    }

    // dense Schur path for diagonal blocks that are touched by many rows
    let mut diag_dense: Vec<Option<Vec<f64>>> = vec![None; specs.len()];
    for (bi, bs) in specs.iter().enumerate() {
        if !bs.diag {
            continue;
        }
        let nnz: usize = block_rows[bi].iter().map(|(_, es)| es.len()).sum();
        if nnz * 20 > m * bs.size && m * bs.size > 0 {
            let mut mat = vec![0.0; m * bs.size];
            for (k, es) in &block_rows[bi] {
                for e in es {
                    mat[k * bs.size + e.i] += e.value;
                }
            }
            diag_dense[bi] = Some(mat);
        }
    }

    let row_norms: Vec<f64> = p
        .rows
        .iter()
        .map(|r| {
            r.iter()
                .map(|e| if e.i == e.j { e.value * e.value } else { 2.0 * e.value * e.value })
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let b_norm = p.b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let c_norm = cost_bv.norm();
    let ntot: f64 = specs.iter().map(|bs| bs.size as f64).sum();

    let ws = Workspace {
        m,
        specs: specs.clone(),
        block_rows,
        diag_dense,
        cost_bv,
        b_norm,
        c_norm,
        row_norms,
        ntot,
    };

    // generous infeasible-start initialization at scaled identity: the initial
    // complementarity must dominate the initial residuals so the duality gap
    // stays nonnegative along the whole path
    let max_anorm = ws.row_norms.iter().fold(0.0f64, |a, &v| a.max(v));
    let xi_p = p
        .b
        .iter()
        .zip(&ws.row_norms)
        .map(|(&bk, &an)| (1.0 + bk.abs()) / (1.0 + an))
        .fold(0.0f64, f64::max);
    let rho_p = 10.0f64.max(ws.ntot.sqrt()).max(xi_p * ws.ntot.sqrt());
    let rho_d = 10.0f64.max(ws.ntot.sqrt()).max(max_anorm.max(ws.c_norm));

    let mut x = BlockVec::identity_scaled(&specs, rho_p);
    let mut s = BlockVec::identity_scaled(&specs, rho_d);
    let mut y = vec![0.0; m];

    Ipm { p, opts, hints, ws, best: None, jitter_hint: std::cell::Cell::new(1e-14) }
        .run(&mut x, &mut y, &mut s)
}

struct Ipm<'a> {
    p: &'a SdpProblem,
    opts: &'a SolverOptions,
    hints: &'a SolveHints,
    ws: Workspace,
    /// Lowest-merit iterate seen so far, kept as a fallback: if the iteration
    /// later breaks down numerically, a near-converged earlier point is still
    /// a usable answer.
    best: Option<BestIterate>,
    /// Last diagonal jitter that rescued a failed scaling factorization;
    /// later iterations start retrying from here instead of walking the whole
    /// escalation ladder again.
    jitter_hint: std::cell::Cell<f64>,
}

struct BestIterate {
    merit: f64,
    x: BlockVec,
    y: Vec<f64>,
    s: BlockVec,
}

enum StepOutcome {
    Converged,
    Infeasible(SolveStatus),
    Failed(&'static str),
    Continue,
}

impl<'a> Ipm<'a> {
    fn run(mut self, x: &mut BlockVec, y: &mut [f64], s: &mut BlockVec) -> SdpSolution {
        let mut trace = Vec::new();
        let mut status = SolveStatus::IterationLimit;
        let mut iterations = 0;
        for iter in 0..self.opts.max_iters {
            iterations = iter + 1;
            match self.step(x, y, s, &mut trace, iter) {
                StepOutcome::Converged => {
                    status = SolveStatus::Optimal;
                    break;
                }
                StepOutcome::Infeasible(st) => {
                    status = st;
                    break;
                }
                StepOutcome::Failed(why) => {
                    if self.opts.verbose {
                        eprintln!("sdp: numerical failure: {why}");
                    }
                    status = SolveStatus::NumericalFailure;
                    break;
                }
                StepOutcome::Continue => {}
            }
        }
        // fall back to the best iterate when the endgame broke down but an
        // earlier point already met the acceptance tolerance
        if matches!(status, SolveStatus::NumericalFailure | SolveStatus::IterationLimit) {
            if let Some(b) = self.best.take() {
                if b.merit <= self.opts.accept_tol {
                    *x = b.x;
                    y.copy_from_slice(&b.y);
                    *s = b.s;
                    status = SolveStatus::Optimal;
                }
            }
        }
        self.finish(status, x, y, s, trace, iterations)
    }

    fn finish(
        &self,
        status: SolveStatus,
        x: &BlockVec,
        y: &[f64],
        s: &BlockVec,
        trace: Vec<IterStat>,
        iterations: usize,
    ) -> SdpSolution {
        let pobj = self.ws.cost_bv.dot(x);
        let dobj = self.p.b.iter().zip(y).map(|(b, y)| b * y).sum::<f64>();
        let gap = x.dot(s) / (1.0 + pobj.abs() + dobj.abs());
        let (prel, drel) = self.residual_norms(x, y, s);
        SdpSolution {
            status,
            primal_blocks: x.to_block_data(),
            dual_vector: y.to_vec(),
            dual_blocks: s.to_block_data(),
            pobj,
            dobj,
            gap,
            primal_residual: prel,
            dual_residual: drel,
            iterations,
            trace,
        }
    }

    /// Backward-error style residuals: the primal residual is measured
    /// relative to the iterate magnitude as well as the data (rows are
    /// equilibrated to unit norm, so ‖A(X)‖ scales with ‖X‖_F), and the dual
    /// residual relative to ‖y‖.  Programs whose solutions genuinely live at
    /// large norms then converge like any other instead of stalling on an
    /// absolute feasibility test their solution scale can never meet.
    fn residual_norms(&self, x: &BlockVec, y: &[f64], s: &BlockVec) -> (f64, f64) {
        let mut rp2 = 0.0;
        for (k, row) in self.p.rows.iter().enumerate() {
            let r = self.p.b[k] - x.sparse_dot(row);
            rp2 += r * r;
        }
        let mut rd = self.ws.cost_bv.clone();
        rd.axpy(-1.0, s);
        for (k, row) in self.p.rows.iter().enumerate() {
            rd.scatter(row, -y[k]);
        }
        let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        (
            rp2.sqrt() / (1.0 + self.ws.b_norm + x.norm()),
            rd.norm() / (1.0 + self.ws.c_norm + ynorm),
        )
    }

    fn step(
        &mut self,
        x: &mut BlockVec,
        y: &mut [f64],
        s: &mut BlockVec,
        trace: &mut Vec<IterStat>,
        iter: usize,
    ) -> StepOutcome {
        let specs = self.ws.specs.clone();
        let m = self.ws.m;

        // residuals
        let mut rp = vec![0.0; m];
        for (k, row) in self.p.rows.iter().enumerate() {
            rp[k] = self.p.b[k] - x.sparse_dot(row);
        }
        let mut rd = self.ws.cost_bv.clone();
        rd.axpy(-1.0, s);
        for (k, row) in self.p.rows.iter().enumerate() {
            rd.scatter(row, -y[k]);
        }
        let gap = x.dot(s);
        let mu = gap / self.ws.ntot;
        let pobj = self.ws.cost_bv.dot(x);
        let dobj = self.p.b.iter().zip(y.iter()).map(|(b, y)| b * y).sum::<f64>();
        let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let prel =
            rp.iter().map(|v| v * v).sum::<f64>().sqrt() / (1.0 + self.ws.b_norm + x.norm());
        let drel = rd.norm() / (1.0 + self.ws.c_norm + ynorm);
        trace.push(IterStat { pobj, dobj, mu, primal_res: prel, dual_res: drel });
        if self.opts.verbose {
            eprintln!(
                "iter {iter:3}  pobj {pobj:+.6e}  dobj {dobj:+.6e}  mu {mu:.3e}  pres {prel:.3e}  dres {drel:.3e}"
            );
        }

        let relgap = gap / (1.0 + pobj.abs() + dobj.abs());
        if relgap <= self.opts.gap_tol && prel <= self.opts.feas_tol && drel <= self.opts.feas_tol {
            // steps taken under a jittered scaling can carry X slightly
            // across the cone boundary, where <X,S> vanishes spuriously; only
            // a point actually in the cone may declare victory, anything else
            // keeps iterating
            if self.in_cone(x) {
                return StepOutcome::Converged;
            }
        }

        let merit = prel.max(drel).max(relgap.max(0.0));
        if self.best.as_ref().map_or(true, |b| merit < b.merit) {
            self.best = Some(BestIterate { merit, x: x.clone(), y: y.to_vec(), s: s.clone() });
        }

        if let Some(st) = self.detect_infeasibility(x, y, mu, iter) {
            return StepOutcome::Infeasible(st);
        }

        // once complementarity has drifted negative the scaled system is no
        // longer meaningful; stop and let the best-iterate fallback decide
        if relgap < -1e2 * self.opts.gap_tol {
            return StepOutcome::Failed("duality gap crossed zero");
        }

        // Nesterov–Todd scaling per block
        let mut scalings = Vec::with_capacity(specs.len());
        for (bi, bs) in specs.iter().enumerate() {
            match self.make_scaling(bs, &x.data[bi], &s.data[bi]) {
                Some(sc) => scalings.push(sc),
                None => return StepOutcome::Failed("scaling factorization broke down"),
            }
        }

        // Schur complement M[j][k] = <A_j, W A_k W> and rhs pieces
        let mut schur = vec![0.0; m * m];
        self.form_schur(&mut schur, &scalings);
        // A(W Rd W)
        let mut w_rd_w = BlockVec::zeros(&specs);
        for (bi, bs) in specs.iter().enumerate() {
            congruence(bs, &scalings[bi].w, &rd.data[bi], &mut w_rd_w.data[bi]);
        }
        let a_wrdw: Vec<f64> = self.p.rows.iter().map(|r| w_rd_w.sparse_dot(r)).collect();

        // factor M (with an escalating ridge as a last resort)
        let mut diag_scale = 0.0;
        for i in 0..m {
            diag_scale += schur[i * m + i];
        }
        diag_scale = (diag_scale / m.max(1) as f64).max(1e-300);
        let mut ridge = 0.0;
        let mut lfac = schur.clone();
        loop {
            if linalg::cholesky_in_place(&mut lfac, m).is_ok() {
                break;
            }
            ridge = if ridge == 0.0 { 1e-14 } else { ridge * 100.0 };
            if ridge > 1e-6 {
                return StepOutcome::Failed("Schur complement not positive definite");
            }
            lfac.copy_from_slice(&schur);
            for i in 0..m {
                lfac[i * m + i] += ridge * diag_scale;
            }
        }

        // predictor: affine-scaling direction
        let mut dy_aff: Vec<f64> = (0..m).map(|k| self.p.b[k] + a_wrdw[k]).collect();
        refined_cholesky_solve(&schur, &lfac, m, &mut dy_aff);
        let (dx_aff, ds_aff) = self.directions_from_dy(&dy_aff, &rd, &scalings, None, x);

        let ap_aff = self.max_step(x, &dx_aff, &scalings, true).min(1.0);
        let ad_aff = self.max_step(s, &ds_aff, &scalings, false).min(1.0);
        let mut xa = x.clone();
        xa.axpy(ap_aff, &dx_aff);
        let mut sa = s.clone();
        sa.axpy(ad_aff, &ds_aff);
        let mu_aff = xa.dot(&sa).max(0.0) / self.ws.ntot;
        let sigma = ((mu_aff / mu).powi(3)).clamp(1e-8, 1.0);

        // corrector with Mehrotra second-order term
        let mut rhs: Vec<f64> = vec![0.0; m];
        let corr = self.corrector_term(&dx_aff, &ds_aff, &scalings, sigma * mu);
        for (k, row) in self.p.rows.iter().enumerate() {
            rhs[k] = rp[k] - corr.sparse_dot(row) + a_wrdw[k];
        }
        let mut dy = rhs;
        refined_cholesky_solve(&schur, &lfac, m, &mut dy);
        let (dx, ds) = self.directions_from_dy(&dy, &rd, &scalings, Some(&corr), x);

        let tau = self.opts.step_frac;
        let mut ap = (tau * self.max_step(x, &dx, &scalings, true)).min(1.0);
        let mut ad = (tau * self.max_step(s, &ds, &scalings, false)).min(1.0);
        if !(ap.is_finite() && ad.is_finite()) || ap <= 1e-12 || ad <= 1e-12 {
            return StepOutcome::Failed("step length collapsed");
        }

        // keep complementarity positive: near the end the full step can push
        // <X,S> through zero in one jump, after which the scaled system is
        // meaningless.  Shrink both steps until the predicted gap retains at
        // least a small fraction of the current one (0.5% still permits a
        // 200-fold reduction per iteration, so convergence stays superlinear).
        {
            let b1 = ap * dx.dot(s) + ad * x.dot(&ds);
            let a2 = ap * ad * dx.dot(&ds);
            let floor = 5e-3 * gap;
            let mut eta = 1.0;
            let mut tries = 0;
            while gap + eta * b1 + eta * eta * a2 < floor && tries < 80 {
                eta *= 0.85;
                tries += 1;
            }
            ap *= eta;
            ad *= eta;
        }

        x.axpy(ap, &dx);
        s.axpy(ad, &ds);
        for (k, v) in dy.iter().enumerate() {
            y[k] += ad * v;
        }

        // recenter split free-variable pairs: shifting both halves by the same
        // amount changes neither the represented value nor any constraint
        for &(bi, ip, im) in &self.hints.split_pairs {
            let (u, v) = (x.data[bi][ip], x.data[bi][im]);
            let d = u.min(v);
            if d > 10.0 * (1.0 + (u - v).abs()) {
                x.data[bi][ip] -= 0.9 * d;
                x.data[bi][im] -= 0.9 * d;
            }
        }
        StepOutcome::Continue
    }

    /// Assemble `ΔS = Rd - A^T(dy)` and `ΔX = U - W ΔS W`, where `U` is `-X`
    /// for the predictor (`corr = None`) or the corrector matrix.
    fn directions_from_dy(
        &self,
        dy: &[f64],
        rd: &BlockVec,
        scalings: &[Scaling],
        corr: Option<&BlockVec>,
        x: &BlockVec,
    ) -> (BlockVec, BlockVec) {
        let specs = &self.ws.specs;
        let mut ds = rd.clone();
        for (k, row) in self.p.rows.iter().enumerate() {
            ds.scatter(row, -dy[k]);
        }
        let mut dx = BlockVec::zeros(specs);
        for (bi, bs) in specs.iter().enumerate() {
            congruence(bs, &scalings[bi].w, &ds.data[bi], &mut dx.data[bi]);
            let n = dx.data[bi].len();
            match corr {
                None => {
                    for idx in 0..n {
                        dx.data[bi][idx] = -x.data[bi][idx] - dx.data[bi][idx];
                    }
                }
                Some(u) => {
                    for idx in 0..n {
                        dx.data[bi][idx] = u.data[bi][idx] - dx.data[bi][idx];
                    }
                }
            }
        }
        (dx, ds)
    }

    /// `U = G L_V^{-1}(σμ I - V^2 - H(ΔX̂ ΔŜ)) G^T` per block.
    fn corrector_term(
        &self,
        dx_aff: &BlockVec,
        ds_aff: &BlockVec,
        scalings: &[Scaling],
        sigma_mu: f64,
    ) -> BlockVec {
        let specs = &self.ws.specs;
        let mut out = BlockVec::zeros(specs);
        for (bi, bs) in specs.iter().enumerate() {
            let sc = &scalings[bi];
            let nb = bs.size;
            if bs.diag {
                for i in 0..nb {
                    let vsq = sc.v[i] * sc.v[i];
                    let dxh = dx_aff.data[bi][i] / sc.w[i].max(f64::MIN_POSITIVE);
                    let dsh = ds_aff.data[bi][i] * sc.w[i];
                    let rc = sigma_mu - vsq - dxh * dsh;
                    out.data[bi][i] = sc.w[i] * rc / sc.v[i];
                }
            } else {
                // scaled affine directions
                let mut t1 = vec![0.0; nb * nb];
                let mut dxh = vec![0.0; nb * nb];
                linalg::dgemm(nb, nb, nb, 1.0, &sc.g_inv, nb, false, &dx_aff.data[bi], nb, false, 0.0, &mut t1, nb);
                linalg::dgemm(nb, nb, nb, 1.0, &t1, nb, false, &sc.g_inv, nb, true, 0.0, &mut dxh, nb);
                let mut dsh = vec![0.0; nb * nb];
                linalg::dgemm(nb, nb, nb, 1.0, &sc.g, nb, true, &ds_aff.data[bi], nb, false, 0.0, &mut t1, nb);
                linalg::dgemm(nb, nb, nb, 1.0, &t1, nb, false, &sc.g, nb, false, 0.0, &mut dsh, nb);
                // P = ΔX̂ ΔŜ ; Rc = σμI - V² - (P + Pᵀ)/2, then Lv⁻¹ elementwise
                let mut prod = vec![0.0; nb * nb];
                linalg::dgemm(nb, nb, nb, 1.0, &dxh, nb, false, &dsh, nb, false, 0.0, &mut prod, nb);
                let mut e = vec![0.0; nb * nb];
                for i in 0..nb {
                    for j in 0..nb {
                        let mut rc = -0.5 * (prod[i * nb + j] + prod[j * nb + i]);
                        if i == j {
                            rc += sigma_mu - sc.v[i] * sc.v[i];
                        }
                        e[i * nb + j] = 2.0 * rc / (sc.v[i] + sc.v[j]);
                    }
                }
                let mut t2 = vec![0.0; nb * nb];
                linalg::dgemm(nb, nb, nb, 1.0, &sc.g, nb, false, &e, nb, false, 0.0, &mut t2, nb);
                linalg::dgemm(nb, nb, nb, 1.0, &t2, nb, false, &sc.g, nb, true, 0.0, &mut out.data[bi], nb);
            }
        }
        out
    }

    /// Largest step `alpha` with `Z + alpha * dZ` still in the cone.
    /// Strict cone membership by Cholesky (dense) and positivity (diagonal).
    fn in_cone(&self, z: &BlockVec) -> bool {
        for (bs, d) in self.ws.specs.iter().zip(&z.data) {
            if bs.diag {
                if d.iter().any(|&v| v <= 0.0) {
                    return false;
                }
            } else {
                let mut c = d.clone();
                if linalg::cholesky_in_place(&mut c, bs.size).is_err() {
                    return false;
                }
            }
        }
        true
    }

    fn max_step(&self, z: &BlockVec, dz: &BlockVec, scalings: &[Scaling], primal: bool) -> f64 {
        let mut alpha = f64::INFINITY;
        for (bi, bs) in self.ws.specs.iter().enumerate() {
            let nb = bs.size;
            if bs.diag {
                for i in 0..nb {
                    let d = dz.data[bi][i];
                    if d < 0.0 {
                        alpha = alpha.min(-z.data[bi][i] / d);
                    }
                }
            } else if primal {
                // X-side: use the cached Cholesky of X
                let sc = &scalings[bi];
                let mut t = vec![0.0; nb * nb];
                let mut msc = vec![0.0; nb * nb];
                linalg::dgemm(nb, nb, nb, 1.0, &sc.lx_inv, nb, false, &dz.data[bi], nb, false, 0.0, &mut t, nb);
                linalg::dgemm(nb, nb, nb, 1.0, &t, nb, false, &sc.lx_inv, nb, true, 0.0, &mut msc, nb);
                let lmin = linalg::min_eig_sym(&msc, nb);
                if lmin < 0.0 {
                    alpha = alpha.min(-1.0 / lmin);
                }
            } else {
                // S-side: factor S on the fly
                let mut ls = z.data[bi].clone();
                if linalg::cholesky_in_place(&mut ls, nb).is_err() {
                    return 0.0;
                }
                let mut ls_inv = ls;
                linalg::invert_lower_in_place(&mut ls_inv, nb);
                let mut t = vec![0.0; nb * nb];
                let mut msc = vec![0.0; nb * nb];
                linalg::dgemm(nb, nb, nb, 1.0, &ls_inv, nb, false, &dz.data[bi], nb, false, 0.0, &mut t, nb);
                linalg::dgemm(nb, nb, nb, 1.0, &t, nb, false, &ls_inv, nb, true, 0.0, &mut msc, nb);
                let lmin = linalg::min_eig_sym(&msc, nb);
                if lmin < 0.0 {
                    alpha = alpha.min(-1.0 / lmin);
                }
            }
        }
        alpha
    }

    /// Nesterov–Todd scaling for one block.  Near the cone boundary the exact
    /// iterates can lose positive definiteness to roundoff; rather than
    /// aborting the whole solve, retry with an escalating diagonal jitter
    /// (any symmetric positive definite scaling keeps the iteration valid —
    /// the NT choice is an efficiency preference, not a correctness
    /// requirement, so a slightly perturbed one is still usable).
    fn make_scaling(&self, bs: &BlockSpec, xb: &[f64], sb: &[f64]) -> Option<Scaling> {
        if let Some(sc) = self.make_scaling_exact(bs, xb, sb) {
            return Some(sc);
        }
        let nb = bs.size;
        let trace = |d: &[f64]| -> f64 {
            if bs.diag {
                d.iter().sum::<f64>()
            } else {
                (0..nb).map(|i| d[i * nb + i]).sum()
            }
        };
        let tx = (trace(xb) / nb.max(1) as f64).abs().max(1e-300);
        let ts = (trace(sb) / nb.max(1) as f64).abs().max(1e-300);
        let mut delta = self.jitter_hint.get();
        while delta <= 1e-8 {
            let mut xj = xb.to_vec();
            let mut sj = sb.to_vec();
            if bs.diag {
                for i in 0..nb {
                    xj[i] += delta * tx;
                    sj[i] += delta * ts;
                }
            } else {
                for i in 0..nb {
                    xj[i * nb + i] += delta * tx;
                    sj[i * nb + i] += delta * ts;
                }
            }
            if let Some(sc) = self.make_scaling_exact(bs, &xj, &sj) {
                self.jitter_hint.set(delta);
                return Some(sc);
            }
            delta *= 100.0;
        }
        None
    }

    fn make_scaling_exact(&self, bs: &BlockSpec, xb: &[f64], sb: &[f64]) -> Option<Scaling> {
        let nb = bs.size;
        if bs.diag {
            let mut w = vec![0.0; nb];
            let mut g = vec![0.0; nb];
            let mut v = vec![0.0; nb];
            for i in 0..nb {
                if xb[i] <= 0.0 || sb[i] <= 0.0 {
                    return None;
                }
                w[i] = (xb[i] / sb[i]).sqrt();
                g[i] = w[i].sqrt();
                v[i] = (xb[i] * sb[i]).sqrt();
            }
            return Some(Scaling { w, g: g.clone(), g_inv: g.iter().map(|x| 1.0 / x).collect(), lx_inv: Vec::new(), v });
        }
        let mut lx = xb.to_vec();
        linalg::cholesky_in_place(&mut lx, nb).ok()?;
        for i in 0..nb {
            for j in i + 1..nb {
                lx[i * nb + j] = 0.0;
            }
        }
        let mut lx_inv = lx.clone();
        linalg::invert_lower_in_place(&mut lx_inv, nb);
        // T = Lx^T S Lx, eigendecompose
        let mut t1 = vec![0.0; nb * nb];
        let mut t = vec![0.0; nb * nb];
        linalg::dgemm(nb, nb, nb, 1.0, sb, nb, false, &lx, nb, false, 0.0, &mut t1, nb);
        linalg::dgemm(nb, nb, nb, 1.0, &lx, nb, true, &t1, nb, false, 0.0, &mut t, nb);
        let eig = linalg::sym_eig(&t, nb);
        if eig.values.iter().any(|&d| d <= 0.0 || !d.is_finite()) {
            return None;
        }
        // G = Lx Q D^{-1/4};  G^{-1} = D^{1/4} Q^T Lx^{-1}
        let mut g = vec![0.0; nb * nb];
        linalg::dgemm(nb, nb, nb, 1.0, &lx, nb, false, &eig.vectors, nb, false, 0.0, &mut g, nb);
        for j in 0..nb {
            let dq = eig.values[j].powf(-0.25);
            for i in 0..nb {
                g[i * nb + j] *= dq;
            }
        }
        let mut g_inv = vec![0.0; nb * nb];
        linalg::dgemm(nb, nb, nb, 1.0, &eig.vectors, nb, true, &lx_inv, nb, false, 0.0, &mut g_inv, nb);
        for i in 0..nb {
            let dq = eig.values[i].powf(0.25);
            for j in 0..nb {
                g_inv[i * nb + j] *= dq;
            }
        }
        let mut w = vec![0.0; nb * nb];
        linalg::dgemm(nb, nb, nb, 1.0, &g, nb, false, &g, nb, true, 0.0, &mut w, nb);
        let v = eig.values.iter().map(|d| d.sqrt()).collect();
        Some(Scaling { w, g, g_inv, lx_inv, v })
    }

    /// `M[j][k] = Σ_b <A_j^b, W_b A_k^b W_b>`, dense upper triangle mirrored.
    fn form_schur(&self, schur: &mut [f64], scalings: &[Scaling]) {
        let m = self.ws.m;
        schur.fill(0.0);
        for (bi, bs) in self.ws.specs.iter().enumerate() {
            let nb = bs.size;
            let rows_b = &self.ws.block_rows[bi];
            if rows_b.is_empty() {
                continue;
            }
            if bs.diag {
                let omega: Vec<f64> = scalings[bi].w.iter().map(|w| w * w).collect();
                if let Some(dense) = &self.ws.diag_dense[bi] {
                    // M += B diag(omega) B^T through the GEMM kernel
                    let mut scaled = vec![0.0; m * nb];
                    for r in 0..m {
                        for i in 0..nb {
                            scaled[r * nb + i] = dense[r * nb + i] * omega[i];
                        }
                    }
                    linalg::dgemm(m, nb, m, 1.0, &scaled, nb, false, dense, nb, true, 1.0, schur, m);
                } else {
                    // sparse column-wise accumulation
                    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nb];
                    for (k, es) in rows_b {
                        for e in es {
                            cols[e.i].push((*k, e.value));
                        }
                    }
                    for (i, col) in cols.iter().enumerate() {
                        for &(k, vk) in col {
                            for &(j, vj) in col {
                                if j <= k {
                                    schur[j * m + k] += vj * omega[i] * vk;
                                    if j != k {
                                        schur[k * m + j] += vj * omega[i] * vk;
                                    }
                                }
                            }
                        }
                    }
                }
            } else {
                let w = &scalings[bi].w;
                let mut u = vec![0.0; nb * nb];
                for (idx_k, (k, es_k)) in rows_b.iter().enumerate() {
                    u.fill(0.0);
                    for e in es_k {
                        // U += v * (W[:,i] W[j,:] + W[:,j] W[i,:]) (halved on the diagonal)
                        let (wi_row, wj_row) = (e.i * nb, e.j * nb);
                        if e.i == e.j {
                            for r in 0..nb {
                                let f = e.value * w[r * nb + e.i];
                                let urow = &mut u[r * nb..(r + 1) * nb];
                                let wrow = &w[wi_row..wi_row + nb];
                                for c in 0..nb {
                                    urow[c] += f * wrow[c];
                                }
                            }
                        } else {
                            for r in 0..nb {
                                let fi = e.value * w[r * nb + e.i];
                                let fj = e.value * w[r * nb + e.j];
                                let urow = &mut u[r * nb..(r + 1) * nb];
                                let wj = &w[wj_row..wj_row + nb];
                                let wi = &w[wi_row..wi_row + nb];
                                for c in 0..nb {
                                    urow[c] += fi * wj[c] + fj * wi[c];
                                }
                            }
                        }
                    }
                    for (j, es_j) in rows_b.iter().take(idx_k + 1) {
                        let mut dot = 0.0;
                        for e in es_j {
                            if e.i == e.j {
                                dot += e.value * u[e.i * nb + e.i];
                            } else {
                                dot += e.value * (u[e.i * nb + e.j] + u[e.j * nb + e.i]);
                            }
                        }
                        schur[j * m + k] += dot;
                        if *j != *k {
                            schur[k * m + j] += dot;
                        }
                    }
                }
            }
        }
    }

    /// Look for improving-ray certificates of primal or dual infeasibility.
    fn detect_infeasibility(&self, x: &BlockVec, y: &[f64], mu: f64, iter: usize) -> Option<SolveStatus> {
        if iter < 5 {
            return None;
        }
        let by: f64 = self.p.b.iter().zip(y).map(|(b, y)| b * y).sum();
        // primal infeasibility: y with b^T y > 0 and A^T y ⪯ 0.  After
        // normalizing so that b^T y = 1, any feasible X ⪰ 0 would satisfy
        // 1 = <Σ y_k A_k, X> ≤ λmax(Σ y_k A_k)·tr(X), so the ray proves every
        // feasible point has trace at least 1/λmax.  Declare infeasibility
        // only when that bound is essentially vacuous to satisfy: λmax below
        // an *absolute* 1e-10 (implied trace beyond 1e10).  The threshold is
        // deliberately not scaled by ‖A^T y‖: programs that are feasible only
        // at large Gram norms produce rays with ‖A^T y‖ ~ 1e8 whose small
        // positive λmax is exactly the escape route a relative threshold
        // would erase, turning a solvable program into a false "infeasible".
        if by > 0.0 && by > 1e2 * mu.max(1e-300) {
            let mut aty = BlockVec::zeros(&self.ws.specs);
            for (k, row) in self.p.rows.iter().enumerate() {
                aty.scatter(row, y[k] / by);
            }
            let mut lmax = f64::NEG_INFINITY;
            for (bi, bs) in self.ws.specs.iter().enumerate() {
                if bs.diag {
                    for &v in &aty.data[bi] {
                        lmax = lmax.max(v);
                    }
                } else if bs.size > 0 {
                    lmax = lmax.max(linalg::max_eig_sym(&aty.data[bi], bs.size));
                }
            }
            if lmax <= 1e-10 {
                return Some(SolveStatus::PrimalInfeasible);
            }
        }
        // dual infeasibility: X ⪰ 0, A(X) ≈ 0, <C,X> < 0 after normalization
        let cx = self.ws.cost_bv.dot(x);
        let tr: f64 = x
            .data
            .iter()
            .zip(&self.ws.specs)
            .map(|(d, bs)| {
                if bs.diag {
                    d.iter().sum::<f64>()
                } else {
                    (0..bs.size).map(|i| d[i * bs.size + i]).sum()
                }
            })
            .sum();
        if cx < 0.0 && tr > 1e6 {
            let ax_norm: f64 = self
                .p
                .rows
                .iter()
                .map(|r| {
                    let v = x.sparse_dot(r) / tr;
                    v * v
                })
                .sum::<f64>()
                .sqrt();
            if ax_norm <= 1e-8 && cx / tr < -1e-10 {
                return Some(SolveStatus::DualInfeasible);
            }
        }
        None
    }
}

/// Cholesky solve with two passes of iterative refinement against the
/// unfactored matrix.  The Schur complement becomes severely ill conditioned
/// near the central-path limit; refinement recovers the digits the plain
/// triangular solves lose and lets the iteration push residuals to tolerance.
fn refined_cholesky_solve(mat: &[f64], lfac: &[f64], n: usize, rhs: &mut [f64]) {
    let b0 = rhs.to_vec();
    linalg::cholesky_solve(lfac, n, rhs);
    let bnorm = b0.iter().map(|v| v * v).sum::<f64>().sqrt();
    for _ in 0..2 {
        let mut r = b0.clone();
        for i in 0..n {
            let row = &mat[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (a, xv) in row.iter().zip(rhs.iter()) {
                acc += a * xv;
            }
            r[i] -= acc;
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= 1e-15 * (1.0 + bnorm) {
            break;
        }
        linalg::cholesky_solve(lfac, n, &mut r);
        for (xv, d) in rhs.iter_mut().zip(&r) {
            *xv += d;
        }
    }
}

/// `out = W z W` for a dense block, or elementwise `w^2 z` for a diagonal one.
fn congruence(bs: &BlockSpec, w: &[f64], z: &[f64], out: &mut [f64]) {
    let nb = bs.size;
    if bs.diag {
        for i in 0..nb {
            out[i] = w[i] * w[i] * z[i];
        }
    } else {
        if nb == 0 {
            return;
        }
        let mut t = vec![0.0; nb * nb];
        linalg::dgemm(nb, nb, nb, 1.0, z, nb, false, w, nb, false, 0.0, &mut t, nb);
        linalg::dgemm(nb, nb, nb, 1.0, w, nb, false, &t, nb, false, 0.0, out, nb);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn entry(block: usize, i: usize, j: usize, value: f64) -> MatEntry {
        MatEntry { block, i, j, value }
    }

    /// minimize t s.t. t·I − diag(1,2,3) ⪰ 0, via a slack block and a split
    /// free scalar; optimum is the largest diagonal entry.
    fn max_eig_problem() -> (SdpProblem, SolveHints) {
        let blocks = vec![BlockSpec { size: 3, diag: false }, BlockSpec { size: 2, diag: true }];
        let mut rows = Vec::new();
        let mut b = Vec::new();
        for i in 0..3 {
            // X[i][i] - (t+ - t-) = -a_i
            rows.push(vec![entry(0, i, i, 1.0), entry(1, 0, 0, -1.0), entry(1, 1, 1, 1.0)]);
            b.push(-((i + 1) as f64));
        }
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            rows.push(vec![entry(0, i, j, 1.0)]);
            b.push(0.0);
        }
        let cost = vec![entry(1, 0, 0, 1.0), entry(1, 1, 1, -1.0)];
        (
            SdpProblem { blocks, cost, rows, b },
            SolveHints { split_pairs: vec![(1, 0, 1)] },
        )
    }

    #[test]
    fn analytic_max_eigenvalue() {
        let (p, hints) = max_eig_problem();
        let sol = solve_with_hints(&p, &SolverOptions::default(), &hints);
        assert_eq!(sol.status, SolveStatus::Optimal, "status: {:?}", sol.status);
        assert!((sol.pobj - 3.0).abs() <= 1e-7 * 3.0, "pobj = {}", sol.pobj);
        assert!((sol.dobj - 3.0).abs() <= 1e-7 * 3.0, "dobj = {}", sol.dobj);
    }

    #[test]
    fn analytic_trace_one() {
        // minimize tr(X) s.t. X[0][0] = 1 on a 1x1 block
        let p = SdpProblem {
            blocks: vec![BlockSpec { size: 1, diag: false }],
            cost: vec![entry(0, 0, 0, 1.0)],
            rows: vec![vec![entry(0, 0, 0, 1.0)]],
            b: vec![1.0],
        };
        let sol = solve(&p, &SolverOptions::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.pobj - 1.0).abs() <= 1e-7);
    }

    #[test]
    fn analytic_offdiagonal_coupling() {
        // minimize x s.t. [[x, 1], [1, x]] ⪰ 0 → x* = 1
        let p = SdpProblem {
            blocks: vec![BlockSpec { size: 2, diag: false }],
            cost: vec![entry(0, 0, 0, 1.0)],
            rows: vec![
                vec![entry(0, 0, 1, 1.0)],              // 2·X01 = 2
                vec![entry(0, 0, 0, 1.0), entry(0, 1, 1, -1.0)], // X00 = X11
            ],
            b: vec![2.0, 0.0],
        };
        let sol = solve(&p, &SolverOptions::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.pobj - 1.0).abs() <= 1e-7, "pobj = {}", sol.pobj);
    }

    #[test]
    fn detects_primal_infeasibility() {
        // x >= 0 with x = -1 is infeasible
        let p = SdpProblem {
            blocks: vec![BlockSpec { size: 1, diag: true }],
            cost: vec![],
            rows: vec![vec![entry(0, 0, 0, 1.0)]],
            b: vec![-1.0],
        };
        let sol = solve(&p, &SolverOptions::default());
        assert_eq!(sol.status, SolveStatus::PrimalInfeasible, "status {:?}", sol.status);
    }

    #[test]
    fn detects_unboundedness() {
        // minimize -X00 s.t. X01 = 1: X00 can grow without bound
        let p = SdpProblem {
            blocks: vec![BlockSpec { size: 2, diag: false }],
            cost: vec![entry(0, 0, 0, -1.0)],
            rows: vec![vec![entry(0, 0, 1, 1.0)]],
            b: vec![2.0],
        };
        let sol = solve(&p, &SolverOptions::default());
        assert_eq!(sol.status, SolveStatus::DualInfeasible, "status {:?}", sol.status);
    }

    /// Build a random SDP with a planted strictly complementary optimum, so
    /// the true optimal value is known exactly.
    fn planted_problem(rng: &mut StdRng) -> (SdpProblem, f64) {
        let nblocks = rng.gen_range(1..=3);
        let mut specs = Vec::new();
        for _ in 0..nblocks {
            let diag = rng.gen_bool(0.3);
            let size = if diag { rng.gen_range(1..=6) } else { rng.gen_range(1..=5) };
            specs.push(BlockSpec { size, diag });
        }
        let m = rng.gen_range(2..=8);

        // planted primal X* and dual slack S*: strictly complementary split
        let mut xstar = BlockVec::zeros(&specs);
        let mut sstar = BlockVec::zeros(&specs);
        for (bi, bs) in specs.iter().enumerate() {
            let nb = bs.size;
            if bs.diag {
                for i in 0..nb {
                    if rng.gen_bool(0.5) {
                        xstar.data[bi][i] = rng.gen_range(0.2..2.0);
                    } else {
                        sstar.data[bi][i] = rng.gen_range(0.2..2.0);
                    }
                }
            } else {
                // random orthogonal basis from QR of a random matrix
                let raw: Vec<f64> = (0..nb * nb).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let q = orthonormalize(&raw, nb);
                for k in 0..nb {
                    let lam_x = if rng.gen_bool(0.5) { rng.gen_range(0.2..2.0) } else { 0.0 };
                    let lam_s = if lam_x == 0.0 { rng.gen_range(0.2..2.0) } else { 0.0 };
                    for i in 0..nb {
                        for j in 0..nb {
                            let qij = q[i * nb + k] * q[j * nb + k];
                            xstar.data[bi][i * nb + j] += lam_x * qij;
                            sstar.data[bi][i * nb + j] += lam_s * qij;
                        }
                    }
                }
            }
        }
        let ystar: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();

        // random sparse-ish constraint rows
        let mut rows = Vec::new();
        for _ in 0..m {
            let mut es = Vec::new();
            for (bi, bs) in specs.iter().enumerate() {
                for i in 0..bs.size {
                    for j in i..bs.size {
                        if bs.diag && i != j {
                            continue;
                        }
                        if rng.gen_bool(0.5) {
                            es.push(entry(bi, i, j, rng.gen_range(-1.0..1.0)));
                        }
                    }
                }
            }
            if es.is_empty() {
                es.push(entry(0, 0, 0, 1.0));
            }
            rows.push(es);
        }

        let mut p = SdpProblem { blocks: specs.clone(), cost: Vec::new(), rows, b: Vec::new() };
        p.b = p.rows.iter().map(|r| xstar.sparse_dot(r)).collect();
        // C = S* + Σ y*_k A_k, stored sparsely from the dense accumulation
        let mut cmat = sstar.clone();
        for (k, row) in p.rows.iter().enumerate() {
            cmat.scatter(row, ystar[k]);
        }
        let mut cost = Vec::new();
        for (bi, bs) in specs.iter().enumerate() {
            for i in 0..bs.size {
                if bs.diag {
                    if cmat.data[bi][i] != 0.0 {
                        cost.push(entry(bi, i, i, cmat.data[bi][i]));
                    }
                } else {
                    for j in i..bs.size {
                        let v = cmat.data[bi][i * bs.size + j];
                        if v != 0.0 {
                            cost.push(entry(bi, i, j, v));
                        }
                    }
                }
            }
        }
        p.cost = cost;
        let opt = cmat.dot(&xstar);
        (p, opt)
    }

    fn orthonormalize(raw: &[f64], n: usize) -> Vec<f64> {
        // Gram-Schmidt on columns of a random matrix; fall back to identity
        // columns on degeneracy (vanishing probability)
        let mut q = vec![0.0; n * n];
        for k in 0..n {
            let mut col: Vec<f64> = (0..n).map(|i| raw[i * n + k]).collect();
            for prev in 0..k {
                let dot: f64 = (0..n).map(|i| q[i * n + prev] * col[i]).sum();
                for i in 0..n {
                    col[i] -= dot * q[i * n + prev];
                }
            }
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                for (i, c) in col.iter_mut().enumerate() {
                    *c = if i == k { 1.0 } else { 0.0 };
                }
            } else {
                for c in col.iter_mut() {
                    *c /= norm;
                }
            }
            for i in 0..n {
                q[i * n + k] = col[i];
            }
        }
        q
    }

    #[test]
    fn planted_instances_recover_optimum() {
        let mut rng = StdRng::seed_from_u64(2024);
        let mut solved = 0;
        for trial in 0..50 {
            let (p, opt) = planted_problem(&mut rng);
            let sol = solve(&p, &SolverOptions::default());
            assert_eq!(
                sol.status,
                SolveStatus::Optimal,
                "trial {trial}: status {:?} (pres {:.2e}, dres {:.2e}, gap {:.2e})",
                sol.status,
                sol.primal_residual,
                sol.dual_residual,
                sol.gap
            );
            let rel = (sol.pobj - opt).abs() / (1.0 + opt.abs());
            assert!(rel <= 1e-7, "trial {trial}: optimum {opt}, got {} (rel {rel:.2e})", sol.pobj);
            solved += 1;
        }
        assert_eq!(solved, 50);
    }

    #[test]
    fn weak_duality_along_the_path() {
        // pobj ≥ dobj − slack at every recorded iterate, across problem kinds
        let mut rng = StdRng::seed_from_u64(7);
        let mut checked = 0usize;
        let (p0, h0) = max_eig_problem();
        let mut runs: Vec<(SdpProblem, SolveHints)> = vec![(p0, h0)];
        for _ in 0..10 {
            let (p, _) = planted_problem(&mut rng);
            runs.push((p, SolveHints::default()));
        }
        for (p, hints) in &runs {
            let sol = solve_with_hints(p, &SolverOptions::default(), hints);
            for (it, st) in sol.trace.iter().enumerate() {
                let scale = 1.0 + st.pobj.abs() + st.dobj.abs();
                assert!(
                    st.pobj >= st.dobj - 1e-9 * scale,
                    "weak duality violated at iterate {it}: pobj {} < dobj {}",
                    st.pobj,
                    st.dobj
                );
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn g17_matches_c_formatting() {
        assert_eq!(fmt_g17(0.0), "0");
        assert_eq!(fmt_g17(1.0), "1");
        assert_eq!(fmt_g17(-1.0), "-1");
        assert_eq!(fmt_g17(0.5), "0.5");
        assert_eq!(fmt_g17(-0.0625), "-0.0625");
        assert_eq!(fmt_g17(123.456), "123.456");
        assert_eq!(fmt_g17(0.1), "0.10000000000000001");
        assert_eq!(fmt_g17(1.0 / 3.0), "0.33333333333333331");
        assert_eq!(fmt_g17(1e-5), "1.0000000000000001e-05");
        assert_eq!(fmt_g17(2f64.powi(-30)), "9.3132257461547852e-10");
        assert_eq!(fmt_g17(1e20), "1e+20");
        assert_eq!(fmt_g17(3.0), "3");
    }

    #[test]
    fn g17_round_trips_random_doubles() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..20000 {
            let mant: f64 = rng.gen_range(-1.0..1.0);
            let exp: i32 = rng.gen_range(-300..300);
            let x = mant * 10f64.powi(exp);
            let s = fmt_g17(x);
            let back: f64 = s.parse().unwrap();
            assert!(back == x || (back == 0.0 && x == 0.0), "{x:e} -> `{s}` -> {back:e}");
        }
    }

    #[test]
    fn sdpa_round_trip_identity() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..20 {
            let (mut p, _) = planted_problem(&mut rng);
            p.canonicalize();
            let text = export_sdpa(&p);
            let back = parse_sdpa(&text).expect("exported file parses");
            assert_eq!(back, p, "round trip through:\n{text}");
        }
    }

    #[test]
    fn sdpa_writes_expected_shape() {
        let p = SdpProblem {
            blocks: vec![BlockSpec { size: 1, diag: false }],
            cost: vec![entry(0, 0, 0, 1.0)],
            rows: vec![vec![entry(0, 0, 0, 1.0)]],
            b: vec![1.0],
        };
        let text = export_sdpa(&p);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "1");
        assert_eq!(lines[1], "1");
        assert_eq!(lines[2], "1");
        assert_eq!(lines[3], "1");
        assert_eq!(lines[4], "0 1 1 1 -1"); // F0 = -C
        assert_eq!(lines[5], "1 1 1 1 1");
        assert_eq!(lines.len(), 6);
    }

    #[test]
    fn sdpa_parses_comments_and_braces() {
        let text = "\"comment\n* another\n2\n2\n{2, -1}\n1.0, 2.0\n1 1 1 2 0.5\n2 2 1 1 1\n";
        let p = parse_sdpa(text).unwrap();
        assert_eq!(p.num_rows(), 2);
        assert_eq!(p.blocks, vec![BlockSpec { size: 2, diag: false }, BlockSpec { size: 1, diag: true }]);
        assert_eq!(p.b, vec![1.0, 2.0]);
        assert_eq!(p.rows[0], vec![entry(0, 0, 1, 0.5)]);
        assert_eq!(p.rows[1], vec![entry(1, 0, 0, 1.0)]);
    }

    #[test]
    fn solution_blocks_are_psd_at_optimum() {
        let (p, hints) = max_eig_problem();
        let opts = SolverOptions::default();
        let sol = solve_with_hints(&p, &opts, &hints);
        for blk in &sol.primal_blocks {
            match blk {
                BlockData::Dense { size, data } => {
                    assert!(crate::linalg::min_eig_sym(data, *size) >= -opts.psd_tol);
                }
                BlockData::Diag { data } => {
                    for &v in data {
                        assert!(v >= -opts.psd_tol);
                    }
                }
            }
        }
        assert!(sol.gap <= opts.gap_tol);
        assert!(sol.primal_residual <= opts.feas_tol);
        assert!(sol.dual_residual <= opts.feas_tol);
    }
}
