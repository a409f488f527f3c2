//! Smoothed Floyd–Warshall forward pass and its reverse-mode adjoint.
//!
//! For `k = 0..n` in ascending order and every admissible pair `(i, j)`,
//! the direct branch `M[i,j]` competes with the shortcut `M[i,k] + M[k,j]`:
//!
//! ```text
//! (p_s, p_d) = Φ_β(M[i,k] + M[k,j], M[i,j])
//! P[i,j,k]   = p_s
//! P[i,j,c]  *= p_d        for c < k and c = i
//! M[i,j]     = min_β(M[i,k] + M[k,j], M[i,j])
//! ```
//!
//! `P[i,j,i]` starts at 1 for every existing edge and holds the probability
//! of the direct connection. Updates are skipped for `i = j`, for `k ∈ {i, j}`
//! and whenever either half of the shortcut is infinite. Because row and
//! column `k` are never written during iteration `k`, all pairs of one
//! iteration are independent.
//!
//! # Adjoint
//!
//! For a fixed pair the final row is `P[c] = s_c · Π_{later updates} d`, so
//! with upstream `g = ∂L/∂P[i,j,·]` the sensitivity of the shortcut weight
//! written at step `k` is
//!
//! ```text
//! ∂L/∂s_k = D_k · (g_k − Q_k)
//! ```
//!
//! where `D_k` is the product of `p_d` over the pair's later updates and
//! `Q_k = Σ_{slots set before k} g_c · P^{(k-1)}[c]`. `Q` is accumulated by a
//! forward sweep over the tape (`Q ← p_d·Q + g_k·s_k`) and `D` by the reverse
//! sweep, so no division by a possibly vanishing `p_d` is needed.

use crate::error::{invalid, Result};
use crate::graph::CostMatrix;
use crate::smooth::{softmin_pair, softmin_value, softmin_weights, Beta};

/// `n × n × n` tensor of highest-intermediate-node probabilities.
///
/// `P[i,j,k]` is the probability that `k` is the highest intermediate node of
/// an `i → j` walk; `P[i,j,i]` is the probability of the direct edge.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortcutTensor {
    n: usize,
    data: Vec<f64>,
}

impl ShortcutTensor {
    pub fn from_raw(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n * n {
            return invalid(format!("shortcut tensor buffer has {} entries, expected {}", data.len(), n * n * n));
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.n + j) * self.n + k]
    }

    /// The distribution `P[i, j, ·]`.
    #[inline]
    pub fn row(&self, i: usize, j: usize) -> &[f64] {
        let base = (i * self.n + j) * self.n;
        &self.data[base..base + self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Whether `P[i, j, ·]` carries any mass.
    pub fn is_reachable(&self, i: usize, j: usize) -> bool {
        self.row(i, j).iter().any(|&p| p > 0.0)
    }
}

/// Smoothed all-pairs distances `M` after the last iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedDistances {
    n: usize,
    data: Vec<f64>,
}

impl SmoothedDistances {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// One non-skipped `(k, i, j)` update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Update {
    pub i: u32,
    pub j: u32,
    pub p_short: f64,
    pub p_direct: f64,
}

/// Everything the adjoint needs to replay a forward pass in reverse.
#[derive(Debug, Clone)]
pub struct DataspTape {
    beta: f64,
    input: CostMatrix,
    updates: Vec<Update>,
    /// Updates of iteration `k` are `updates[level_starts[k]..level_starts[k + 1]]`.
    level_starts: Vec<usize>,
}

impl DataspTape {
    pub fn n(&self) -> usize {
        self.input.n()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn input(&self) -> &CostMatrix {
        &self.input
    }

    pub fn updates(&self) -> &[Update] {
        &self.updates
    }

    pub fn level(&self, k: usize) -> &[Update] {
        &self.updates[self.level_starts[k]..self.level_starts[k + 1]]
    }

    /// Re-executes the recorded updates from the input matrix.
    pub fn replay(&self) -> (ShortcutTensor, SmoothedDistances) {
        let n = self.n();
        let mut m = self.input.as_slice().to_vec();
        for k in 0..n {
            for u in self.level(k) {
                let (i, j) = (u.i as usize, u.j as usize);
                m[i * n + j] = softmin_pair(m[i * n + k] + m[k * n + j], m[i * n + j], self.beta).2;
            }
        }
        let p = shortcuts_from_updates(&self.input, &self.updates, &self.level_starts);
        (ShortcutTensor { n, data: p }, SmoothedDistances { n, data: m })
    }
}

/// Result of a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub shortcuts: ShortcutTensor,
    pub distances: SmoothedDistances,
    pub tape: DataspTape,
}

fn init_shortcuts(m: &CostMatrix) -> Vec<f64> {
    let n = m.n();
    let mut p = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            if m.get(i, j).is_finite() {
                p[(i * n + j) * n + i] = 1.0;
            }
        }
    }
    p
}

/// Builds `P` from a recorded sweep. Every later update of a pair scales its
/// earlier slots by `p_direct`, so each slot ends as its own weight times the
/// suffix product of the pair's later `p_direct` values.
fn shortcuts_from_updates(m: &CostMatrix, updates: &[Update], level_starts: &[usize]) -> Vec<f64> {
    let n = m.n();
    let mut p = init_shortcuts(m);
    let mut suffix = vec![1.0; n * n];
    for k in (0..n).rev() {
        for u in updates[level_starts[k]..level_starts[k + 1]].iter().rev() {
            let ij = u.i as usize * n + u.j as usize;
            p[ij * n + k] = u.p_short * suffix[ij];
            suffix[ij] *= u.p_direct;
        }
    }
    for (ij, s) in suffix.iter().enumerate() {
        p[ij * n + ij / n] *= s;
    }
    p
}

/// Literal triple-loop forward pass.
///
/// Evaluates every `(k, i, j)` with the generic vector softmin routines.
/// Kept as the reference for [`forward_efficient`].
pub fn forward(m: &CostMatrix, beta: Beta) -> Result<Forward> {
    let n = m.n();
    let mut dist = m.as_slice().to_vec();
    let mut p = init_shortcuts(m);
    let mut updates = Vec::new();
    let mut level_starts = Vec::with_capacity(n + 1);
    for k in 0..n {
        level_starts.push(updates.len());
        for i in 0..n {
            for j in 0..n {
                if i == j || i == k || j == k {
                    continue;
                }
                let (mik, mkj) = (dist[i * n + k], dist[k * n + j]);
                if !mik.is_finite() || !mkj.is_finite() {
                    continue;
                }
                let branches = [mik + mkj, dist[i * n + j]];
                let w = softmin_weights(&branches, beta)?;
                let value = softmin_value(&branches, beta)?;
                let row = &mut p[(i * n + j) * n..(i * n + j + 1) * n];
                row[k] = w[0];
                for (c, x) in row.iter_mut().enumerate() {
                    if c < k || c == i {
                        *x *= w[1];
                    }
                }
                dist[i * n + j] = value;
                updates.push(Update { i: i as u32, j: j as u32, p_short: w[0], p_direct: w[1] });
            }
        }
    }
    level_starts.push(updates.len());
    Ok(Forward {
        shortcuts: ShortcutTensor { n, data: p },
        distances: SmoothedDistances { n, data: dist },
        tape: DataspTape { beta: beta.get(), input: m.clone(), updates, level_starts },
    })
}

/// Batched forward pass.
///
/// Each iteration `k` snapshots the finite entries of column `k` and row `k`
/// and sweeps only the pairs whose shortcut is finite. `P` is filled in one
/// backward pass over the recorded updates instead of rescaling rows in
/// place. Produces the same outputs as [`forward`] up to rounding.
pub fn forward_efficient(m: &CostMatrix, beta: Beta) -> Result<Forward> {
    let n = m.n();
    let b = beta.get();
    let mut dist = m.as_slice().to_vec();
    let mut updates = Vec::with_capacity(n * n.saturating_sub(1) * n.saturating_sub(2));
    let mut level_starts = Vec::with_capacity(n + 1);
    let mut into_k: Vec<(usize, f64)> = Vec::with_capacity(n);
    let mut out_of_k: Vec<(usize, f64)> = Vec::with_capacity(n);
    for k in 0..n {
        level_starts.push(updates.len());
        into_k.clear();
        out_of_k.clear();
        into_k.extend((0..n).filter(|&i| i != k).map(|i| (i, dist[i * n + k])).filter(|e| e.1.is_finite()));
        out_of_k.extend((0..n).filter(|&j| j != k).map(|j| (j, dist[k * n + j])).filter(|e| e.1.is_finite()));
        for &(i, mik) in &into_k {
            let row = &mut dist[i * n..(i + 1) * n];
            for &(j, mkj) in &out_of_k {
                if i == j {
                    continue;
                }
                let via = mik + mkj;
                let direct = row[j];
                let (p_short, p_direct, value) = softmin_pair(via, direct, b);
                row[j] = value;
                updates.push(Update { i: i as u32, j: j as u32, p_short, p_direct });
            }
        }
    }
    level_starts.push(updates.len());
    let p = shortcuts_from_updates(m, &updates, &level_starts);
    Ok(Forward {
        shortcuts: ShortcutTensor { n, data: p },
        distances: SmoothedDistances { n, data: dist },
        tape: DataspTape { beta: b, input: m.clone(), updates, level_starts },
    })
}

/// Gradient of a scalar loss with respect to the input cost matrix.
///
/// `grad_p` is `∂L/∂P` (`n³`, row-major like [`ShortcutTensor`]) and `grad_m`
/// is `∂L/∂M` for the final smoothed distances (`n²`). The result is `n²`
/// and exactly zero on infinite input entries.
pub fn backward(tape: &DataspTape, grad_p: &[f64], grad_m: &[f64]) -> Result<Vec<f64>> {
    let n = tape.n();
    if grad_p.len() != n * n * n || grad_m.len() != n * n {
        return invalid(format!("gradient shapes ({}, {}) do not match n = {n}", grad_p.len(), grad_m.len()));
    }
    let beta = tape.beta;
    let input = tape.input.as_slice();

    // Forward sweep: Q before each update.
    let mut q: Vec<f64> =
        (0..n * n).map(|ij| if input[ij].is_finite() { grad_p[ij * n + ij / n] } else { 0.0 }).collect();
    let mut q_before = vec![0.0; tape.updates.len()];
    for k in 0..n {
        let start = tape.level_starts[k];
        for (r, u) in tape.level(k).iter().enumerate() {
            let ij = u.i as usize * n + u.j as usize;
            q_before[start + r] = q[ij];
            q[ij] = u.p_direct * q[ij] + grad_p[ij * n + k] * u.p_short;
        }
    }
    drop(q);

    let mut gm = grad_m.to_vec();
    let mut later = vec![1.0; n * n];
    for k in (0..n).rev() {
        let start = tape.level_starts[k];
        for (r, u) in tape.level(k).iter().enumerate() {
            let (i, j) = (u.i as usize, u.j as usize);
            let ij = i * n + j;
            let g_short = later[ij] * (grad_p[ij * n + k] - q_before[start + r]);
            let g_value = gm[ij];
            let curvature = beta * u.p_short * u.p_direct;
            let g_via = g_value * u.p_short - g_short * curvature;
            gm[ij] = g_value * u.p_direct + g_short * curvature;
            later[ij] *= u.p_direct;
            // Row and column k are read-only during iteration k.
            gm[i * n + k] += g_via;
            gm[k * n + j] += g_via;
        }
    }
    for (g, x) in gm.iter_mut().zip(input) {
        if !x.is_finite() {
            *g = 0.0;
        }
    }
    Ok(gm)
}
