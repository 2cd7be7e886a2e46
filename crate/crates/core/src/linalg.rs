//! Sparse assembly and a banded direct solver.
//!
//! Systems are renumbered with reverse Cuthill–McKee and factored as a band
//! matrix with partial pivoting, which handles the indefinite stabilized
//! Stokes systems as well as the SPD elasticity ones.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("zero pivot at unknown {index} (magnitude {magnitude:e})")]
    ZeroPivot { index: usize, magnitude: f64 },
    #[error("vector has length {got}, expected {expected}")]
    Length { expected: usize, got: usize },
}

/// Triplet accumulator.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(u32, u32, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        TripletBuilder { n, entries: Vec::new() }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.entries.push((i as u32, j as u32, v));
        }
    }

    pub fn build(mut self) -> CsrMatrix {
        self.entries.sort_unstable_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut cols: Vec<usize> = Vec::with_capacity(self.entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(u32, u32)> = None;
        for (i, j, v) in self.entries {
            if last == Some((i, j)) {
                *vals.last_mut().expect("entry") += v;
            } else {
                cols.push(j as usize);
                vals.push(v);
                row_ptr[i as usize + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n: self.n,
            row_ptr,
            cols,
            vals,
        }
    }
}

/// Square compressed-row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn norm1(&self) -> f64 {
        let mut col = vec![0.0; self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                col[j] += v.abs();
            }
        }
        col.into_iter().fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest `|a_ij − a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst / self.max_abs().max(f64::MIN_POSITIVE)
    }
}

/// Reverse Cuthill–McKee ordering of the symmetrized sparsity pattern;
/// `order[k]` is the original index placed at position `k`.
pub fn rcm_order(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for (j, _) in a.row(i) {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for l in &mut adj {
        l.sort_unstable();
        l.dedup();
    }
    let deg: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (deg[i], i));
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = peripheral(&adj, &deg, seed);
        let mut q = VecDeque::new();
        visited[start] = true;
        q.push_back(start);
        while let Some(v) = q.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (deg[w], w));
            for w in next {
                visited[w] = true;
                q.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// A node of high eccentricity in the component of `seed`.
fn peripheral(adj: &[Vec<usize>], deg: &[usize], seed: usize) -> usize {
    let mut start = seed;
    let mut best_depth = 0;
    for _ in 0..4 {
        let (far, depth) = bfs_far(adj, deg, start);
        if depth <= best_depth {
            break;
        }
        best_depth = depth;
        start = far;
    }
    start
}

fn bfs_far(adj: &[Vec<usize>], deg: &[usize], s: usize) -> (usize, usize) {
    let mut dist: alloc::collections::BTreeMap<usize, usize> = alloc::collections::BTreeMap::new();
    dist.insert(s, 0);
    let mut q = VecDeque::from([s]);
    let mut far = (s, 0);
    while let Some(v) = q.pop_front() {
        let d = dist[&v];
        if d > far.1 || (d == far.1 && deg[v] < deg[far.0]) {
            far = (v, d);
        }
        for &w in &adj[v] {
            if let alloc::collections::btree_map::Entry::Vacant(e) = dist.entry(w) {
                e.insert(d + 1);
                q.push_back(w);
            }
        }
    }
    far
}

/// Band LU factors with partial pivoting, in a permuted numbering.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
    /// `order[k]` = original index at position `k`.
    order: Vec<usize>,
    norm1: f64,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self, LinalgError> {
        let order = rcm_order(a);
        let n = a.n;
        let mut pos = vec![0usize; n];
        for (k, &i) in order.iter().enumerate() {
            pos[i] = k;
        }
        let (mut kl, mut ku) = (0usize, 0usize);
        for i in 0..n {
            for (j, _) in a.row(i) {
                let (pi, pj) = (pos[i], pos[j]);
                if pi > pj {
                    kl = kl.max(pi - pj);
                } else {
                    ku = ku.max(pj - pi);
                }
            }
        }
        let width = 2 * kl + ku + 1;
        let mut data = vec![0.0; n * width];
        for i in 0..n {
            for (j, v) in a.row(i) {
                let (pi, pj) = (pos[i], pos[j]);
                data[pi * width + (pj + kl - pi)] += v;
            }
        }
        let scale = a.max_abs();
        let mut lu = BandedLu {
            n,
            kl,
            ku,
            width,
            data,
            pivots: vec![0; n],
            order,
            norm1: a.norm1(),
        };
        lu.eliminate(scale)?;
        Ok(lu)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    fn eliminate(&mut self, scale: f64) -> Result<(), LinalgError> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let tol = scale * f64::EPSILON * 16.0;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.at(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.data[self.at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            self.pivots[k] = p;
            if best <= tol {
                return Err(LinalgError::ZeroPivot {
                    index: self.order[k],
                    magnitude: best,
                });
            }
            if p != k {
                for j in k..=last_col {
                    let (x, y) = (self.at(k, j), self.at(p, j));
                    self.data.swap(x, y);
                }
            }
            let piv = self.data[self.at(k, k)];
            for i in k + 1..=last_row {
                let ik = self.at(i, k);
                let l = self.data[ik] / piv;
                if l == 0.0 {
                    continue;
                }
                self.data[ik] = l;
                let (ri, rk) = (self.at(i, k + 1), self.at(k, k + 1));
                let len = last_col - k;
                for t in 0..len {
                    self.data[ri + t] -= l * self.data[rk + t];
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    fn solve_permuted(&self, y: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let p = self.pivots[k];
            y.swap(k, p);
            let yk = y[k];
            if yk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    y[i] -= self.data[self.at(i, k)] * yk;
                }
            }
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..=(i + kl + ku).min(n - 1) {
                s -= self.data[self.at(i, j)] * y[j];
            }
            y[i] = s / self.data[self.at(i, i)];
        }
    }

    fn solve_permuted_transpose(&self, y: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for i in 0..n {
            let mut s = y[i];
            let j0 = i.saturating_sub(kl + ku);
            for j in j0..i {
                s -= self.data[self.at(j, i)] * y[j];
            }
            y[i] = s / self.data[self.at(i, i)];
        }
        for k in (0..n).rev() {
            let mut s = y[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                s -= self.data[self.at(i, k)] * y[i];
            }
            y[k] = s;
            y.swap(k, self.pivots[k]);
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        self.check(b)?;
        let mut y: Vec<f64> = self.order.iter().map(|&i| b[i]).collect();
        self.solve_permuted(&mut y);
        let mut x = vec![0.0; self.n];
        for (k, &i) in self.order.iter().enumerate() {
            x[i] = y[k];
        }
        Ok(x)
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        self.check(b)?;
        let mut y: Vec<f64> = self.order.iter().map(|&i| b[i]).collect();
        self.solve_permuted_transpose(&mut y);
        let mut x = vec![0.0; self.n];
        for (k, &i) in self.order.iter().enumerate() {
            x[i] = y[k];
        }
        Ok(x)
    }

    fn check(&self, b: &[f64]) -> Result<(), LinalgError> {
        if b.len() != self.n {
            return Err(LinalgError::Length {
                expected: self.n,
                got: b.len(),
            });
        }
        Ok(())
    }

    /// 1-norm condition number estimate (Hager's method).
    pub fn condition_estimate(&self) -> f64 {
        let n = self.n;
        if n == 0 {
            return 0.0;
        }
        let mut x = vec![1.0 / n as f64; n];
        let mut est = 0.0;
        for _ in 0..5 {
            let y = self.solve(&x).expect("length");
            let norm: f64 = y.iter().map(|v| v.abs()).sum();
            if norm <= est {
                break;
            }
            est = norm;
            let xi: Vec<f64> = y.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect();
            let z = self.solve_transpose(&xi).expect("length");
            let (jmax, zmax) = z.iter().enumerate().fold((0, 0.0f64), |m, (j, v)| if v.abs() > m.1 { (j, v.abs()) } else { m });
            let zx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
            if zmax <= zx {
                break;
            }
            x = vec![0.0; n];
            x[jmax] = 1.0;
        }
        est * self.norm1
    }
}

/// Solution of a linear system with its relative residual.
#[derive(Debug, Clone)]
pub struct Solved {
    pub x: Vec<f64>,
    pub relative_residual: f64,
    pub lu: BandedLu,
}

/// Factor, solve and refine once if the residual is above `1e-10`.
pub fn solve(a: &CsrMatrix, b: &[f64]) -> Result<Solved, LinalgError> {
    let lu = BandedLu::factor(a)?;
    let mut x = lu.solve(b)?;
    let bn = l2(b);
    let residual = |x: &[f64]| {
        let r: Vec<f64> = a.mul(x).iter().zip(b).map(|(p, q)| q - p).collect();
        l2(&r)
    };
    let mut r = residual(&x);
    for _ in 0..3 {
        if r <= 1e-10 * bn {
            break;
        }
        let ax = a.mul(&x);
        let res: Vec<f64> = b.iter().zip(&ax).map(|(q, p)| q - p).collect();
        let dx = lu.solve(&res)?;
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
        r = residual(&x);
    }
    Ok(Solved {
        x,
        relative_residual: if bn > 0.0 { r / bn } else { r },
        lu,
    })
}

fn l2(v: &[f64]) -> f64 {
    crate::math::sqrt(v.iter().map(|x| x * x).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    }

    fn random_sparse(n: usize, seed: u64, sym: bool) -> CsrMatrix {
        let mut s = seed;
        let mut b = TripletBuilder::new(n);
        // Shuffled 2D grid Laplacian-like pattern plus noise.
        let m = (n as f64).sqrt() as usize;
        let perm: Vec<usize> = {
            let mut p: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = ((lcg(&mut s) + 0.5) * (i + 1) as f64) as usize % (i + 1);
                p.swap(i, j);
            }
            p
        };
        for i in 0..n {
            b.add(perm[i], perm[i], 4.0 + lcg(&mut s));
            for j in [i + 1, i + m] {
                if j < n {
                    let v = lcg(&mut s);
                    let w = if sym { v } else { lcg(&mut s) };
                    b.add(perm[i], perm[j], v);
                    b.add(perm[j], perm[i], w);
                }
            }
        }
        b.build()
    }

    #[test]
    fn duplicates_are_summed() {
        let mut b = TripletBuilder::new(2);
        b.add(0, 0, 1.0);
        b.add(0, 0, 2.0);
        b.add(1, 0, -1.0);
        b.add(1, 1, 5.0);
        let a = b.build();
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.get(0, 1), 0.0);
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.norm1(), 5.0);
    }

    #[test]
    fn solves_random_systems() {
        for (seed, sym) in [(1, true), (2, false), (3, false)] {
            let a = random_sparse(400, seed, sym);
            let mut s = seed + 10;
            let x0: Vec<f64> = (0..400).map(|_| lcg(&mut s)).collect();
            let b = a.mul(&x0);
            let sol = solve(&a, &b).unwrap();
            assert!(sol.relative_residual < 1e-12);
            for (p, q) in sol.x.iter().zip(&x0) {
                assert!((p - q).abs() < 1e-10);
            }
            let (kl, ku) = sol.lu.bandwidth();
            assert!(kl <= 60 && ku <= 60, "band {kl} {ku}");
        }
    }

    #[test]
    fn transpose_solve_matches() {
        let a = random_sparse(100, 9, false);
        let lu = BandedLu::factor(&a).unwrap();
        let b: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let x = lu.solve_transpose(&b).unwrap();
        // Check Aᵀx = b via columns.
        let mut atx = vec![0.0; 100];
        for i in 0..100 {
            for (j, v) in a.row(i) {
                atx[j] += v * x[i];
            }
        }
        for (p, q) in atx.iter().zip(&b) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        // Saddle-point block [[1, 1], [1, 0]].
        let mut b = TripletBuilder::new(2);
        b.add(0, 0, 1.0);
        b.add(0, 1, 1.0);
        b.add(1, 0, 1.0);
        let a = b.build();
        let s = solve(&a, &[3.0, 1.0]).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-15 && (s.x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn singular_matrix_reports_zero_pivot() {
        let mut b = TripletBuilder::new(3);
        b.add(0, 0, 1.0);
        b.add(0, 1, 1.0);
        b.add(1, 0, 1.0);
        b.add(1, 1, 1.0);
        b.add(2, 2, 1.0);
        assert!(matches!(BandedLu::factor(&b.build()), Err(LinalgError::ZeroPivot { .. })));
    }

    #[test]
    fn condition_estimate_of_diagonal() {
        let mut b = TripletBuilder::new(5);
        for (i, d) in [1.0, 10.0, 0.01, 3.0, 7.0].iter().enumerate() {
            b.add(i, i, *d);
        }
        let lu = BandedLu::factor(&b.build()).unwrap();
        assert!((lu.condition_estimate() - 1000.0).abs() < 1e-9);
    }
}
