//! Nested dyadic refinement regions over the voxel box.
//!
//! Level `ℓ` has `base_dims · 2^ℓ` cells along every used axis. A level-`ℓ`
//! cell lies in `Ω^ℓ` when its parent is refined; it is active when it lies
//! in `Ω^ℓ` and is not refined itself. Active cells of all levels tile the
//! box exactly once.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::voxel::VoxelGrid;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HierarchyError {
    #[error("cell {0:?} is not active")]
    InactiveCell(CellId),
    #[error("cell {0:?} lies outside its level")]
    OutOfRange(CellId),
    #[error("refined cell {0:?} has an unrefined parent")]
    NotNested(CellId),
    #[error("dimension must be 1, 2 or 3")]
    BadDimension,
}

/// A cell of some level, addressed by its integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellId {
    pub level: usize,
    pub index: [usize; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalMesh {
    ndim: usize,
    base_dims: [usize; 3],
    origin: [f64; 3],
    lengths: [f64; 3],
    /// `refined[ℓ][c]`: level-ℓ cell `c` is subdivided (lies in `Ω^{ℓ+1}`).
    refined: Vec<Vec<bool>>,
}

impl HierarchicalMesh {
    pub fn new(ndim: usize, base_dims: [usize; 3], origin: [f64; 3], lengths: [f64; 3]) -> Result<Self, HierarchyError> {
        if ndim == 0 || ndim > 3 || base_dims.iter().any(|&d| d == 0) {
            return Err(HierarchyError::BadDimension);
        }
        let mut dims = base_dims;
        for d in dims.iter_mut().skip(ndim) {
            *d = 1;
        }
        let n = dims[0] * dims[1] * dims[2];
        Ok(HierarchicalMesh {
            ndim,
            base_dims: dims,
            origin,
            lengths,
            refined: vec![vec![false; n]],
        })
    }

    /// Level-0 mesh equal to the voxel mesh.
    pub fn for_grid(grid: &VoxelGrid) -> Self {
        Self::new(grid.ndim(), grid.shape().dims(), grid.origin(), grid.lengths()).expect("valid grid")
    }

    /// Every cell refined down to `levels`.
    pub fn uniform(&self, levels: usize) -> Self {
        let mut m = HierarchicalMesh {
            refined: Vec::new(),
            ..self.clone()
        };
        for l in 0..=levels {
            let n = m.level_len(l);
            m.refined.push(vec![l < levels; n]);
        }
        m
    }

    #[inline]
    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn base_dims(&self) -> [usize; 3] {
        self.base_dims
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.lengths
    }

    /// Finest level that contains active cells.
    pub fn max_level(&self) -> usize {
        self.refined.len() - 1
    }

    pub fn dims(&self, level: usize) -> [usize; 3] {
        let mut d = self.base_dims;
        for x in d.iter_mut().take(self.ndim) {
            *x <<= level;
        }
        d
    }

    pub fn level_len(&self, level: usize) -> usize {
        let d = self.dims(level);
        d[0] * d[1] * d[2]
    }

    #[inline]
    pub fn linear(&self, level: usize, c: [usize; 3]) -> usize {
        let d = self.dims(level);
        c[0] + d[0] * (c[1] + d[1] * c[2])
    }

    #[inline]
    pub fn multi(&self, level: usize, i: usize) -> [usize; 3] {
        let d = self.dims(level);
        [i % d[0], (i / d[0]) % d[1], i / (d[0] * d[1])]
    }

    #[inline]
    pub fn parent(&self, c: [usize; 3]) -> [usize; 3] {
        let mut p = c;
        for x in p.iter_mut().take(self.ndim) {
            *x /= 2;
        }
        p
    }

    pub fn in_range(&self, id: CellId) -> bool {
        let d = self.dims(id.level);
        id.index.iter().zip(&d).all(|(c, n)| c < n)
    }

    pub fn is_refined(&self, id: CellId) -> bool {
        id.level < self.refined.len() && self.refined[id.level][self.linear(id.level, id.index)]
    }

    /// Whether the cell lies in `Ω^ℓ`.
    pub fn in_omega(&self, id: CellId) -> bool {
        if id.level == 0 {
            return true;
        }
        self.is_refined(CellId {
            level: id.level - 1,
            index: self.parent(id.index),
        })
    }

    pub fn is_active(&self, id: CellId) -> bool {
        self.in_range(id) && self.in_omega(id) && !self.is_refined(id)
    }

    /// Indicator of `Ω^ℓ` over level-ℓ cells (empty region above the
    /// finest level).
    pub fn omega_mask(&self, level: usize) -> Vec<bool> {
        let n = self.level_len(level);
        if level == 0 {
            return vec![true; n];
        }
        if level > self.refined.len() {
            return vec![false; n];
        }
        (0..n)
            .map(|i| {
                let c = self.multi(level, i);
                self.refined[level - 1][self.linear(level - 1, self.parent(c))]
            })
            .collect()
    }

    /// Active cells ordered by level, then by linear index.
    pub fn active_cells(&self) -> Vec<CellId> {
        let mut out = Vec::new();
        for level in 0..=self.max_level() {
            let omega = self.omega_mask(level);
            for (i, &inside) in omega.iter().enumerate() {
                if inside && !self.refined[level][i] {
                    out.push(CellId {
                        level,
                        index: self.multi(level, i),
                    });
                }
            }
        }
        out
    }

    pub fn cell_size(&self, level: usize) -> [f64; 3] {
        let d = self.dims(level);
        [
            self.lengths[0] / d[0] as f64,
            self.lengths[1] / d[1] as f64,
            self.lengths[2] / d[2] as f64,
        ]
    }

    pub fn cell_bounds(&self, id: CellId) -> ([f64; 3], [f64; 3]) {
        let d = self.dims(id.level);
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..3 {
            lo[a] = self.origin[a] + (id.index[a] as f64 * self.lengths[a]) / d[a] as f64;
            hi[a] = self.origin[a] + ((id.index[a] + 1) as f64 * self.lengths[a]) / d[a] as f64;
        }
        (lo, hi)
    }

    /// Active cell containing `x` (clamped to the box).
    pub fn locate(&self, x: &[f64; 3]) -> CellId {
        let mut level = 0;
        loop {
            let d = self.dims(level);
            let mut c = [0usize; 3];
            for a in 0..self.ndim {
                let t = (x[a] - self.origin[a]) / self.lengths[a] * d[a] as f64;
                let f = crate::math::floor(t);
                c[a] = if f < 0.0 { 0 } else { (f as usize).min(d[a] - 1) };
            }
            let id = CellId { level, index: c };
            if !self.is_refined(id) {
                return id;
            }
            level += 1;
        }
    }

    /// Level-`level` descendants of a cell of a coarser level.
    pub fn descendants(&self, id: CellId, level: usize) -> Vec<CellId> {
        let f = 1usize << (level - id.level);
        let mut lo = [0usize; 3];
        let mut hi = [1usize; 3];
        for a in 0..self.ndim {
            lo[a] = id.index[a] * f;
            hi[a] = lo[a] + f;
        }
        let mut out = Vec::new();
        for z in lo[2]..hi[2] {
            for y in lo[1]..hi[1] {
                for x in lo[0]..hi[0] {
                    out.push(CellId {
                        level,
                        index: [x, y, z],
                    });
                }
            }
        }
        out
    }

    /// Refine around the marked active cells: `Ω^{ℓ+1}` grows by the union
    /// of the supports of all degree-`p` level-ℓ functions that are nonzero
    /// on a marked cell, then coarser levels are extended to keep the
    /// regions nested.
    pub fn refine(&self, marked: &[CellId], degree: usize) -> Result<Self, HierarchyError> {
        for &id in marked {
            if !self.in_range(id) {
                return Err(HierarchyError::OutOfRange(id));
            }
            if !self.is_active(id) {
                return Err(HierarchyError::InactiveCell(id));
            }
        }
        let mut out = self.clone();
        for &id in marked {
            let l = id.level;
            while out.refined.len() <= l + 1 {
                let n = out.level_len(out.refined.len());
                out.refined.push(vec![false; n]);
            }
            let d = out.dims(l);
            let mut lo = [0usize; 3];
            let mut hi = [0usize; 3];
            for a in 0..out.ndim {
                lo[a] = id.index[a].saturating_sub(degree);
                hi[a] = (id.index[a] + degree).min(d[a] - 1);
            }
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        let i = out.linear(l, [x, y, z]);
                        out.refined[l][i] = true;
                    }
                }
            }
        }
        out.close_nesting();
        out.trim();
        Ok(out)
    }

    fn close_nesting(&mut self) {
        for l in (1..self.refined.len()).rev() {
            for i in 0..self.refined[l].len() {
                if self.refined[l][i] {
                    let p = self.parent(self.multi(l, i));
                    let pi = self.linear(l - 1, p);
                    self.refined[l - 1][pi] = true;
                }
            }
        }
    }

    fn trim(&mut self) {
        // The finest level never has refined cells.
        while self.refined.len() > 1 && self.refined[self.refined.len() - 2].iter().all(|&r| !r) {
            self.refined.pop();
        }
        let last = self.refined.len() - 1;
        if self.refined[last].iter().any(|&r| r) {
            let n = self.level_len(last + 1);
            self.refined.push(vec![false; n]);
        }
    }

    /// Level-ℓ cells flagged as refined.
    pub fn refined_cells(&self, level: usize) -> Vec<[usize; 3]> {
        if level >= self.refined.len() {
            return Vec::new();
        }
        self.refined[level]
            .iter()
            .enumerate()
            .filter(|(_, &r)| r)
            .map(|(i, _)| self.multi(level, i))
            .collect()
    }

    /// Rebuild from explicit per-level refined cell lists, checking nesting.
    pub fn with_refined(&self, levels: &[Vec<[usize; 3]>]) -> Result<Self, HierarchyError> {
        let mut out = HierarchicalMesh {
            refined: Vec::new(),
            ..self.clone()
        };
        for (l, cells) in levels.iter().enumerate() {
            let n = out.level_len(l);
            let mut v = vec![false; n];
            for &c in cells {
                let id = CellId { level: l, index: c };
                if !out.in_range(id) {
                    return Err(HierarchyError::OutOfRange(id));
                }
                v[out.linear(l, c)] = true;
            }
            out.refined.push(v);
        }
        if out.refined.is_empty() {
            out.refined.push(vec![false; out.level_len(0)]);
        }
        for l in 1..out.refined.len() {
            for i in 0..out.refined[l].len() {
                if out.refined[l][i] {
                    let c = out.multi(l, i);
                    let p = out.parent(c);
                    if !out.refined[l - 1][out.linear(l - 1, p)] {
                        return Err(HierarchyError::NotNested(CellId { level: l, index: c }));
                    }
                }
            }
        }
        out.trim();
        Ok(out)
    }

    /// Total number of active cells.
    pub fn active_count(&self) -> usize {
        self.active_cells().len()
    }
}

/// Summed-area table for O(1) "is this box fully inside" queries.
#[derive(Debug, Clone)]
pub(crate) struct BoxCounter {
    dims: [usize; 3],
    sat: Vec<u32>,
}

impl BoxCounter {
    pub(crate) fn new(dims: [usize; 3], mask: &[bool]) -> Self {
        let e = [dims[0] + 1, dims[1] + 1, dims[2] + 1];
        let mut sat = vec![0u32; e[0] * e[1] * e[2]];
        let idx = |x: usize, y: usize, z: usize| x + e[0] * (y + e[1] * z);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let v = mask[x + dims[0] * (y + dims[1] * z)] as u32;
                    let s = v + sat[idx(x, y + 1, z + 1)] + sat[idx(x + 1, y, z + 1)] + sat[idx(x + 1, y + 1, z)]
                        - sat[idx(x, y, z + 1)]
                        - sat[idx(x, y + 1, z)]
                        - sat[idx(x + 1, y, z)]
                        + sat[idx(x, y, z)];
                    sat[idx(x + 1, y + 1, z + 1)] = s;
                }
            }
        }
        BoxCounter { dims, sat }
    }

    /// Number of set cells in the inclusive box `[lo, hi]`.
    pub(crate) fn count(&self, lo: [usize; 3], hi: [usize; 3]) -> u32 {
        let e = [self.dims[0] + 1, self.dims[1] + 1];
        let at = |x: usize, y: usize, z: usize| self.sat[x + e[0] * (y + e[1] * z)] as i64;
        let (x0, y0, z0) = (lo[0], lo[1], lo[2]);
        let (x1, y1, z1) = (hi[0] + 1, hi[1] + 1, hi[2] + 1);
        let s = at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0) + at(x0, y0, z1) + at(x0, y1, z0)
            + at(x1, y0, z0)
            - at(x0, y0, z0);
        s as u32
    }

    pub(crate) fn all(&self, lo: [usize; 3], hi: [usize; 3]) -> bool {
        let n = (hi[0] - lo[0] + 1) * (hi[1] - lo[1] + 1) * (hi[2] - lo[2] + 1);
        self.count(lo, hi) as usize == n
    }
}
