//! Voxel grids, binary images and the topology bookkeeping done on them:
//! connected-component labeling, Euler characteristics and boolean algebra.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VoxelError {
    #[error("dimension must be 2 or 3 (got {0})")]
    BadDimension(usize),
    #[error("all dims must be positive")]
    EmptyAxis,
    #[error("expected {expected} values, got {got}")]
    ValueCount { expected: usize, got: usize },
    #[error("spacing must be strictly positive")]
    BadSpacing,
    #[error("image shapes differ: {a:?} vs {b:?}")]
    ShapeMismatch { a: Shape, b: Shape },
    #[error("image subdivisions differ: {a} vs {b}")]
    SubdivisionMismatch { a: usize, b: usize },
}

/// Extent of a 2D or 3D cell array. Unused trailing axes have extent 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Shape {
    ndim: usize,
    dims: [usize; 3],
}

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self, VoxelError> {
        if dims.len() < 2 || dims.len() > 3 {
            return Err(VoxelError::BadDimension(dims.len()));
        }
        Self::with_ndim(dims)
    }

    /// Like [`Shape::new`] but also accepts 1D shapes (used by the 1D
    /// filtering analysis and tests).
    pub fn with_ndim(dims: &[usize]) -> Result<Self, VoxelError> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(VoxelError::BadDimension(dims.len()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(VoxelError::EmptyAxis);
        }
        let mut d = [1; 3];
        d[..dims.len()].copy_from_slice(dims);
        Ok(Shape {
            ndim: dims.len(),
            dims: d,
        })
    }

    pub fn d2(nx: usize, ny: usize) -> Self {
        Self::new(&[nx, ny]).expect("positive 2D dims")
    }

    pub fn d3(nx: usize, ny: usize, nz: usize) -> Self {
        Self::new(&[nx, ny, nz]).expect("positive 3D dims")
    }

    #[inline]
    pub fn ndim(&self) -> usize {
        self.ndim
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn active_dims(&self) -> &[usize] {
        &self.dims[..self.ndim]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, c: [usize; 3]) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    #[inline]
    pub fn coords(&self, lin: usize) -> [usize; 3] {
        let x = lin % self.dims[0];
        let r = lin / self.dims[0];
        [x, r % self.dims[1], r / self.dims[1]]
    }

    pub fn scaled(&self, factor: usize) -> Shape {
        let mut dims = self.dims;
        for d in dims.iter_mut().take(self.ndim) {
            *d *= factor;
        }
        Shape {
            ndim: self.ndim,
            dims,
        }
    }

    /// Signed neighbour offsets for the given connectivity.
    pub fn neighbour_offsets(&self, conn: Connectivity) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        let r = |axis: usize| if axis < self.ndim { -1isize..=1 } else { 0..=0 };
        for dz in r(2) {
            for dy in r(1) {
                for dx in r(0) {
                    let nonzero = (dx != 0) as usize + (dy != 0) as usize + (dz != 0) as usize;
                    let keep = match conn {
                        Connectivity::Vertex => nonzero > 0,
                        Connectivity::Face => nonzero == 1,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }

    #[inline]
    pub fn offset(&self, c: [usize; 3], o: [isize; 3]) -> Option<[usize; 3]> {
        let mut r = [0usize; 3];
        for a in 0..3 {
            let v = c[a] as isize + o[a];
            if v < 0 || v >= self.dims[a] as isize {
                return None;
            }
            r[a] = v as usize;
        }
        Some(r)
    }

    pub fn on_border(&self, c: [usize; 3]) -> bool {
        (0..self.ndim).any(|a| c[a] == 0 || c[a] + 1 == self.dims[a])
    }
}

/// Which cells count as adjacent when forming connected regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Connectivity {
    /// Cells sharing at least a vertex (8-neighbourhood in 2D, 26 in 3D).
    #[default]
    Vertex,
    /// Cells sharing a face (4-neighbourhood in 2D, 6 in 3D).
    Face,
}

impl Connectivity {
    /// The complementary connectivity used for background components.
    pub fn dual(self) -> Self {
        match self {
            Connectivity::Vertex => Connectivity::Face,
            Connectivity::Face => Connectivity::Vertex,
        }
    }
}

/// Grayscale scan data: one normalised value per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    shape: Shape,
    spacing: [f64; 3],
    origin: [f64; 3],
    values: Vec<f64>,
}

impl VoxelGrid {
    pub fn new(shape: Shape, spacing: &[f64], values: Vec<f64>) -> Result<Self, VoxelError> {
        Self::with_origin(shape, spacing, &[0.0; 3][..shape.ndim()], values)
    }

    pub fn with_origin(
        shape: Shape,
        spacing: &[f64],
        origin: &[f64],
        values: Vec<f64>,
    ) -> Result<Self, VoxelError> {
        if values.len() != shape.len() {
            return Err(VoxelError::ValueCount {
                expected: shape.len(),
                got: values.len(),
            });
        }
        if spacing.len() != shape.ndim() || origin.len() != shape.ndim() {
            return Err(VoxelError::BadDimension(spacing.len()));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(VoxelError::BadSpacing);
        }
        let mut sp = [1.0; 3];
        let mut or = [0.0; 3];
        sp[..shape.ndim()].copy_from_slice(spacing);
        or[..shape.ndim()].copy_from_slice(origin);
        Ok(VoxelGrid {
            shape,
            spacing: sp,
            origin: or,
            values,
        })
    }

    /// Unit-spaced grid with origin at zero.
    pub fn unit(shape: Shape, values: Vec<f64>) -> Result<Self, VoxelError> {
        let sp = [1.0; 3];
        Self::new(shape, &sp[..shape.ndim()], values)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.ndim()
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, c: [usize; 3]) -> f64 {
        self.values[self.shape.index(c)]
    }

    /// Physical extent along each axis.
    pub fn lengths(&self) -> [f64; 3] {
        let d = self.shape.dims();
        [
            d[0] as f64 * self.spacing[0],
            d[1] as f64 * self.spacing[1],
            d[2] as f64 * self.spacing[2],
        ]
    }

    /// Integral of the piecewise-constant grayscale function.
    pub fn integral(&self) -> f64 {
        let cell = (0..self.ndim()).map(|a| self.spacing[a]).product::<f64>();
        self.values.iter().sum::<f64>() * cell
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Voxel containing a physical point (clamped to the grid).
    pub fn voxel_of(&self, x: &[f64]) -> [usize; 3] {
        let mut c = [0usize; 3];
        for a in 0..self.ndim() {
            let t = (x[a] - self.origin[a]) / self.spacing[a];
            let i = crate::math::floor(t);
            let n = self.shape.dims()[a];
            c[a] = if i < 0.0 {
                0
            } else if i as usize >= n {
                n - 1
            } else {
                i as usize
            };
        }
        c
    }
}

/// Direct segmentation: a cell is filled iff its value is strictly above
/// `g_crit`.
pub fn threshold(grid: &VoxelGrid, g_crit: f64) -> BinaryImage {
    BinaryImage {
        shape: grid.shape,
        subdivision: 1,
        bits: grid.values.iter().map(|&v| v > g_crit).collect(),
    }
}

/// Boolean voxelization, possibly on a grid refined `subdivision` times
/// relative to the base voxels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    shape: Shape,
    subdivision: usize,
    bits: Vec<bool>,
}

impl BinaryImage {
    pub fn new(shape: Shape, subdivision: usize, bits: Vec<bool>) -> Result<Self, VoxelError> {
        if bits.len() != shape.len() {
            return Err(VoxelError::ValueCount {
                expected: shape.len(),
                got: bits.len(),
            });
        }
        Ok(BinaryImage {
            shape,
            subdivision: subdivision.max(1),
            bits,
        })
    }

    pub fn filled(shape: Shape, value: bool) -> Self {
        BinaryImage {
            shape,
            subdivision: 1,
            bits: vec![value; shape.len()],
        }
    }

    /// Parse rows of `#`/`.` (or `1`/`0`) into a 2D image. The first row is
    /// the top of the image (largest y).
    pub fn from_rows(rows: &[&str]) -> Self {
        let ny = rows.len();
        let nx = rows[0].chars().filter(|c| !c.is_whitespace()).count();
        let mut bits = vec![false; nx * ny];
        for (r, row) in rows.iter().enumerate() {
            let y = ny - 1 - r;
            let chars: Vec<char> = row.chars().filter(|c| !c.is_whitespace()).collect();
            assert_eq!(chars.len(), nx, "ragged image rows");
            for (x, ch) in chars.into_iter().enumerate() {
                bits[x + nx * y] = matches!(ch, '#' | '1' | 'X');
            }
        }
        BinaryImage {
            shape: Shape::d2(nx, ny),
            subdivision: 1,
            bits,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn subdivision(&self) -> usize {
        self.subdivision
    }

    pub fn with_subdivision(mut self, subdivision: usize) -> Self {
        self.subdivision = subdivision.max(1);
        self
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, c: [usize; 3]) -> bool {
        self.bits[self.shape.index(c)]
    }

    #[inline]
    pub fn set(&mut self, c: [usize; 3], v: bool) {
        let i = self.shape.index(c);
        self.bits[i] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_all(&self, v: bool) -> bool {
        self.bits.iter().all(|&b| b == v)
    }

    fn check_compatible(&self, other: &BinaryImage) -> Result<(), VoxelError> {
        if self.shape != other.shape {
            return Err(VoxelError::ShapeMismatch {
                a: self.shape,
                b: other.shape,
            });
        }
        if self.subdivision != other.subdivision {
            return Err(VoxelError::SubdivisionMismatch {
                a: self.subdivision,
                b: other.subdivision,
            });
        }
        Ok(())
    }

    fn zip_with(
        &self,
        other: &BinaryImage,
        f: impl Fn(bool, bool) -> bool,
    ) -> Result<BinaryImage, VoxelError> {
        self.check_compatible(other)?;
        Ok(BinaryImage {
            shape: self.shape,
            subdivision: self.subdivision,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn complement(&self) -> BinaryImage {
        BinaryImage {
            shape: self.shape,
            subdivision: self.subdivision,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    pub fn union(&self, other: &BinaryImage) -> Result<BinaryImage, VoxelError> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &BinaryImage) -> Result<BinaryImage, VoxelError> {
        self.zip_with(other, |a, b| a && b)
    }

    /// `(a ∩ b') ∪ (b ∩ a')`.
    pub fn symmetric_difference(&self, other: &BinaryImage) -> Result<BinaryImage, VoxelError> {
        let left = self.intersection(&other.complement())?;
        let right = other.intersection(&self.complement())?;
        left.union(&right)
    }

    /// Replicate every cell `factor^ndim` times.
    pub fn upsample(&self, factor: usize) -> BinaryImage {
        let factor = factor.max(1);
        if factor == 1 {
            return self.clone();
        }
        let shape = self.shape.scaled(factor);
        let mut bits = vec![false; shape.len()];
        for (lin, b) in bits.iter_mut().enumerate() {
            let c = shape.coords(lin);
            let src = [
                if self.shape.ndim() > 0 { c[0] / factor } else { 0 },
                if self.shape.ndim() > 1 { c[1] / factor } else { 0 },
                if self.shape.ndim() > 2 { c[2] / factor } else { 0 },
            ];
            *b = self.get(src);
        }
        BinaryImage {
            shape,
            subdivision: self.subdivision * factor,
            bits,
        }
    }

    /// Copy out the axis-aligned box `[lo, hi)`.
    pub fn crop(&self, lo: [usize; 3], hi: [usize; 3]) -> BinaryImage {
        let mut dims = [1usize; 3];
        for a in 0..3 {
            dims[a] = hi[a] - lo[a];
        }
        let shape = Shape::with_ndim(&dims[..self.shape.ndim()]).expect("non-empty crop");
        let mut bits = Vec::with_capacity(shape.len());
        for z in lo[2]..hi[2] {
            for y in lo[1]..hi[1] {
                for x in lo[0]..hi[0] {
                    bits.push(self.get([x, y, z]));
                }
            }
        }
        BinaryImage {
            shape,
            subdivision: self.subdivision,
            bits,
        }
    }
}

/// Connected regions of the filled cells of an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionLabeling {
    pub labels: Vec<u32>,
    pub region_count: usize,
    pub connectivity: Connectivity,
}

/// Label the connected components of the cells equal to `value`.
fn label_value(img: &BinaryImage, value: bool, conn: Connectivity) -> (Vec<u32>, usize) {
    let shape = img.shape;
    let offsets = shape.neighbour_offsets(conn);
    let mut labels = vec![0u32; shape.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..shape.len() {
        if img.bits[start] != value || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(cur) = queue.pop_front() {
            let c = shape.coords(cur);
            for o in &offsets {
                if let Some(n) = shape.offset(c, *o) {
                    let ni = shape.index(n);
                    if img.bits[ni] == value && labels[ni] == 0 {
                        labels[ni] = next;
                        queue.push_back(ni);
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

/// Label connected regions of filled cells; labels run 1..=region_count in
/// scan order, 0 marks empty cells.
pub fn label_components(img: &BinaryImage, conn: Connectivity) -> RegionLabeling {
    let (labels, region_count) = label_value(img, true, conn);
    RegionLabeling {
        labels,
        region_count,
        connectivity: conn,
    }
}

/// Per-region and total Euler characteristic of an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EulerSummary {
    pub per_region_chi: Vec<i64>,
    pub total_chi: i64,
    /// χ value → number of regions with that χ.
    pub chi_multiset: BTreeMap<i64, usize>,
}

impl EulerSummary {
    fn from_regions(per_region_chi: Vec<i64>) -> Self {
        let total_chi = per_region_chi.iter().sum();
        let mut chi_multiset = BTreeMap::new();
        for &c in &per_region_chi {
            *chi_multiset.entry(c).or_insert(0) += 1;
        }
        EulerSummary {
            per_region_chi,
            total_chi,
            chi_multiset,
        }
    }

    pub fn region_count(&self) -> usize {
        self.per_region_chi.len()
    }
}

/// Euler characteristic per region. In 2D each region gets `1 - holes`, with
/// holes being background components (dual connectivity) that do not touch
/// the image border. In 3D the alternating cell count of the cubical complex
/// matching the connectivity is used.
pub fn euler_characteristic(img: &BinaryImage, conn: Connectivity) -> EulerSummary {
    let labeling = label_components(img, conn);
    euler_from_labels(img, &labeling)
}

pub fn euler_from_labels(img: &BinaryImage, labeling: &RegionLabeling) -> EulerSummary {
    if img.shape.ndim() == 2 {
        EulerSummary::from_regions(hole_chi(img, labeling))
    } else {
        EulerSummary::from_regions(cubical_chi(img, labeling))
    }
}

fn hole_chi(img: &BinaryImage, labeling: &RegionLabeling) -> Vec<i64> {
    let shape = img.shape;
    let mut chi = vec![1i64; labeling.region_count];
    let dual = labeling.connectivity.dual();
    let (bg, bg_count) = label_value(img, false, dual);
    if bg_count == 0 {
        return chi;
    }
    let mut touches_border = vec![false; bg_count + 1];
    // The first cell of a bounded background component in scan order has a
    // filled left neighbour, and that neighbour lies on the enclosing region
    // rather than on an island inside the hole.
    let mut owner = vec![0u32; bg_count + 1];
    let mut seen = vec![false; bg_count + 1];
    for lin in 0..shape.len() {
        let l = bg[lin] as usize;
        if l == 0 {
            continue;
        }
        let c = shape.coords(lin);
        if shape.on_border(c) {
            touches_border[l] = true;
        }
        if !seen[l] {
            seen[l] = true;
            if c[0] > 0 {
                owner[l] = labeling.labels[lin - 1];
            }
        }
    }
    for l in 1..=bg_count {
        if !touches_border[l] && owner[l] != 0 {
            chi[owner[l] as usize - 1] -= 1;
        }
    }
    chi
}

/// Alternating count of the cells of the cubical complex spanned by each
/// region. Vertex connectivity uses the closed unit cubes; face
/// connectivity uses the dual complex whose vertices are voxel centres.
pub fn cubical_chi(img: &BinaryImage, labeling: &RegionLabeling) -> Vec<i64> {
    let shape = img.shape;
    let nd = shape.ndim();
    let dims = shape.dims();
    let mut chi = vec![0i64; labeling.region_count];
    match labeling.connectivity {
        Connectivity::Vertex => {
            // Doubled lattice: coordinate 2i+1 is voxel i, even coordinates
            // are its bounding vertices/faces.
            let mut ext = [1usize; 3];
            for a in 0..nd {
                ext[a] = 2 * dims[a] + 1;
            }
            for z in 0..ext[2] {
                for y in 0..ext[1] {
                    for x in 0..ext[0] {
                        let d = [x, y, z];
                        let mut dim = 0;
                        for a in 0..nd {
                            if d[a] % 2 == 1 {
                                dim += 1;
                            }
                        }
                        // Find an incident voxel.
                        let mut label = 0u32;
                        let mut choices = [[0usize; 2]; 3];
                        let mut counts = [1usize; 3];
                        for a in 0..3 {
                            if a >= nd {
                                choices[a] = [0, 0];
                                counts[a] = 1;
                            } else if d[a] % 2 == 1 {
                                choices[a] = [d[a] / 2, 0];
                                counts[a] = 1;
                            } else {
                                let v = d[a] / 2;
                                let mut k = 0;
                                if v > 0 {
                                    choices[a][k] = v - 1;
                                    k += 1;
                                }
                                if v < dims[a] {
                                    choices[a][k] = v;
                                    k += 1;
                                }
                                counts[a] = k;
                            }
                        }
                        'search: for iz in 0..counts[2] {
                            for iy in 0..counts[1] {
                                for ix in 0..counts[0] {
                                    let c = [choices[0][ix], choices[1][iy], choices[2][iz]];
                                    let l = labeling.labels[shape.index(c)];
                                    if l != 0 {
                                        label = l;
                                        break 'search;
                                    }
                                }
                            }
                        }
                        if label != 0 {
                            let sign = if dim % 2 == 0 { 1 } else { -1 };
                            chi[label as usize - 1] += sign;
                        }
                    }
                }
            }
        }
        Connectivity::Face => {
            for lin in 0..shape.len() {
                let l = labeling.labels[lin];
                if l == 0 {
                    continue;
                }
                let c = shape.coords(lin);
                for mask in 0..(1usize << nd) {
                    let mut ok = true;
                    'sub: for sub in 0..(1usize << nd) {
                        if sub & !mask != 0 {
                            continue;
                        }
                        let mut q = c;
                        for a in 0..nd {
                            if sub & (1 << a) != 0 {
                                q[a] += 1;
                                if q[a] >= dims[a] {
                                    ok = false;
                                    break 'sub;
                                }
                            }
                        }
                        if labeling.labels[shape.index(q)] == 0 {
                            ok = false;
                            break;
                        }
                    }
                    if ok {
                        let sign = if mask.count_ones() % 2 == 0 { 1 } else { -1 };
                        chi[l as usize - 1] += sign;
                    }
                }
            }
        }
    }
    chi
}
