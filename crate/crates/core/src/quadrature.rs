//! Gauss rules on lines, boxes, triangles and tetrahedra.
//!
//! Orders are polynomial degrees of exactness. Box rules are tensor Gauss–
//! Legendre; simplex rules are collapsed (Duffy) tensor rules.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Gauss–Legendre nodes and weights on `[0, 1]` with `n` points.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let n = n.max(1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-type initial guess then Newton on P_n.
        let mut z = math::cos(core::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5));
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        // Map from [-1, 1] to [0, 1].
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = 0.5 * wi;
        w[n - 1 - i] = 0.5 * wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.5;
    }
    (x, w)
}

/// Number of Gauss points exact for polynomials of degree `order`.
#[inline]
pub fn points_for_order(order: usize) -> usize {
    order / 2 + 1
}

/// A point set with weights. Points carry three coordinates; unused ones
/// are zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuadRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(&[f64; 3]) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(p))
            .sum()
    }

    pub fn push(&mut self, p: [f64; 3], w: f64) {
        self.points.push(p);
        self.weights.push(w);
    }

    pub fn extend(&mut self, other: &QuadRule) {
        self.points.extend_from_slice(&other.points);
        self.weights.extend_from_slice(&other.weights);
    }
}

/// Tensor Gauss rule on the box `[lo, hi]` in `ndim` dimensions.
pub fn box_rule(ndim: usize, lo: [f64; 3], hi: [f64; 3], order: usize) -> QuadRule {
    let (x, w) = gauss_legendre(points_for_order(order));
    let n = x.len();
    let counts = [
        n,
        if ndim > 1 { n } else { 1 },
        if ndim > 2 { n } else { 1 },
    ];
    let mut scale = 1.0;
    for a in 0..ndim {
        scale *= hi[a] - lo[a];
    }
    let mut rule = QuadRule::default();
    for k in 0..counts[2] {
        for j in 0..counts[1] {
            for i in 0..counts[0] {
                let idx = [i, j, k];
                let mut p = [0.0; 3];
                let mut wt = scale;
                for a in 0..ndim {
                    p[a] = lo[a] + (hi[a] - lo[a]) * x[idx[a]];
                    wt *= w[idx[a]];
                }
                rule.push(p, wt);
            }
        }
    }
    rule
}

/// Rule on the segment `a → b` (any embedding dimension); weights sum to
/// the segment length.
pub fn segment_rule(a: [f64; 3], b: [f64; 3], order: usize) -> QuadRule {
    let (x, w) = gauss_legendre(points_for_order(order));
    let len = norm(sub(b, a));
    let mut rule = QuadRule::default();
    for (t, wt) in x.iter().zip(&w) {
        rule.push(lerp(a, b, *t), wt * len);
    }
    rule
}

/// Rule on the triangle `(a, b, c)`; weights sum to the signed area for
/// planar 2D input and to the unsigned area otherwise when `signed` is false.
pub fn triangle_rule(a: [f64; 3], b: [f64; 3], c: [f64; 3], order: usize, signed: bool) -> QuadRule {
    let area = if signed {
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    } else {
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    };
    let mut rule = QuadRule::default();
    if order == 0 {
        let p = [
            (a[0] + b[0] + c[0]) / 3.0,
            (a[1] + b[1] + c[1]) / 3.0,
            (a[2] + b[2] + c[2]) / 3.0,
        ];
        rule.push(p, area);
        return rule;
    }
    let (xs, ws) = gauss_legendre(points_for_order(order + 1));
    let (xt, wt) = gauss_legendre(points_for_order(order));
    for (s, w1) in xs.iter().zip(&ws) {
        for (t, w2) in xt.iter().zip(&wt) {
            // (s, t) ∈ [0,1]² ↦ barycentric (s, (1 − s) t).
            let l1 = *s;
            let l2 = (1.0 - s) * t;
            let l0 = 1.0 - l1 - l2;
            let mut p = [0.0; 3];
            for d in 0..3 {
                p[d] = l0 * a[d] + l1 * b[d] + l2 * c[d];
            }
            rule.push(p, 2.0 * area * w1 * w2 * (1.0 - s));
        }
    }
    rule
}

/// Rule on the tetrahedron `(a, b, c, d)`; weights sum to the signed volume.
pub fn tet_rule(a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3], order: usize) -> QuadRule {
    let vol = tet_volume(a, b, c, d);
    let mut rule = QuadRule::default();
    if order == 0 {
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = 0.25 * (a[k] + b[k] + c[k] + d[k]);
        }
        rule.push(p, vol);
        return rule;
    }
    let (x1, w1) = gauss_legendre(points_for_order(order + 2));
    let (x2, w2) = gauss_legendre(points_for_order(order + 1));
    let (x3, w3) = gauss_legendre(points_for_order(order));
    for (r, wr) in x1.iter().zip(&w1) {
        for (s, ws) in x2.iter().zip(&w2) {
            for (t, wt) in x3.iter().zip(&w3) {
                let l1 = *r;
                let l2 = (1.0 - r) * s;
                let l3 = (1.0 - r) * (1.0 - s) * t;
                let l0 = 1.0 - l1 - l2 - l3;
                let mut p = [0.0; 3];
                for k in 0..3 {
                    p[k] = l0 * a[k] + l1 * b[k] + l2 * c[k] + l3 * d[k];
                }
                let jac = (1.0 - r) * (1.0 - r) * (1.0 - s);
                rule.push(p, 6.0 * vol * wr * ws * wt * jac);
            }
        }
    }
    rule
}

#[inline]
pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn norm(a: [f64; 3]) -> f64 {
    math::sqrt(dot(a, a))
}

#[inline]
pub(crate) fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + t * (b[0] - a[0]),
        a[1] + t * (b[1] - a[1]),
        a[2] + t * (b[2] - a[2]),
    ]
}

pub(crate) fn tet_volume(a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3]) -> f64 {
    dot(sub(b, a), cross(sub(c, a), sub(d, a))) / 6.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monomial_1d(k: i32) -> f64 {
        1.0 / (k as f64 + 1.0)
    }

    #[test]
    fn gauss_legendre_exactness() {
        for n in 1..=12 {
            let (x, w) = gauss_legendre(n);
            for k in 0..(2 * n) as i32 {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * math::powi(*x, k)).sum();
                assert!((q - monomial_1d(k)).abs() < 1e-14, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn box_rule_exact_for_order() {
        for order in 0..=7 {
            let r = box_rule(2, [0.0, -1.0, 0.0], [2.0, 1.0, 0.0], order);
            let px = order as i32;
            let exact = (math::powi(2.0, px + 1)) / (px as f64 + 1.0) * 2.0;
            let q = r.integrate(|p| math::powi(p[0], px));
            assert!((q - exact).abs() < 1e-13 * exact.abs().max(1.0));
        }
        let r3 = box_rule(3, [0.0; 3], [1.0; 3], 4);
        let q = r3.integrate(|p| p[0] * p[0] * p[1] * p[2] * p[2]);
        assert!((q - 1.0 / 18.0).abs() < 1e-14);
    }

    #[test]
    fn triangle_rule_exactness() {
        let a = [0.0, 0.0, 0.0];
        let b = [1.0, 0.0, 0.0];
        let c = [0.0, 1.0, 0.0];
        // ∫ x^i y^j over the unit triangle = i! j! / (i + j + 2)!
        let fact = |n: usize| (1..=n).map(|k| k as f64).product::<f64>();
        for order in 1..=6 {
            let r = triangle_rule(a, b, c, order, true);
            for i in 0..=order {
                for j in 0..=(order - i) {
                    let exact = fact(i) * fact(j) / fact(i + j + 2);
                    let q = r.integrate(|p| math::powi(p[0], i as i32) * math::powi(p[1], j as i32));
                    assert!((q - exact).abs() < 1e-14, "order {order} ({i},{j})");
                }
            }
        }
        let r0 = triangle_rule(a, b, c, 0, true);
        assert!((r0.integrate(|p| 3.0 * p[0] + p[1]) - (4.0 / 6.0)).abs() < 1e-15);
        // Clockwise input gives negative signed area.
        assert!((triangle_rule(a, c, b, 2, true).measure() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn tet_rule_exactness() {
        let o = [0.0; 3];
        let e = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let fact = |n: usize| (1..=n).map(|k| k as f64).product::<f64>();
        for order in 0..=4 {
            let r = tet_rule(o, e[0], e[1], e[2], order);
            for i in 0..=order {
                for j in 0..=(order - i) {
                    for k in 0..=(order - i - j) {
                        if order == 0 && i + j + k > 1 {
                            continue;
                        }
                        let exact = fact(i) * fact(j) * fact(k) / fact(i + j + k + 3);
                        let q = r.integrate(|p| {
                            math::powi(p[0], i as i32) * math::powi(p[1], j as i32) * math::powi(p[2], k as i32)
                        });
                        assert!((q - exact).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn segment_rule_length() {
        let r = segment_rule([0.0, 0.0, 0.0], [3.0, 4.0, 0.0], 3);
        assert!((r.measure() - 5.0).abs() < 1e-14);
        let q = r.integrate(|p| p[0] * p[0]);
        assert!((q - 5.0 * 3.0).abs() < 1e-12);
    }
}
