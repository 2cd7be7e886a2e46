//! Filtering analysis of B-spline convolution in one dimension: the exact
//! kernel `K(x, y) = Σ N_i(x) N_i(y) / V_i`, its Gaussian approximation and
//! the smoothed profile of an isolated feature.

use alloc::vec::Vec;

use crate::bspline::BSpline1d;
use crate::levelset::{convolve, UniformField};
use crate::math;
use crate::voxel::{Shape, VoxelGrid};
use crate::UniformBSplineBasis;

const PI: f64 = core::f64::consts::PI;

/// Width of the Gaussian that approximates the convolution kernel:
/// `σ = h √((p + 1) / 6)`.
pub fn gaussian_kernel_width(h: f64, p: usize) -> f64 {
    h * math::sqrt((p as f64 + 1.0) / 6.0)
}

/// Normalised Gaussian `κ(x) = exp(−x² / 2σ²) / (σ √(2π))`.
pub fn gaussian(x: f64, sigma: f64) -> f64 {
    math::exp(-x * x / (2.0 * sigma * sigma)) / (sigma * math::sqrt(2.0 * PI))
}

/// Fourier transform of the Gaussian kernel, `exp(−2π² ξ² σ²)`.
pub fn frequency_response(xi: f64, sigma: f64) -> f64 {
    math::exp(-2.0 * PI * PI * xi * xi * sigma * sigma)
}

/// m-term partial sum of the smoothed unit feature of width `ℓ̂` in
/// mesh-scaled coordinates (`x̂ = x / h`, `ℓ̂ = ℓ / h`).
pub fn smoothed_feature(x_hat: f64, l_hat: f64, p: usize, m: usize) -> f64 {
    let m = m.max(1);
    let s2 = (p as f64 + 1.0) / 6.0;
    let mut sum = 0.0;
    for n in 1..=m {
        let mu = (2 * n - 1) as f64 * l_hat / (4 * m) as f64;
        sum += math::exp(-(x_hat - mu) * (x_hat - mu) / (2.0 * s2));
        sum += math::exp(-(x_hat + mu) * (x_hat + mu) / (2.0 * s2));
    }
    l_hat / (math::sqrt(s2) * math::sqrt(2.0 * PI)) * sum / (2 * m) as f64
}

/// Peak of the one-term profile, `√(3ℓ̂² / (π(p+1))) exp(−3ℓ̂² / (16(p+1)))`.
pub fn peak_one_term(l_hat: f64, p: usize) -> f64 {
    let q = p as f64 + 1.0;
    math::sqrt(3.0 * l_hat * l_hat / (PI * q)) * math::exp(-3.0 * l_hat * l_hat / (16.0 * q))
}

/// The linear estimate `ℓ̂ √(3 / (π(p+1)))` obtained by dropping the
/// exponential factor of [`peak_one_term`].
pub fn peak_linear_estimate(l_hat: f64, p: usize) -> f64 {
    l_hat * math::sqrt(3.0 / (PI * (p as f64 + 1.0)))
}

/// `K(x, y)` for a univariate basis.
pub fn exact_kernel(basis: &BSpline1d, x: f64, y: f64) -> f64 {
    let cx = basis.cell_of(x);
    let cy = basis.cell_of(y);
    let lx = basis.local(cx, x, 0);
    let ly = basis.local(cy, y, 0);
    let mut k = 0.0;
    for j in 0..=basis.degree() {
        let i = cx + j;
        if i >= cy && i <= cy + basis.degree() {
            k += lx.ders[0][j] * ly.ders[0][i - cy] / basis.integral(i);
        }
    }
    k
}

/// Basis of degree `p` and mesh size `h` on `[-half_width, half_width]`.
pub fn centered_basis(p: usize, h: f64, half_width: f64) -> BSpline1d {
    let n = math::round(2.0 * half_width / h) as usize;
    BSpline1d::new(p, n.max(1), -half_width, 2.0 * half_width).expect("valid analysis basis")
}

/// Samples `(x, K(x, 0), κ(x))` on `n + 1` points across the basis domain.
pub fn kernel_profile(basis: &BSpline1d, n: usize) -> Vec<(f64, f64, f64)> {
    let sigma = gaussian_kernel_width(basis.mesh_size(), basis.degree());
    (0..=n)
        .map(|k| {
            let x = basis.breakpoint(0) + basis.length() * k as f64 / n as f64;
            (x, exact_kernel(basis, x, 0.0), gaussian(x, sigma))
        })
        .collect()
}

/// Sup-norm distance between `K(·, y)` and `κ(· − y)` on `[-5, 5]`, also
/// maximised over centres `y` spread across one cell: the spline kernel is
/// not shift-invariant, and a single centre can rank degrees wrongly.
pub fn kernel_vs_gaussian_error(p: usize, h: f64) -> f64 {
    let basis = centered_basis(p, h, 5.0);
    let sigma = gaussian_kernel_width(h, p);
    let mut worst = 0.0f64;
    for k in 0..16 {
        let y = h * k as f64 / 16.0;
        for q in 0..=4000 {
            let x = -5.0 + 10.0 * q as f64 / 4000.0;
            worst = worst.max((exact_kernel(&basis, x, y) - gaussian(x - y, sigma)).abs());
        }
    }
    worst
}

/// Gaussian width fitted to `K(·, 0)` by least squares of `ln K` against
/// `x²` over `|x| ≤ 2σ`, with `σ` the predicted width.
pub fn fit_kernel_width(p: usize, h: f64) -> f64 {
    let basis = centered_basis(p, h, 5.0);
    let sigma = gaussian_kernel_width(h, p);
    let n = 400;
    let (mut su, mut sv, mut suu, mut suv, mut cnt) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for k in 0..=n {
        let x = -2.0 * sigma + 4.0 * sigma * k as f64 / n as f64;
        let kv = exact_kernel(&basis, x, 0.0);
        if kv <= 0.0 {
            continue;
        }
        let u = x * x;
        let v = math::ln(kv);
        su += u;
        sv += v;
        suu += u * u;
        suv += u * v;
        cnt += 1.0;
    }
    let slope = (cnt * suv - su * sv) / (cnt * suu - su * su);
    math::sqrt(-1.0 / (2.0 * slope))
}

/// Level-set value at the centre of a unit feature `width` voxels wide,
/// smoothed with degree-`p` splines on the voxel mesh (`h = Δ = 1`).
/// The feature is aligned with the voxel (and hence knot) grid.
pub fn convolved_feature_peak(p: usize, width: usize) -> f64 {
    let pad = 24;
    let n = 2 * pad + width;
    let values: Vec<f64> = (0..n)
        .map(|i| if i >= pad && i < pad + width { 1.0 } else { 0.0 })
        .collect();
    let origin = -(n as f64) / 2.0;
    let grid = VoxelGrid::with_origin(Shape::with_ndim(&[n]).expect("1D shape"), &[1.0], &[origin], values)
        .expect("valid 1D grid");
    let basis = UniformBSplineBasis::new(1, p, &[n], &[origin], &[n as f64]).expect("valid basis");
    let coeffs = convolve(&grid, &basis).expect("matching domain");
    UniformField { basis, coeffs }.eval(&[0.0, 0.0, 0.0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_law_values() {
        assert!((gaussian_kernel_width(1.0, 2) - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((gaussian_kernel_width(0.5, 2) - 0.5 * gaussian_kernel_width(1.0, 2)).abs() < 1e-15);
        assert!((gaussian_kernel_width(1.0, 5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn frequency_response_values() {
        assert_eq!(frequency_response(0.0, 0.7), 1.0);
        let s = 1.0 / (PI * math::sqrt(2.0));
        assert!((frequency_response(1.0, s) - math::exp(-1.0)).abs() < 1e-15);
        let mut prev = 1.0;
        for k in 1..50 {
            let v = frequency_response(k as f64 * 0.05, 0.6);
            assert!(v < prev);
            prev = v;
        }
        // Attenuation grows with mesh size and with degree.
        let xi = 0.4;
        assert!(frequency_response(xi, gaussian_kernel_width(1.0, 2)) < frequency_response(xi, gaussian_kernel_width(0.5, 2)));
        assert!(frequency_response(xi, gaussian_kernel_width(1.0, 3)) < frequency_response(xi, gaussian_kernel_width(1.0, 2)));
    }

    #[test]
    fn peak_values() {
        assert!((peak_one_term(1.0, 2) - 0.5299).abs() < 2e-4);
        assert!((peak_linear_estimate(1.0, 2) - 0.5642).abs() < 5e-5);
        assert!((peak_linear_estimate(1.0, 3) - 0.4886).abs() < 5e-5);
        assert!((smoothed_feature(0.0, 1.0, 2, 1) - peak_one_term(1.0, 2)).abs() < 1e-15);
        for p in 2..=4 {
            for &l in &[0.5, 1.0, 2.0] {
                assert!((smoothed_feature(0.0, l, p, 1) - peak_one_term(l, p)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn partial_sums_are_symmetric_and_converge() {
        for k in 0..30 {
            let x = 0.1 * k as f64;
            assert!((smoothed_feature(x, 2.0, 2, 3) - smoothed_feature(-x, 2.0, 2, 3)).abs() < 1e-15);
        }
        // The series itself converges: m = 64 and m = 128 agree closely.
        let gap = |m1: usize, m2: usize| {
            (0..=60)
                .map(|k| {
                    let x = -3.0 + 0.1 * k as f64;
                    (smoothed_feature(x, 2.0, 2, m1) - smoothed_feature(x, 2.0, 2, m2)).abs()
                })
                .fold(0.0, f64::max)
        };
        assert!(gap(64, 128) < 1e-4);
        // The one-term truncation is a few percent off at ℓ̂ = 2.
        let g1 = gap(1, 64);
        assert!(g1 > 1e-3 && g1 < 0.04, "one-term gap {g1}");
    }

    #[test]
    fn kernel_integrates_to_one_and_error_ordering() {
        let b = centered_basis(2, 1.0, 5.0);
        let (gx, gw) = crate::quadrature::gauss_legendre(4);
        for &y in &[0.0, 0.3, -2.7] {
            let mut s = 0.0;
            for c in 0..b.n_cells() {
                let (lo, hi) = (b.breakpoint(c), b.breakpoint(c + 1));
                for (t, w) in gx.iter().zip(&gw) {
                    s += w * (hi - lo) * exact_kernel(&b, lo + t * (hi - lo), y);
                }
            }
            assert!((s - 1.0).abs() < 1e-13);
        }
        let e: Vec<f64> = (2..=4).map(|p| kernel_vs_gaussian_error(p, 1.0)).collect();
        assert!(e[0] > e[1] && e[1] > e[2], "{e:?}");
        // The error is in kernel units, which scale as 1 / h.
        for p in 2..=4 {
            let ratio = kernel_vs_gaussian_error(p, 0.5) / kernel_vs_gaussian_error(p, 1.0);
            assert!((ratio - 2.0).abs() < 0.05, "p={p} ratio {ratio}");
        }
    }

    #[test]
    fn error_profile_rescales_with_mesh() {
        // K_h(x, 0) = K_1(x / h, 0) / h for dyadic h.
        let b1 = centered_basis(3, 1.0, 5.0);
        let bh = centered_basis(3, 0.5, 5.0);
        for k in 0..=40 {
            let x = -2.0 + 0.1 * k as f64;
            let a = exact_kernel(&bh, x, 0.0);
            let b = exact_kernel(&b1, 2.0 * x, 0.0) * 2.0;
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn width_fit_close_to_law() {
        for p in 2..=4 {
            for &h in &[1.0, 0.5] {
                let fit = fit_kernel_width(p, h);
                let law = gaussian_kernel_width(h, p);
                let tol = if p == 2 { 0.10 } else { 0.05 };
                assert!((fit - law).abs() / law < tol, "p={p} h={h}: {fit} vs {law}");
            }
        }
    }

    #[test]
    fn convolved_peak_against_one_term_law() {
        // The analytic peak rests on the Gaussian kernel approximation, so
        // it tracks the spline convolution only to a few percent.
        for p in 2..=4 {
            for w in 1..=2 {
                let numeric = convolved_feature_peak(p, w);
                let law = peak_one_term(w as f64, p);
                assert!((numeric - law).abs() / law < 0.06, "p={p} l={w}: {numeric} vs {law}");
            }
        }
    }

    #[test]
    fn one_voxel_feature_threshold() {
        assert!(convolved_feature_peak(2, 1) > 0.5);
        assert!(convolved_feature_peak(3, 1) < 0.5);
        assert!(convolved_feature_peak(4, 1) < 0.5);
    }
}
