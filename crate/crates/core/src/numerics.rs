//! Quadrature, stencils, interpolation and distance helpers on sampled data.

use num_complex::Complex64;

/// Finite-difference weights for derivatives `0..=m` at `z` from the nodes `x` (Fornberg).
pub fn fornberg_weights(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

fn stencil_start(i: usize, n: usize, width: usize) -> usize {
    if n <= width {
        0
    } else {
        i.saturating_sub(width / 2).min(n - width)
    }
}

/// `order`-th derivative of sampled data by 5-point stencils (centered in the interior,
/// one-sided at the ends). Works on nonuniform grids.
pub fn stencil_derivative(times: &[f64], values: &[f64], order: usize) -> Vec<f64> {
    let n = times.len();
    (0..n)
        .map(|i| {
            let s = stencil_start(i, n, 5);
            let e = (s + 5).min(n);
            let w = fornberg_weights(times[i], &times[s..e], order);
            w[order].iter().zip(&values[s..e]).map(|(a, b)| a * b).sum()
        })
        .collect()
}

/// Same as [`stencil_derivative`] for complex samples.
pub fn stencil_derivative_complex(times: &[f64], values: &[Complex64], order: usize) -> Vec<Complex64> {
    let re: Vec<f64> = values.iter().map(|v| v.re).collect();
    let im: Vec<f64> = values.iter().map(|v| v.im).collect();
    let dr = stencil_derivative(times, &re, order);
    let di = stencil_derivative(times, &im, order);
    dr.into_iter().zip(di).map(|(a, b)| Complex64::new(a, b)).collect()
}

/// Cumulative integral from `times[0]` using the derivative-corrected trapezoid rule
/// `h/2 (f_a + f_b) + h²/12 (f'_a − f'_b)`, exact for cubics.
pub fn cumulative_hermite(times: &[f64], f: &[f64], df: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..times.len() {
        let h = times[i] - times[i - 1];
        acc += 0.5 * h * (f[i - 1] + f[i]) + h * h / 12.0 * (df[i - 1] - df[i]);
        out.push(acc);
    }
    out
}

pub fn cumulative_hermite_complex(times: &[f64], f: &[Complex64], df: &[Complex64]) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(times.len());
    let mut acc = Complex64::new(0.0, 0.0);
    out.push(acc);
    for i in 1..times.len() {
        let h = times[i] - times[i - 1];
        acc += (f[i - 1] + f[i]) * (0.5 * h) + (df[i - 1] - df[i]) * (h * h / 12.0);
        out.push(acc);
    }
    out
}

const GL3_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GL3_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Gauss–Legendre 5-point nodes and weights on [-1, 1].
pub const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
pub const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

fn lagrange_eval(x: &[f64], y: &[f64], t: f64) -> f64 {
    let mut sum = 0.0;
    for i in 0..x.len() {
        let mut l = 1.0;
        for j in 0..x.len() {
            if i != j {
                l *= (t - x[j]) / (x[i] - x[j]);
            }
        }
        sum += l * y[i];
    }
    sum
}

/// Cumulative integral from `times[0]` when derivatives are not available: each interval
/// integrates the local cubic through the four nearest samples.
pub fn cumulative_integral(times: &[f64], f: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut out = Vec::with_capacity(n);
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..n {
        let (a, b) = (times[i - 1], times[i]);
        let s = if n < 4 { 0 } else { (i as isize - 2).clamp(0, n as isize - 4) as usize };
        let e = (s + 4).min(n);
        let (xs, ys) = (&times[s..e], &f[s..e]);
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        let piece: f64 = GL3_NODES
            .iter()
            .zip(GL3_WEIGHTS)
            .map(|(x, w)| w * lagrange_eval(xs, ys, mid + half * x))
            .sum();
        acc += half * piece;
        out.push(acc);
    }
    out
}

/// Cubic Hermite interpolation on `[a, b]`.
pub fn hermite(a: f64, b: f64, ya: f64, yb: f64, da: f64, db: f64, t: f64) -> f64 {
    let h = b - a;
    let s = (t - a) / h;
    let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
    let h10 = s * (1.0 - s) * (1.0 - s);
    let h01 = s * s * (3.0 - 2.0 * s);
    let h11 = s * s * (s - 1.0);
    h00 * ya + h10 * h * da + h01 * yb + h11 * h * db
}

/// Index `i` such that `t` lies between `times[i]` and `times[i+1]` (either grid direction).
pub fn bracket(times: &[f64], t: f64) -> usize {
    let n = times.len();
    let forward = times[n - 1] > times[0];
    let idx = if forward {
        times.partition_point(|&s| s <= t)
    } else {
        times.partition_point(|&s| s >= t)
    };
    idx.saturating_sub(1).min(n - 2)
}

/// Value at `t` of a cumulative integral `big_f` whose derivative samples are `f`.
pub fn interpolate_with_derivative(times: &[f64], big_f: &[f64], f: &[f64], t: f64) -> f64 {
    let i = bracket(times, t);
    hermite(times[i], times[i + 1], big_f[i], big_f[i + 1], f[i], f[i + 1], t)
}

/// Local cubic interpolation through the four samples nearest `t`.
pub fn interpolate(times: &[f64], values: &[f64], t: f64) -> f64 {
    let n = times.len();
    let i = bracket(times, t);
    let s = if n < 4 { 0 } else { (i as isize - 1).clamp(0, n as isize - 4) as usize };
    let e = (s + 4).min(n);
    lagrange_eval(&times[s..e], &values[s..e], t)
}

pub fn interpolate_complex(times: &[f64], values: &[Complex64], t: f64) -> Complex64 {
    let n = times.len();
    let i = bracket(times, t);
    let s = if n < 4 { 0 } else { (i as isize - 1).clamp(0, n as isize - 4) as usize };
    let e = (s + 4).min(n);
    let re: Vec<f64> = values[s..e].iter().map(|v| v.re).collect();
    let im: Vec<f64> = values[s..e].iter().map(|v| v.im).collect();
    Complex64::new(lagrange_eval(&times[s..e], &re, t), lagrange_eval(&times[s..e], &im, t))
}

/// Chordal distance on the Riemann sphere; finite even when either value is a pole.
pub fn chordal(a: Complex64, b: Complex64) -> f64 {
    match (a.is_finite(), b.is_finite()) {
        (true, true) => (a - b).norm() / ((1.0 + a.norm_sqr()).sqrt() * (1.0 + b.norm_sqr()).sqrt()),
        (false, false) => 0.0,
        (true, false) => 1.0 / (1.0 + a.norm_sqr()).sqrt(),
        (false, true) => 1.0 / (1.0 + b.norm_sqr()).sqrt(),
    }
}

pub fn chordal_real(a: f64, b: f64) -> f64 {
    chordal(Complex64::new(a, 0.0), Complex64::new(b, 0.0))
}

/// Root of `f` on `[a, b]` by bisection, assuming a sign change.
pub fn bisect(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Eigenvalues of a real 2×2 matrix.
pub fn eig2(m: &[[f64; 2]; 2]) -> [Complex64; 2] {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = 0.25 * tr * tr - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        let big = 0.5 * tr + s.copysign(tr);
        let small = if big == 0.0 { 0.5 * tr - s } else { det / big };
        [Complex64::new(big, 0.0), Complex64::new(small, 0.0)]
    } else {
        let s = (-disc).sqrt();
        [Complex64::new(0.5 * tr, s), Complex64::new(0.5 * tr, -s)]
    }
}

/// Eigenvector of `m` for eigenvalue `mu`, taken from whichever row gives the better
/// conditioned null vector.
pub fn eigvec2(m: &[[f64; 2]; 2], mu: Complex64) -> (Complex64, Complex64) {
    let (a, b, c, d) = (m[0][0], m[0][1], m[1][0], m[1][1]);
    let v1 = (Complex64::new(b, 0.0), mu - a);
    let v2 = (mu - d, Complex64::new(c, 0.0));
    let n1 = v1.0.norm_sqr() + v1.1.norm_sqr();
    let n2 = v2.0.norm_sqr() + v2.1.norm_sqr();
    if n1 >= n2 {
        if n1 == 0.0 {
            return (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
        }
        v1
    } else {
        v2
    }
}

#[cfg(test)]
mod tests {
    #[test]
    fn eig2_real_and_complex() {
        let m = [[2.0, 1.0], [1.0, 2.0]];
        let e = super::eig2(&m);
        assert!((e[0].re - 3.0).abs() < 1e-14 && (e[1].re - 1.0).abs() < 1e-14);
        let (u, v) = super::eigvec2(&m, e[0]);
        assert!(((v / u).re - 1.0).abs() < 1e-14);
        let r = [[0.0, -1.0], [1.0, 0.0]];
        let e = super::eig2(&r);
        assert!((e[0].im - 1.0).abs() < 1e-14 && e[0].re.abs() < 1e-14);
    }

    use super::*;

    #[test]
    fn stencil_is_exact_for_quartics() {
        let t: Vec<f64> = (0..12).map(|i| 0.3 * i as f64 + 0.01 * (i * i) as f64).collect();
        let y: Vec<f64> = t.iter().map(|x| x.powi(4) - 2.0 * x).collect();
        let d1 = stencil_derivative(&t, &y, 1);
        let d2 = stencil_derivative(&t, &y, 2);
        for (i, x) in t.iter().enumerate() {
            assert!((d1[i] - (4.0 * x.powi(3) - 2.0)).abs() < 1e-9 * (1.0 + x.powi(3)));
            assert!((d2[i] - 12.0 * x * x).abs() < 1e-8 * (1.0 + x * x));
        }
    }

    #[test]
    fn hermite_quadrature_is_exact_for_cubics() {
        let t: Vec<f64> = vec![0.0, 0.4, 1.1, 2.0];
        let f: Vec<f64> = t.iter().map(|x| x * x * x).collect();
        let df: Vec<f64> = t.iter().map(|x| 3.0 * x * x).collect();
        let c = cumulative_hermite(&t, &f, &df);
        assert!((c[3] - 4.0).abs() < 1e-13);
        let c2 = cumulative_integral(&t, &f);
        assert!((c2[3] - 4.0).abs() < 1e-13);
    }

    #[test]
    fn interpolation_and_bracketing() {
        let t = [3.0, 2.0, 1.0, 0.0];
        assert_eq!(bracket(&t, 2.5), 0);
        assert_eq!(bracket(&t, 0.5), 2);
        let y: Vec<f64> = t.iter().map(|x| x * x).collect();
        assert!((interpolate(&t, &y, 1.5) - 2.25).abs() < 1e-14);
    }

    #[test]
    fn chordal_handles_poles() {
        let inf = Complex64::new(f64::INFINITY, 0.0);
        assert_eq!(chordal(inf, inf), 0.0);
        assert!(chordal_real(1e12, -1e12) < 1e-11);
        assert!((chordal_real(0.0, 1.0) - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn bisection_finds_root() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14);
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
    }
}
