//! Bessel functions of the first kind, their positive zeros, and the
//! one-dimensional quadrature rules used throughout the crate.

use std::f64::consts::PI;

/// `J_0(x), ..., J_nmax(x)` by Miller's backward recurrence, normalized with
/// `J_0 + 2 * sum_k J_{2k} = 1`.
///
/// The recurrence is started far enough above `max(nmax, |x|)` that the
/// minimal solution dominates to double precision; intermediate values are
/// rescaled to stay finite.
pub fn bessel_j_range(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let ax = x.abs();
    let top = (nmax as f64).max(ax);
    let mut start = (top + 40.0 + (60.0 * top.max(1.0)).sqrt()).ceil() as usize;
    if start % 2 == 1 {
        start += 1;
    }
    let two_over_x = 2.0 / ax;
    let mut above = 0.0;
    let mut cur = 1.0;
    let mut sum = 0.0;
    for k in (1..=start).rev() {
        if k <= nmax {
            out[k] = cur;
        }
        if k % 2 == 0 {
            sum += 2.0 * cur;
        }
        let below = k as f64 * two_over_x * cur - above;
        above = cur;
        cur = below;
        if cur.abs() > 1e250 {
            cur *= 1e-250;
            above *= 1e-250;
            sum *= 1e-250;
            for v in out.iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    out[0] = cur;
    sum += cur;
    let inv = 1.0 / sum;
    for (k, v) in out.iter_mut().enumerate() {
        *v *= inv;
        if x < 0.0 && k % 2 == 1 {
            *v = -*v;
        }
    }
    out
}

/// `J_m(x)` for integer order (negative orders via `J_{-m} = (-1)^m J_m`).
pub fn bessel_j(m: i64, x: f64) -> f64 {
    let n = m.unsigned_abs() as usize;
    let v = bessel_j_range(n, x)[n];
    if m < 0 && n % 2 == 1 {
        -v
    } else {
        v
    }
}

/// `(J_{m-1}(x), J_m(x), J_{m+1}(x))` from a single recurrence pass.
pub fn bessel_j_triplet(m: u32, x: f64) -> (f64, f64, f64) {
    let m = m as usize;
    let v = bessel_j_range(m + 1, x);
    let below = if m == 0 { -v[1] } else { v[m - 1] };
    (below, v[m], v[m + 1])
}

/// `J_m'(x) = (J_{m-1}(x) - J_{m+1}(x)) / 2`.
pub fn bessel_j_deriv(m: u32, x: f64) -> f64 {
    let (a, _, c) = bessel_j_triplet(m, x);
    0.5 * (a - c)
}

/// The `k`-th positive zero of `J_m` (k starts at 1).
///
/// Zeros are bracketed by a sign scan starting below the first zero (which
/// always exceeds `m`) and refined by bisection to full precision.
pub fn bessel_zero(m: u32, k: u32) -> f64 {
    assert!(k >= 1, "zero index starts at 1");
    let f = |x: f64| bessel_j(m as i64, x);
    let step = 0.2;
    let mut a = if m == 0 { 1.0 } else { m as f64 };
    let mut fa = f(a);
    let mut seen = 0;
    loop {
        let b = a + step;
        let fb = f(b);
        if fa == 0.0 {
            seen += 1;
            if seen == k {
                return a;
            }
        } else if fa * fb < 0.0 {
            seen += 1;
            if seen == k {
                return bisect(f, a, b, fa);
            }
        }
        a = b;
        fa = fb;
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, mut flo: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_deriv(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_deriv(n, z);
        dp = if d != 0.0 { d } else { dp };
        x[i] = z;
        x[n - 1 - i] = -z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre_with_deriv(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Composite Gauss-Legendre rule on `[a, b]` with panels no wider than
/// `panel` and `per_panel` nodes each.
pub fn composite_gauss(a: f64, b: f64, panel: f64, per_panel: usize) -> (Vec<f64>, Vec<f64>) {
    let panels = (((b - a) / panel).ceil() as usize).max(1);
    let width = (b - a) / panels as f64;
    let (gx, gw) = gauss_legendre(per_panel);
    let mut x = Vec::with_capacity(panels * per_panel);
    let mut w = Vec::with_capacity(panels * per_panel);
    for p in 0..panels {
        let lo = a + p as f64 * width;
        for (&t, &wt) in gx.iter().zip(&gw) {
            x.push(lo + 0.5 * width * (t + 1.0));
            w.push(0.5 * width * wt);
        }
    }
    (x, w)
}

/// Clenshaw-Curtis weights for the Chebyshev points `cos(j pi / n)`,
/// `j = 0..=n`, on `[-1, 1]`.
pub fn clenshaw_curtis(n: usize) -> Vec<f64> {
    assert!(n >= 1);
    let mut w = vec![0.0; n + 1];
    let nf = n as f64;
    let theta: Vec<f64> = (0..=n).map(|j| PI * j as f64 / nf).collect();
    let interior = 1..n;
    let mut v = vec![1.0; n - 1];
    if n % 2 == 0 {
        w[0] = 1.0 / (nf * nf - 1.0);
        w[n] = w[0];
        for k in 1..n / 2 {
            for (vi, j) in v.iter_mut().zip(interior.clone()) {
                *vi -= 2.0 * (2.0 * k as f64 * theta[j]).cos() / (4.0 * (k * k) as f64 - 1.0);
            }
        }
        for (vi, j) in v.iter_mut().zip(interior.clone()) {
            *vi -= (nf * theta[j]).cos() / (nf * nf - 1.0);
        }
    } else {
        w[0] = 1.0 / (nf * nf);
        w[n] = w[0];
        for k in 1..=(n - 1) / 2 {
            for (vi, j) in v.iter_mut().zip(interior.clone()) {
                *vi -= 2.0 * (2.0 * k as f64 * theta[j]).cos() / (4.0 * (k * k) as f64 - 1.0);
            }
        }
    }
    for (vi, j) in v.iter().zip(interior) {
        w[j] = 2.0 * vi / nf;
    }
    w
}
