//! Gauss rules on [0, 1] and on the reference triangle.

use std::f64::consts::PI;

/// Gauss–Legendre rule with `n` points mapped to [0, 1].
pub fn gauss_legendre_01(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Newton iteration from the Chebyshev-like initial guess.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { p0 } else { p1 };
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p, d)
}

/// A point of a triangle rule: barycentric-free reference coordinates
/// (xi, eta) on {xi, eta >= 0, xi + eta <= 1} and a weight summing to 1/2.
#[derive(Debug, Clone, Copy)]
pub struct TriPoint {
    pub xi: f64,
    pub eta: f64,
    pub w: f64,
}

/// Seven-point rule exact for polynomials of degree 5.
pub fn triangle_deg5() -> Vec<TriPoint> {
    let a1 = 0.059_715_871_789_769_82;
    let b1 = 0.470_142_064_105_115_1;
    let a2 = 0.797_426_985_353_087_3;
    let b2 = 0.101_286_507_323_456_3;
    let w0 = 0.225;
    let w1 = 0.132_394_152_788_506_2;
    let w2 = 0.125_939_180_544_827_1;
    let mut pts = vec![TriPoint {
        xi: 1.0 / 3.0,
        eta: 1.0 / 3.0,
        w: w0,
    }];
    for (a, b, w) in [(a1, b1, w1), (a2, b2, w2)] {
        pts.push(TriPoint { xi: a, eta: b, w });
        pts.push(TriPoint { xi: b, eta: a, w });
        pts.push(TriPoint { xi: b, eta: b, w });
    }
    for p in &mut pts {
        p.w *= 0.5;
    }
    pts
}

/// Three-point rule exact for degree 2.
pub fn triangle_deg2() -> Vec<TriPoint> {
    let w = 1.0 / 6.0;
    vec![
        TriPoint {
            xi: 1.0 / 6.0,
            eta: 1.0 / 6.0,
            w,
        },
        TriPoint {
            xi: 2.0 / 3.0,
            eta: 1.0 / 6.0,
            w,
        },
        TriPoint {
            xi: 1.0 / 6.0,
            eta: 2.0 / 3.0,
            w,
        },
    ]
}

/// Collapsed (Duffy) tensor Gauss rule with `n * n` points, exact for
/// polynomials of degree `2n - 2` on the reference triangle.
pub fn triangle_collapsed(n: usize) -> Vec<TriPoint> {
    let g = gauss_legendre_01(n);
    let mut pts = Vec::with_capacity(n * n);
    for &(u, wu) in &g {
        for &(v, wv) in &g {
            pts.push(TriPoint {
                xi: u * (1.0 - v),
                eta: u * v,
                w: wu * wv * u,
            });
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate_monomial(rule: &[TriPoint], a: i32, b: i32) -> f64 {
        rule.iter().map(|p| p.w * p.xi.powi(a) * p.eta.powi(b)).sum()
    }

    // a! b! / (a + b + 2)!
    fn exact_monomial(a: i32, b: i32) -> f64 {
        let f = |n: i32| (1..=n).map(|k| k as f64).product::<f64>();
        f(a) * f(b) / f(a + b + 2)
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..12 {
            let g = gauss_legendre_01(n);
            let wsum: f64 = g.iter().map(|p| p.1).sum();
            assert!((wsum - 1.0).abs() < 1e-14);
            for k in 0..(2 * n) as i32 {
                let q: f64 = g.iter().map(|&(x, w)| w * x.powi(k)).sum();
                assert!((q - 1.0 / (k as f64 + 1.0)).abs() < 1e-13, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn triangle_rules_hit_their_degree() {
        for (rule, deg) in [(triangle_deg2(), 2), (triangle_deg5(), 5), (triangle_collapsed(4), 6)] {
            for a in 0..=deg {
                for b in 0..=(deg - a) {
                    let q = integrate_monomial(&rule, a, b);
                    assert!((q - exact_monomial(a, b)).abs() < 1e-14, "deg {deg}: x^{a} y^{b}");
                }
            }
        }
    }
}
