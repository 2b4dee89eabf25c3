//! Fresnel integrals by composite Gauss-Legendre quadrature, and the
//! Fresnel-approximation correlation between two range samples.
//!
//! Between two points on the same ray whose inverse ranges differ by a fixed
//! step, the quadratic phase across the aperture integrates to
//!
//! ```text
//! g(x) = |C(x) + j S(x)| / x,   C(x) = int_0^x cos(pi t^2 / 2) dt, S likewise with sin.
//! ```

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Lower end of the bracket searched by [`beta_from_correlation`].
pub const BETA_MIN: f64 = 1e-6;
/// Upper end of the bracket searched by [`beta_from_correlation`].
pub const BETA_MAX: f64 = 20.0;
/// Required accuracy of |g(beta) - rho|.
pub const ROOT_TOLERANCE: f64 = 1e-6;

// 8-point Gauss-Legendre on [-1, 1]
const GL_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// (C(x), S(x)). Odd in x.
pub fn fresnel_cs(x: f64) -> (f64, f64) {
    if x < 0.0 {
        let (c, s) = fresnel_cs(-x);
        return (-c, -s);
    }
    if x == 0.0 {
        return (0.0, 0.0);
    }
    // keep the phase advance per panel near one radian: d/dt (pi t^2/2) = pi t
    let panels = (PI * x * x).ceil() as usize + 4;
    let h = x / panels as f64;
    let (mut c, mut s) = (0.0, 0.0);
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        for (node, weight) in GL_NODES.iter().zip(GL_WEIGHTS) {
            for t in [mid - half * node, mid + half * node] {
                let arg = 0.5 * PI * t * t;
                c += weight * arg.cos();
                s += weight * arg.sin();
            }
        }
    }
    (c * 0.5 * h, s * 0.5 * h)
}

/// Fresnel-approximation correlation g(x) = |C(x) + j S(x)| / x, with g(0) = 1.
pub fn fresnel_correlation(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    let (c, s) = fresnel_cs(x);
    c.hypot(s) / x.abs()
}

/// Smallest beta in [`BETA_MIN`, `BETA_MAX`] with g(beta) = rho.
///
/// g is not monotone once its tail starts to ripple, so the bracket is found
/// by scanning upward for the first sign change and then bisected.
pub fn beta_from_correlation(rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::NoRoot { rho });
    }
    let f = |b: f64| fresnel_correlation(b) - rho;
    let step = 0.01;
    let mut lo = BETA_MIN;
    if f(lo) <= 0.0 {
        return Err(Error::NoRoot { rho });
    }
    let mut hi = None;
    let mut b = lo;
    while b < BETA_MAX {
        let next = (b + step).min(BETA_MAX);
        if f(next) <= 0.0 {
            lo = b;
            hi = Some(next);
            break;
        }
        b = next;
    }
    let mut hi = hi.ok_or(Error::NoRoot { rho })?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    let root = 0.5 * (lo + hi);
    if f(root).abs() < ROOT_TOLERANCE {
        Ok(root)
    } else {
        Err(Error::NoRoot { rho })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Maclaurin series; cancellation keeps it near 1e-13 for |x| <= 2.
    fn series(x: f64) -> (f64, f64) {
        let (mut c, mut s) = (0.0, 0.0);
        let a = PI / 2.0;
        let mut fact = 1.0; // m!
        for m in 0..80usize {
            if m > 0 {
                fact *= m as f64;
            }
            let term = a.powi(m as i32) * x.powi(2 * m as i32 + 1) / (fact * (2 * m + 1) as f64);
            match m % 4 {
                0 => c += term,
                1 => s += term,
                2 => c -= term,
                _ => s -= term,
            }
        }
        (c, s)
    }

    #[test]
    fn quadrature_matches_series() {
        for i in 1..=40 {
            let x = i as f64 * 0.05;
            let (c, s) = fresnel_cs(x);
            let (cs, ss) = series(x);
            assert!((c - cs).abs() < 1e-12, "C({x})");
            assert!((s - ss).abs() < 1e-12, "S({x})");
        }
    }

    #[test]
    fn tabulated_values() {
        let (c, s) = fresnel_cs(1.0);
        assert!((c - 0.779_893_400_376_823).abs() < 1e-12);
        assert!((s - 0.438_259_147_390_355).abs() < 1e-12);
        let (c, s) = fresnel_cs(20.0);
        // both tend to 1/2 with 1/(pi x) ripple
        assert!((c - 0.5).abs() < 0.02 && (s - 0.5).abs() < 0.02);
    }

    #[test]
    fn correlation_at_one() {
        assert!((fresnel_correlation(1.0) - 0.894_597_561_042_195).abs() < 1e-9);
    }

    #[test]
    fn correlation_tends_to_one() {
        assert!((fresnel_correlation(1e-6) - 1.0).abs() < 1e-12);
        assert!(fresnel_correlation(0.05) > fresnel_correlation(0.1));
    }

    #[test]
    fn root_for_point_seven() {
        // bisection against the independent series oracle
        let b = beta_from_correlation(0.7).unwrap();
        assert!((b - 1.32).abs() < 0.05);
        let (c, s) = series(b);
        assert!((c.hypot(s) / b - 0.7).abs() < 1e-6);
    }

    #[test]
    fn root_approaches_zero_near_one() {
        let roots: Vec<f64> = [0.99, 0.9999, 0.999_999]
            .iter()
            .map(|&r| beta_from_correlation(r).unwrap())
            .collect();
        assert!(roots[0] > roots[1] && roots[1] > roots[2]);
        assert!(roots[2] < 0.1);
    }

    #[test]
    fn out_of_range_has_no_root() {
        assert!(matches!(beta_from_correlation(1.0), Err(Error::NoRoot { .. })));
        assert!(matches!(beta_from_correlation(0.0), Err(Error::NoRoot { .. })));
        // g(20) ~ 0.035 and the tail never drops below ~0.03 on the bracket
        assert!(matches!(beta_from_correlation(0.001), Err(Error::NoRoot { .. })));
    }
}
