//! Modified Bessel function of the second kind for real order.
//!
//! Temme's method: the order is split as `nu = mu + l` with `|mu| ≤ 1/2`,
//! `K_mu` and `K_{mu+1}` are obtained from a power series (`x < 2`) or
//! Steed's continued fraction (`x ≥ 2`), then recurred upward in order.

use std::f64::consts::PI;

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;
const SERIES_LIMIT: f64 = 2.0;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `1/Γ(1+x)` and `1/Γ(1−x)` plus the two combinations Temme's series needs,
/// for `|x| ≤ 1/2`.
struct TemmeGammas {
    gam1: f64,
    gam2: f64,
    gampl: f64,
    gammi: f64,
}

fn temme_gammas(x: f64) -> TemmeGammas {
    let gampl = 1.0 / statrs::function::gamma::gamma(1.0 + x);
    let gammi = 1.0 / statrs::function::gamma::gamma(1.0 - x);
    let gam2 = 0.5 * (gammi + gampl);
    let gam1 = if x.abs() < 1e-3 {
        // (1/Γ(1−x) − 1/Γ(1+x)) / 2x from the Taylor series of 1/Γ(1+x)
        let x2 = x * x;
        -(EULER_GAMMA - 0.042_002_635_034_095_2 * x2 - 0.042_197_734_555_544_3 * x2 * x2)
    } else {
        (gammi - gampl) / (2.0 * x)
    };
    TemmeGammas {
        gam1,
        gam2,
        gampl,
        gammi,
    }
}

/// `e^x K_nu(x)` for `nu ≥ 0`, `x > 0`.
pub fn bessel_k_scaled(nu: f64, x: f64) -> f64 {
    assert!(x > 0.0 && x.is_finite(), "bessel_k requires finite x > 0");
    let nu = nu.abs();
    let nl = (nu + 0.5).floor() as usize;
    let xmu = nu - nl as f64;
    let xmu2 = xmu * xmu;
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;

    let (mut rkmu, mut rk1) = if x < SERIES_LIMIT {
        let x2 = 0.5 * x;
        let pimu = PI * xmu;
        let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = xmu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let g = temme_gammas(xmu);
        let mut ff = fact * (g.gam1 * e.cosh() + g.gam2 * fact2 * d);
        let mut sum = ff;
        let e = e.exp();
        let mut p = 0.5 * e / g.gampl;
        let mut q = 0.5 / (e * g.gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..=MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - xmu2);
            c *= dd / fi;
            p /= fi - xmu;
            q /= fi + xmu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        let scale = x.exp();
        (sum * scale, sum1 * xi2 * scale)
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - xmu2;
        let mut c = a1;
        let mut q = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..=MAX_ITER {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh *= b * d - 1.0;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        h *= a1;
        let rkmu = (PI / (2.0 * x)).sqrt() / s;
        let rk1 = rkmu * (xmu + x + 0.5 - h) * xi;
        (rkmu, rk1)
    };

    for i in 1..=nl {
        let next = (xmu + i as f64) * xi2 * rk1 + rkmu;
        rkmu = rk1;
        rk1 = next;
    }
    rkmu
}

/// Modified Bessel function of the second kind, `K_nu(x)`.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    bessel_k_scaled(nu, x) * (-x).exp()
}

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}
