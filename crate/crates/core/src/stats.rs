//! Distribution tails and small helpers shared by the tests and fits.

use libm::erfc;
use statrs::function::gamma::gamma_ur;

/// Upper tail P(X > x) of a chi-square variable with `df` degrees of freedom.
pub fn chi_square_sf(x: f64, df: usize) -> f64 {
    if df == 0 {
        return if x > 0.0 { 0.0 } else { 1.0 };
    }
    if !(x > 0.0) {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    gamma_ur(df as f64 / 2.0, x / 2.0).clamp(0.0, 1.0)
}

/// Upper tail of the standard normal distribution.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Two-sided normal p-value for a Wald statistic.
pub fn two_sided_normal_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// log of the standard normal upper tail, accurate far into the tail.
pub fn log_normal_sf(z: f64) -> f64 {
    if z < 30.0 {
        normal_sf(z).ln()
    } else {
        // asymptotic Mills-ratio expansion
        let z2 = z * z;
        -0.5 * z2 - z.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

/// Inverse Mills ratio phi(z) / (1 - Phi(z)).
pub fn inverse_mills(z: f64) -> f64 {
    if z < 30.0 {
        let sf = normal_sf(z);
        if sf > 0.0 {
            return normal_pdf(z) / sf;
        }
    }
    let z2 = z * z;
    z + 1.0 / z - 2.0 / (z * z2) + 10.0 / (z * z2 * z2)
}

/// Sample mean and (n - 1) standard deviation. The deviation is `None` for a
/// single observation.
pub fn mean_sd(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, Some((ss / (n - 1) as f64).sqrt()))
}
