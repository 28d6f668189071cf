//! Adaptive Gauss-Kronrod (7/15) quadrature and the entropy of a 1-D
//! Gaussian mixture built on it.

#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, (kron - gauss).abs() * h)
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol` by recursive bisection.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> Result<f64> {
        let (v, err) = gk15(f, a, b);
        if !v.is_finite() {
            return Err(Error::numerical(format!("non-finite integrand on [{a}, {b}]")));
        }
        if err <= tol || (b - a) < 1e-14 * (1.0 + a.abs()) {
            return Ok(v);
        }
        if depth >= 60 {
            return Err(Error::numerical(format!("quadrature did not converge on [{a}, {b}] (error {err:.2e})")));
        }
        let m = 0.5 * (a + b);
        Ok(rec(f, a, m, tol * 0.5, depth + 1)? + rec(f, m, b, tol * 0.5, depth + 1)?)
    }
    if a == b {
        return Ok(0.0);
    }
    rec(&f, a, b, tol, 0)
}

const LN_2PI: f64 = 1.8378770664093453;

/// Log density of an equal-weight Gaussian mixture.
fn mixture_log_density(y: f64, means: &[f64], sds: &[f64]) -> f64 {
    let mut mx = f64::NEG_INFINITY;
    let terms: Vec<f64> = means
        .iter()
        .zip(sds)
        .map(|(m, s)| {
            let z = (y - m) / s;
            let t = -0.5 * z * z - s.ln() - 0.5 * LN_2PI;
            mx = mx.max(t);
            t
        })
        .collect();
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln() - (means.len() as f64).ln()
}

/// Differential entropy (nats) of the equal-weight mixture of `N(means[i], vars[i])`.
///
/// The real line is split at several standard deviations around each
/// component so narrow components are never stepped over.
pub fn mixture_entropy_1d(means: &[f64], vars: &[f64], tol: f64) -> Result<f64> {
    if means.is_empty() || means.len() != vars.len() {
        return Err(Error::invalid("mixture needs matching, non-empty means and variances"));
    }
    if vars.iter().any(|v| !(v.is_finite() && *v > 0.0)) || means.iter().any(|m| !m.is_finite()) {
        return Err(Error::invalid("mixture components need finite means and positive variances"));
    }
    let sds: Vec<f64> = vars.iter().map(|v| v.sqrt()).collect();
    let mut cuts = Vec::with_capacity(means.len() * 13);
    for (m, s) in means.iter().zip(&sds) {
        for k in [-14.0, -8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0, 14.0] {
            cuts.push(m + k * s);
        }
    }
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    let integrand = |y: f64| {
        let lp = mixture_log_density(y, means, &sds);
        if lp == f64::NEG_INFINITY {
            0.0
        } else {
            -lp.exp() * lp
        }
    };
    let per = tol / cuts.len() as f64;
    let mut h = 0.0;
    for w in cuts.windows(2) {
        h += integrate(integrand, w[0], w[1], per)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn integrates_polynomials_and_exp() {
        assert_abs_diff_eq!(integrate(|x| x * x, 0.0, 3.0, 1e-12).unwrap(), 9.0, epsilon = 1e-12);
        assert_abs_diff_eq!(integrate(f64::exp, 0.0, 1.0, 1e-12).unwrap(), std::f64::consts::E - 1.0, epsilon = 1e-12);
    }

    #[test]
    fn single_component_entropy_is_closed_form() {
        let h = mixture_entropy_1d(&[0.3], &[2.5], 1e-9).unwrap();
        assert_abs_diff_eq!(h, 0.5 * (LN_2PI + 1.0 + 2.5f64.ln()), epsilon = 1e-8);
    }

    #[test]
    fn narrow_components_are_resolved() {
        // two far-apart narrow components: entropy = ln 2 + single entropy
        let v = 1e-8;
        let h = mixture_entropy_1d(&[-3.0, 3.0], &[v, v], 1e-9).unwrap();
        assert_abs_diff_eq!(h, 2f64.ln() + 0.5 * (LN_2PI + 1.0 + v.ln()), epsilon = 1e-7);
    }

    #[test]
    fn rejects_bad_components() {
        assert!(mixture_entropy_1d(&[], &[], 1e-6).is_err());
        assert!(mixture_entropy_1d(&[0.0], &[0.0], 1e-6).is_err());
    }
}
