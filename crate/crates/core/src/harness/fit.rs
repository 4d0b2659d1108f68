//! Log-log rate fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// `(eps, metric)` pairs.
    pub pairs: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least squares line through `(log eps, log metric)`.
pub fn fit_rate(pairs: &[(f64, f64)]) -> Result<RateFit> {
    if pairs.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least two pairs, got {}", pairs.len())));
    }
    if let Some(&(e, m)) = pairs.iter().find(|(e, m)| !(*e > 0.0 && *m > 0.0 && e.is_finite() && m.is_finite())) {
        return Err(Error::Domain(format!("log-log fit needs positive finite values, got ({e}, {m})")));
    }
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("all eps values coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - ym).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(RateFit { pairs: pairs.to_vec(), slope, intercept, r2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_power_laws() {
        assert!((fit_rate(&[(1.0, 1.0), (0.5, 0.25)]).unwrap().slope - 2.0).abs() < 1e-12);
        assert!(fit_rate(&[(1.0, 3.0), (0.5, 3.0)]).unwrap().slope.abs() < 1e-12);
    }

    #[test]
    fn noisy_power_law() {
        let eps = [0.4f64, 0.2, 0.1, 0.05];
        let noise = [1.01, 0.99, 1.01, 0.99];
        let pairs: Vec<_> = eps.iter().zip(noise).map(|(&e, z)| (e, e.powf(0.57) * z)).collect();
        assert!((fit_rate(&pairs).unwrap().slope - 0.57).abs() < 0.03);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_rate(&[(1.0, 1.0)]).is_err());
        assert!(matches!(fit_rate(&[(1.0, 1.0), (0.5, 0.0)]), Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn recovers_synthetic_slopes(c in 1e-3f64..1e3, k in -3.0f64..3.0) {
            let pairs: Vec<_> = [0.4, 0.2, 0.1, 0.05].iter().map(|&e: &f64| (e, c * e.powf(k))).collect();
            let f = fit_rate(&pairs).unwrap();
            prop_assert!((f.slope - k).abs() < 1e-12);
            prop_assert!((f.intercept - c.ln()).abs() < 1e-11);
        }
    }
}
