//! Small descriptive statistics shared by several modules.

use crate::{Error, Result};

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Median with the mean-of-middle-pair rule for even lengths. `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    })
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Pearson correlation coefficient.
///
/// Fails with [`Error::Undefined`] when either side has zero variance or the
/// inputs are shorter than two values.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Config(format!(
            "pearson inputs differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Undefined("pearson needs at least two points".into()));
    }
    let ma = mean(a);
    let mb = mean(b);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Undefined("pearson on zero-variance input".into()));
    }
    Ok((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_rules() {
        assert_eq!(median(&[40.0, 50.0, 90.0]), Some(50.0));
        assert_eq!(median(&[40.0, 60.0]), Some(50.0));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn pearson_definitional() {
        // cov = 3, var = 2 and 42/9 (sums of squares)
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - 3.0 / (2.0f64 * 42.0 / 9.0).sqrt()).abs() < 1e-12);
        assert!((r - 0.9820).abs() < 1e-4);
    }

    #[test]
    fn pearson_zero_variance() {
        assert!(matches!(
            pearson(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::Undefined(_))
        ));
    }
}
