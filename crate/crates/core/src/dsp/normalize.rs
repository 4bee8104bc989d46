use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Channels whose standard deviation falls below this are only mean-centered
/// (and therefore become all zeros).
pub const CMVN_STD_FLOOR: f64 = 1e-8;

/// Elementwise `ln(10 * s + epsilon)`.
pub fn log_compress(s: &Mat, epsilon: f64) -> Result<Mat> {
    if let Some(bad) = s.as_slice().iter().find(|&&x| !(x >= 0.0)) {
        return Err(Error::invalid(format!("log compression needs nonnegative input, found {bad}")));
    }
    let data = s.as_slice().iter().map(|&x| (10.0 * x + epsilon).ln()).collect();
    Ok(Mat::from_vec(s.rows(), s.cols(), data))
}

/// Per-channel mean and variance normalization with population statistics.
pub fn cmvn(features: &Mat) -> Mat {
    let (n, c) = features.shape();
    let mut out = features.clone();
    if n == 0 {
        return out;
    }
    for ch in 0..c {
        let mean = (0..n).map(|t| features[(t, ch)]).sum::<f64>() / n as f64;
        let var = (0..n).map(|t| (features[(t, ch)] - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        for t in 0..n {
            let centered = features[(t, ch)] - mean;
            out[(t, ch)] = if std < CMVN_STD_FLOOR { 0.0 } else { centered / std };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn log_compress_reference_points() {
        let s = Mat::from_vec(1, 3, vec![0.0, 0.1, 1.0]);
        let out = log_compress(&s, 1e-6).unwrap();
        assert!((out[(0, 0)] - (-13.815510557964274)).abs() < 1e-12);
        assert!((out[(0, 1)] - 9.999995e-7).abs() < 1e-12);
        assert!((out[(0, 2)] - 2.302585192994040).abs() < 1e-12);
    }

    #[test]
    fn log_compress_rejects_negative_or_nan() {
        assert!(log_compress(&Mat::from_vec(1, 2, vec![0.5, -1e-9]), 1e-6).is_err());
        assert!(log_compress(&Mat::from_vec(1, 1, vec![f64::NAN]), 1e-6).is_err());
    }

    #[test]
    fn cmvn_reference_cases() {
        let m = Mat::from_vec(2, 2, vec![1.0, 5.0, 3.0, 5.0]);
        let out = cmvn(&m);
        assert_eq!(out.as_slice(), &[-1.0, 0.0, 1.0, 0.0]);
    }

    fn column_stats(m: &Mat, ch: usize) -> (f64, f64) {
        let n = m.rows() as f64;
        let mean = (0..m.rows()).map(|t| m[(t, ch)]).sum::<f64>() / n;
        let var = (0..m.rows()).map(|t| (m[(t, ch)] - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    proptest! {
        #[test]
        fn log_compress_is_monotone(a in 0.0f64..1e4, b in 0.0f64..1e4) {
            let out = log_compress(&Mat::from_vec(1, 2, vec![a, b]), 1e-6).unwrap();
            if a < b {
                prop_assert!(out[(0, 0)] <= out[(0, 1)]);
            }
        }

        #[test]
        fn cmvn_normalizes_and_is_idempotent(
            rows in 2usize..40,
            vals in proptest::collection::vec(-100.0f64..100.0, 2 * 40 * 3),
        ) {
            let m = Mat::from_fn(rows, 3, |t, c| vals[t * 3 + c] * (c + 1) as f64);
            let once = cmvn(&m);
            let twice = cmvn(&once);
            for ch in 0..3 {
                let (_, raw_std) = column_stats(&m, ch);
                let (mean, std) = column_stats(&once, ch);
                prop_assert!(mean.abs() < 1e-6);
                if raw_std >= CMVN_STD_FLOOR {
                    prop_assert!((std - 1.0).abs() < 1e-4);
                }
            }
            prop_assert!(once.max_abs_diff(&twice) < 1e-6);
        }
    }
}
