//! Forecast accuracy metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A metric value plus the number of rows dropped because their truth is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub used: usize,
    pub excluded: usize,
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, got: b });
    }
    Ok(())
}

/// Cost-weighted mean absolute percentage error,
/// `Σ w_i |ŷ_i − y_i| / y_i / Σ w_i`, over rows with `y_i > 0`.
pub fn weighted_mape(pred: &[f64], truth: &[f64], weight: &[f64]) -> Result<Metric> {
    check_lengths(truth.len(), pred.len())?;
    check_lengths(truth.len(), weight.len())?;
    let (mut num, mut den, mut used, mut excluded) = (0.0, 0.0, 0usize, 0usize);
    for ((p, y), w) in pred.iter().zip(truth).zip(weight) {
        if !p.is_finite() || !y.is_finite() || !w.is_finite() || *w < 0.0 {
            return Err(Error::Numeric("non-finite or negative metric input".into()));
        }
        if *y <= 0.0 {
            excluded += 1;
            continue;
        }
        num += w * (p - y).abs() / y;
        den += w;
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedMetric("every row has zero truth".into()));
    }
    if den <= 0.0 {
        return Err(Error::UndefinedMetric("weights sum to zero".into()));
    }
    Ok(Metric { value: num / den, used, excluded })
}

/// Share of rows with relative error strictly below `p`, over rows with `y > 0`.
pub fn ratio_p(pred: &[f64], truth: &[f64], p: f64) -> Result<Metric> {
    check_lengths(truth.len(), pred.len())?;
    let (mut hit, mut used, mut excluded) = (0usize, 0usize, 0usize);
    for (yh, y) in pred.iter().zip(truth) {
        if !yh.is_finite() || !y.is_finite() {
            return Err(Error::Numeric("non-finite metric input".into()));
        }
        if *y <= 0.0 {
            excluded += 1;
            continue;
        }
        used += 1;
        if (yh - y).abs() / y < p {
            hit += 1;
        }
    }
    if used == 0 {
        return Err(Error::UndefinedMetric("every row has zero truth".into()));
    }
    Ok(Metric { value: hit as f64 / used as f64, used, excluded })
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a.len(), b.len())?;
    if a.len() < 2 {
        return Err(Error::UndefinedMetric("pearson needs at least two rows".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedMetric("constant column".into()));
    }
    Ok(sab / (saa.sqrt() * sbb.sqrt()))
}

/// Pairwise Pearson correlations between columns.
pub fn pearson_matrix(columns: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let k = columns.len();
    let mut m = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let r = pearson(&columns[i], &columns[j])?;
            m[i][j] = r;
            m[j][i] = r;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_values() {
        let m = weighted_mape(&[110.0, 45.0], &[100.0, 50.0], &[1.0, 3.0]).unwrap();
        assert!((m.value - 0.1).abs() < 1e-12);
        let r = ratio_p(&[104.0, 106.0, 95.0], &[100.0, 100.0, 100.0], 0.05).unwrap();
        assert!((r.value - 1.0 / 3.0).abs() < 1e-12);
        let r = pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 7.0]).unwrap();
        assert!((r - 0.99340).abs() < 1e-5);
    }

    #[test]
    fn worked_examples() {
        // apes 0.5 and 0.1 with costs 1 and 3
        let m = weighted_mape(&[1.5, 1.1], &[1.0, 1.0], &[1.0, 3.0]).unwrap();
        assert!((m.value - 0.2).abs() < 1e-12);
        // apes 0.4, 0.6, 0.5 at p = 0.5: only the first is strictly below
        let r = ratio_p(&[1.4, 1.6, 1.5], &[1.0, 1.0, 1.0], 0.5).unwrap();
        assert!((r.value - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(ratio_p(&[1.0, 2.0], &[1.0, 2.0], 0.0).unwrap().value, 0.0);
        assert_eq!(ratio_p(&[1.0, 2.0], &[1.0, 2.0], 0.5).unwrap().value, 1.0);
        assert_eq!(weighted_mape(&[1.0, 2.0], &[1.0, 2.0], &[3.0, 4.0]).unwrap().value, 0.0);
        let y = [1.0, 4.0, 2.0, 8.0];
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((pearson(&y, &y).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&y, &neg).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_costs_give_plain_mean_ape() {
        let p = [1.2, 0.7, 3.0];
        let t = [1.0, 1.0, 2.0];
        let m = weighted_mape(&p, &t, &[2.5; 3]).unwrap();
        assert!((m.value - (0.2 + 0.3 + 0.5) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_truth_rows_are_excluded_and_counted() {
        let m = weighted_mape(&[1.0, 5.0, 2.0], &[0.0, 5.0, 1.0], &[9.0, 1.0, 1.0]).unwrap();
        assert_eq!(m.excluded, 1);
        assert_eq!(m.used, 2);
        assert!((m.value - 0.5).abs() < 1e-12);
        assert!(matches!(weighted_mape(&[1.0], &[0.0], &[1.0]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(ratio_p(&[1.0], &[0.0], 0.05), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn ratio_boundary_is_strict() {
        let r = ratio_p(&[105.0, 95.0], &[100.0, 100.0], 0.0500001).unwrap();
        assert_eq!(r.value, 1.0);
        let r = ratio_p(&[1.5, 0.5], &[1.0, 1.0], 0.5).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn errors_on_bad_input() {
        assert!(weighted_mape(&[1.0], &[1.0, 2.0], &[1.0]).is_err());
        assert!(weighted_mape(&[f64::NAN], &[1.0], &[1.0]).is_err());
        assert!(weighted_mape(&[1.0], &[1.0], &[0.0]).is_err());
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pearson_matrix_is_symmetric_with_unit_diagonal() {
        let cols = vec![vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 7.0], vec![3.0, 1.0, 2.0]];
        let m = pearson_matrix(&cols).unwrap();
        for i in 0..3 {
            assert_eq!(m[i][i], 1.0);
            for j in 0..3 {
                assert_eq!(m[i][j], m[j][i]);
            }
        }
    }

    fn rows() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
        prop::collection::vec((0.0f64..100.0, 0.01f64..100.0, 0.0f64..10.0), 1..40)
            .prop_filter("positive weight", |v| v.iter().any(|r| r.2 > 1e-3))
    }

    proptest! {
        #[test]
        fn mape_invariant_to_cost_scaling(rs in rows(), scale in 0.01f64..100.0) {
            let (p, t, w): (Vec<_>, Vec<_>, Vec<_>) = rs.into_iter().fold(
                (vec![], vec![], vec![]),
                |mut acc, (a, b, c)| { acc.0.push(a); acc.1.push(b); acc.2.push(c); acc },
            );
            let ws: Vec<f64> = w.iter().map(|x| x * scale).collect();
            let a = weighted_mape(&p, &t, &w).unwrap().value;
            let b = weighted_mape(&p, &t, &ws).unwrap().value;
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn ratio_monotone_in_threshold(rs in rows(), p1 in 0.0f64..1.0, dp in 0.0f64..1.0) {
            let p: Vec<f64> = rs.iter().map(|r| r.0).collect();
            let t: Vec<f64> = rs.iter().map(|r| r.1).collect();
            let a = ratio_p(&p, &t, p1).unwrap().value;
            let b = ratio_p(&p, &t, p1 + dp).unwrap().value;
            prop_assert!(a <= b);
        }

        #[test]
        fn pearson_invariant_under_positive_affine_maps(
            xs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..30),
            a in 0.1f64..10.0, b in -10.0f64..10.0,
        ) {
            let u: Vec<f64> = xs.iter().map(|x| x.0).collect();
            let v: Vec<f64> = xs.iter().map(|x| x.1).collect();
            if let Ok(r) = pearson(&u, &v) {
                let w: Vec<f64> = u.iter().map(|x| a * x + b).collect();
                let r2 = pearson(&w, &v).unwrap();
                prop_assert!((r - r2).abs() < 1e-9);
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            }
        }
    }
}
