use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Two-sided confidence level of every interval reported.
pub const CONFIDENCE: f64 = 0.90;

/// A symmetric t-interval around a sample mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn half_width(&self) -> f64 {
        (self.high - self.low) / 2.0
    }

    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// `mean ± t · s / √n` at `level`; `None` below two samples.
pub fn t_interval(xs: &[f64], level: f64) -> Option<Interval> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("n ≥ 2")
        .inverse_cdf(0.5 + level / 2.0);
    let m = mean(xs);
    let h = t * std_dev(xs) / n.sqrt();
    Some(Interval {
        low: m - h,
        high: m + h,
    })
}

/// Interval on the mean of `a[i] − b[i]`, for runs paired by seed.
pub fn paired_interval(a: &[f64], b: &[f64], level: f64) -> Option<Interval> {
    assert_eq!(a.len(), b.len(), "paired samples differ in length");
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    t_interval(&diff, level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matches_a_table_value() {
        // t_{0.95, 4} = 2.131847
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ci = t_interval(&xs, 0.90).unwrap();
        let h = 2.131_846_786 * std_dev(&xs) / 5f64.sqrt();
        assert!((ci.half_width() - h).abs() < 1e-6);
        assert!((ci.low + ci.high - 6.0).abs() < 1e-12);
    }

    #[test]
    fn one_sample_has_no_interval() {
        assert!(t_interval(&[3.0], 0.9).is_none());
    }

    proptest! {
        #[test]
        fn interval_brackets_the_mean(xs in prop::collection::vec(-1e3f64..1e3, 2..20)) {
            let ci = t_interval(&xs, CONFIDENCE).unwrap();
            prop_assert!(ci.contains(mean(&xs)));
            let wider = t_interval(&xs, 0.99).unwrap();
            prop_assert!(wider.half_width() >= ci.half_width());
        }
    }
}
