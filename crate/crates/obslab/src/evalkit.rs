//! Observer performance metrics: empirical ROC curves, Mann-Whitney AUC,
//! the test-statistic signal-to-noise ratio, detection efficiency, and
//! posterior-probability mean-squared error.
//!
//! The empirical ROC sweeps thresholds over every distinct score, counting a
//! fraction `>= threshold` under each hypothesis; the Mann-Whitney AUC counts
//! score pairs with ties worth 1/2 and equals the trapezoidal area under that
//! curve exactly, which the test suite pins to 1e-12.

use std::io::{self, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("score set must contain at least {needed} scores per class, got {got}")]
    TooFewScores { needed: usize, got: usize },
    #[error("zero pooled variance: the test statistic SNR is undefined")]
    ZeroVariance,
    #[error("AUC {value} outside (0.5, 1): detectability is undefined")]
    AucOutOfRange { value: f64 },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("posterior probability {value} at index {index} outside [0, 1]")]
    PosteriorOutOfRange { index: usize, value: f64 },
}

/// Observer scores under both hypotheses: `h0` signal-absent, `h1`
/// signal-present. All scores must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub h0: Vec<f64>,
    pub h1: Vec<f64>,
}

impl ScoreSet {
    pub fn new(h0: Vec<f64>, h1: Vec<f64>) -> Self {
        assert!(!h0.is_empty() && !h1.is_empty(), "score sets must be non-empty");
        assert!(
            h0.iter().chain(&h1).all(|v| v.is_finite()),
            "scores must be finite"
        );
        Self { h0, h1 }
    }
}

/// One ROC operating point; the threshold that produced it is retained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpf: f64,
    pub tpf: f64,
    pub threshold: f64,
}

/// Empirical ROC curve, ordered by ascending threshold from the all-positive
/// corner `(1, 1)` down to `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    points: Vec<RocPoint>,
}

impl RocCurve {
    pub fn points(&self) -> &[RocPoint] {
        &self.points
    }

    /// Trapezoidal area under the curve.
    pub fn trapezoid_area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[0].fpf - w[1].fpf) * 0.5 * (w[0].tpf + w[1].tpf))
            .sum()
    }

    /// Writes `fpf,tpf,threshold` rows with 9 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "fpf,tpf,threshold")?;
        for p in &self.points {
            writeln!(out, "{:.8e},{:.8e},{:.8e}", p.fpf, p.tpf, p.threshold)?;
        }
        Ok(())
    }
}

/// Builds the empirical ROC curve by thresholding at every distinct pooled
/// score, then capping both ends with the trivial operating points.
pub fn empirical_roc(scores: &ScoreSet) -> RocCurve {
    let mut sorted0 = scores.h0.clone();
    let mut sorted1 = scores.h1.clone();
    sorted0.sort_by(f64::total_cmp);
    sorted1.sort_by(f64::total_cmp);
    let mut pooled: Vec<f64> = scores.h0.iter().chain(&scores.h1).copied().collect();
    pooled.sort_by(f64::total_cmp);
    pooled.dedup();

    let n0 = sorted0.len() as f64;
    let n1 = sorted1.len() as f64;
    let frac_ge = |sorted: &[f64], n: f64, threshold: f64| {
        let below = sorted.partition_point(|&v| v < threshold);
        (sorted.len() - below) as f64 / n
    };

    let mut points = Vec::with_capacity(pooled.len() + 2);
    points.push(RocPoint { fpf: 1.0, tpf: 1.0, threshold: f64::NEG_INFINITY });
    for &threshold in &pooled {
        points.push(RocPoint {
            fpf: frac_ge(&sorted0, n0, threshold),
            tpf: frac_ge(&sorted1, n1, threshold),
            threshold,
        });
    }
    points.push(RocPoint { fpf: 0.0, tpf: 0.0, threshold: f64::INFINITY });
    RocCurve { points }
}

/// Mann-Whitney AUC: the fraction of `(h0, h1)` pairs ranked correctly, ties
/// counted 1/2. Computed from average ranks in O(n log n).
pub fn auc(scores: &ScoreSet) -> f64 {
    let n0 = scores.h0.len();
    let n1 = scores.h1.len();
    let mut pooled: Vec<(f64, bool)> = scores
        .h0
        .iter()
        .map(|&v| (v, false))
        .chain(scores.h1.iter().map(|&v| (v, true)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Average ranks across tie groups, accumulating the rank sum of class 1.
    let mut rank_sum1 = 0.0f64;
    let mut i = 0usize;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // 1-based ranks i+1 ..= j share the average rank.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let ones = pooled[i..j].iter().filter(|(_, is1)| *is1).count();
        rank_sum1 += avg_rank * ones as f64;
        i = j;
    }
    let u1 = rank_sum1 - (n1 * (n1 + 1)) as f64 / 2.0;
    u1 / (n0 as f64 * n1 as f64)
}

/// Test-statistic SNR: mean separation over the pooled standard deviation,
/// with unbiased `(n - 1)` variances.
pub fn snr_t(scores: &ScoreSet) -> Result<f64, EvalError> {
    for set in [&scores.h0, &scores.h1] {
        if set.len() < 2 {
            return Err(EvalError::TooFewScores { needed: 2, got: set.len() });
        }
    }
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        (mean, var)
    };
    let (m0, v0) = stats(&scores.h0);
    let (m1, v1) = stats(&scores.h1);
    let pooled = 0.5 * (v0 + v1);
    if pooled <= 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    Ok((m1 - m0) / pooled.sqrt())
}

/// Detectability index `d_A = sqrt(2) * probit(AUC)` of an AUC in (0.5, 1).
pub fn detectability(auc_value: f64) -> Result<f64, EvalError> {
    if !(auc_value > 0.5 && auc_value < 1.0) {
        return Err(EvalError::AucOutOfRange { value: auc_value });
    }
    Ok(std::f64::consts::SQRT_2 * probit(auc_value))
}

/// Detection efficiency of an observer against a reference:
/// `(d_observer / d_reference)^2`.
pub fn efficiency(auc_observer: f64, auc_reference: f64) -> Result<f64, EvalError> {
    let d_obs = detectability(auc_observer)?;
    let d_ref = detectability(auc_reference)?;
    Ok((d_obs / d_ref) * (d_obs / d_ref))
}

/// Mean squared error between two posterior-probability vectors in [0, 1].
pub fn posterior_mse(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(EvalError::TooFewScores { needed: 1, got: 0 });
    }
    for (index, &value) in a.iter().chain(b.iter()).enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(EvalError::PosteriorOutOfRange { index: index % a.len(), value });
        }
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// Inverse standard-normal CDF via Wichura's AS241 rational approximation
/// (absolute error far below the 1e-9 requirement).
pub fn probit(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "probit argument must lie in (0, 1)");
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&PROBIT_A, r) / poly(&PROBIT_B, r);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let value = if r <= 5.0 {
        let r = r - 1.6;
        poly(&PROBIT_C, r) / poly(&PROBIT_D, r)
    } else {
        let r = r - 5.0;
        poly(&PROBIT_E, r) / poly(&PROBIT_F, r)
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

fn poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

const PROBIT_A: [f64; 8] = [
    3.387_132_872_796_366_608e0,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
const PROBIT_B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
const PROBIT_C: [f64; 8] = [
    1.423_437_110_749_683_577_34e0,
    4.630_337_846_156_545_295_9e0,
    5.769_497_221_460_691_405_5e0,
    3.647_848_324_763_204_605_04e0,
    1.270_458_252_452_368_382_58e0,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
const PROBIT_D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87e0,
    1.676_384_830_183_803_849_4e0,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const PROBIT_E: [f64; 8] = [
    6.657_904_643_501_103_777_2e0,
    5.463_784_911_164_114_369_9e0,
    1.784_826_539_917_291_335_8e0,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const PROBIT_F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn auc_counts_pairs() {
        // h0 = {0, 2}, h1 = {1, 3}: 3 of 4 pairs ranked correctly.
        let s = ScoreSet::new(vec![0.0, 2.0], vec![1.0, 3.0]);
        assert_relative_eq!(auc(&s), 0.75, max_relative = 1e-15);
    }

    #[test]
    fn auc_ties_count_half() {
        // h0 = {1, 2}, h1 = {2, 3}: one tied pair worth 1/2.
        let s = ScoreSet::new(vec![1.0, 2.0], vec![2.0, 3.0]);
        assert_relative_eq!(auc(&s), 0.875, max_relative = 1e-15);
        // Identical scores give chance performance exactly.
        let flat = ScoreSet::new(vec![4.0; 5], vec![4.0; 7]);
        assert_relative_eq!(auc(&flat), 0.5, max_relative = 1e-15);
    }

    #[test]
    fn roc_endpoints_and_monotonicity() {
        let s = ScoreSet::new(vec![1.0, 3.0], vec![2.0, 4.0]);
        let roc = empirical_roc(&s);
        let pts = roc.points();
        assert_eq!((pts[0].fpf, pts[0].tpf), (1.0, 1.0));
        let last = pts.last().unwrap();
        assert_eq!((last.fpf, last.tpf), (0.0, 0.0));
        for w in pts.windows(2) {
            assert!(w[1].fpf <= w[0].fpf && w[1].tpf <= w[0].tpf, "ROC must be monotone");
            assert!(w[1].threshold >= w[0].threshold);
        }
        assert_relative_eq!(roc.trapezoid_area(), 0.75, max_relative = 1e-15);
    }

    #[test]
    fn trapezoid_area_equals_mann_whitney() {
        let s = ScoreSet::new(
            vec![0.3, 1.2, 1.2, -0.4, 2.0, 0.0, 0.3],
            vec![0.9, 1.2, 2.5, 0.3, 3.1],
        );
        assert!((empirical_roc(&s).trapezoid_area() - auc(&s)).abs() < 1e-12);
    }

    #[test]
    fn snr_matches_hand_computation() {
        // h0 = {-1, 1}, h1 = {1, 3}: separation 2, pooled variance 2.
        let s = ScoreSet::new(vec![-1.0, 1.0], vec![1.0, 3.0]);
        assert_relative_eq!(snr_t(&s).unwrap(), 2.0 / 2.0f64.sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn snr_rejects_degenerate_scores() {
        let s = ScoreSet::new(vec![1.0, 1.0], vec![1.0, 1.0]);
        assert!(matches!(snr_t(&s), Err(EvalError::ZeroVariance)));
        let tiny = ScoreSet::new(vec![1.0], vec![1.0, 2.0]);
        assert!(matches!(snr_t(&tiny), Err(EvalError::TooFewScores { .. })));
    }

    #[test]
    fn probit_matches_reference_quantiles() {
        // Standard normal quantiles to well below the 1e-9 requirement.
        assert!((probit(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((probit(0.75) - 0.674_489_750_196_081_7).abs() < 1e-12);
        assert!((probit(0.85) - 1.036_433_389_493_789_8).abs() < 1e-12);
        assert!((probit(0.5)).abs() < 1e-15);
        assert!((probit(0.025) + 1.959_963_984_540_054).abs() < 1e-12);
        // Far-tail branch: round-trip through an independent normal CDF.
        use statrs::distribution::{ContinuousCDF, Normal};
        let normal = Normal::new(0.0, 1.0).unwrap();
        for &p in &[1e-20, 1e-12, 1e-300] {
            let x = probit(p);
            let back = normal.cdf(x);
            assert!(
                (back - p).abs() / p < 1e-6,
                "round-trip of p = {p} gave {back} via x = {x}"
            );
        }
    }

    #[test]
    fn probit_agrees_with_independent_cdf_inverse() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let normal = Normal::new(0.0, 1.0).unwrap();
        for i in 1..999 {
            let p = i as f64 / 1000.0;
            let expected = normal.inverse_cdf(p);
            assert!(
                (probit(p) - expected).abs() < 1e-8,
                "p = {p}: {} vs {expected}",
                probit(p)
            );
        }
    }

    #[test]
    fn efficiency_matches_frozen_quantile_ratio() {
        // AUC 0.75 vs 0.85; the sqrt(2) factors cancel in the ratio.
        let expected = (0.674_489_750_196_081_7f64 / 1.036_433_389_493_789_8).powi(2);
        assert_relative_eq!(efficiency(0.75, 0.85).unwrap(), expected, max_relative = 1e-12);
        assert!(matches!(efficiency(0.5, 0.85), Err(EvalError::AucOutOfRange { .. })));
        assert!(matches!(efficiency(0.75, 1.0), Err(EvalError::AucOutOfRange { .. })));
    }

    #[test]
    fn detectability_roundtrips_through_gaussian_auc() {
        // For binormal scores with unit variance, AUC = Phi(d / sqrt(2)).
        use statrs::distribution::{ContinuousCDF, Normal};
        let normal = Normal::new(0.0, 1.0).unwrap();
        for &d in &[0.5, 1.0, 2.0] {
            let auc_value = normal.cdf(d / 2.0f64.sqrt());
            assert_relative_eq!(detectability(auc_value).unwrap(), d, max_relative = 1e-9);
        }
    }

    #[test]
    fn posterior_mse_basic_and_errors() {
        assert_relative_eq!(
            posterior_mse(&[0.0, 0.5, 1.0], &[0.0, 0.5, 1.0]).unwrap(),
            0.0,
            epsilon = 0.0
        );
        assert_relative_eq!(
            posterior_mse(&[0.2, 0.4], &[0.4, 0.2]).unwrap(),
            0.04,
            max_relative = 1e-14
        );
        assert!(posterior_mse(&[0.2], &[0.2, 0.3]).is_err());
        assert!(posterior_mse(&[1.2], &[0.3]).is_err());
    }

    #[test]
    fn roc_csv_has_header_and_rows() {
        let s = ScoreSet::new(vec![1.0], vec![2.0]);
        let mut buf = Vec::new();
        empirical_roc(&s).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("fpf,tpf,threshold"));
        assert_eq!(lines.count(), 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// The Mann-Whitney AUC depends only on ranks, so any strictly
        /// increasing transform leaves it bit-identical.
        #[test]
        fn auc_invariant_under_monotone_transform(
            h0 in prop::collection::vec(-50i32..50, 2..40),
            h1 in prop::collection::vec(-50i32..50, 2..40),
        ) {
            let s = ScoreSet::new(
                h0.iter().map(|&v| v as f64).collect(),
                h1.iter().map(|&v| v as f64).collect(),
            );
            let t = ScoreSet::new(
                s.h0.iter().map(|&v| (v / 10.0).exp()).collect(),
                s.h1.iter().map(|&v| (v / 10.0).exp()).collect(),
            );
            prop_assert_eq!(auc(&s), auc(&t));
        }

        /// Trapezoid area under the empirical ROC equals the Mann-Whitney
        /// statistic, including heavy ties from integer scores.
        #[test]
        fn trapezoid_cross_check(
            h0 in prop::collection::vec(-6i32..6, 2..60),
            h1 in prop::collection::vec(-6i32..6, 2..60),
        ) {
            let s = ScoreSet::new(
                h0.iter().map(|&v| v as f64).collect(),
                h1.iter().map(|&v| v as f64).collect(),
            );
            prop_assert!((empirical_roc(&s).trapezoid_area() - auc(&s)).abs() < 1e-12);
        }
    }
}
