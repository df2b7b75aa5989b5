//! Topology-aware evaluation of tree-structure segmentations.
//!
//! Four per-case metrics: voxelwise Dice overlap, centerline completeness
//! (fraction of ground-truth centerline covered by the prediction), centerline
//! leakage (predicted centerline length outside the ground truth, normalized
//! by ground-truth centerline length), and the number of continuity gaps in
//! the correctly detected centerlines. Gaps can be negative when whole
//! ground-truth components are missed; the raw value is reported and the
//! component count of `Y ∩ G_cl` is logged alongside so consumers can
//! post-process.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::skeletonize;
use crate::volume::{connected_components, BinaryMask, Connectivity};

/// Voxelwise overlap `2|Y∩G| / (|Y|+|G|)`. Two empty masks count as perfect
/// agreement (1.0).
pub fn dice_coeff(y: &BinaryMask, g: &BinaryMask) -> Result<f64> {
    y.same_shape(g)?;
    let mut inter = 0u64;
    let mut ny = 0u64;
    let mut ng = 0u64;
    for (&a, &b) in y.data.iter().zip(&g.data) {
        inter += u64::from(a != 0 && b != 0);
        ny += u64::from(a != 0);
        ng += u64::from(b != 0);
    }
    if ny + ng == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (ny + ng) as f64)
}

/// Fraction of the ground-truth centerline covered by the predicted mask:
/// `|Y ∩ G_cl| / |G_cl|`.
pub fn completeness(y: &BinaryMask, g_cl: &BinaryMask) -> Result<f64> {
    y.same_shape(g_cl)?;
    let total = g_cl.count_ones();
    if total == 0 {
        return Err(Error::EmptyCenterline);
    }
    let mut inter = 0u64;
    for (&a, &b) in y.data.iter().zip(&g_cl.data) {
        inter += u64::from(a != 0 && b != 0);
    }
    Ok(inter as f64 / total as f64)
}

/// Predicted-centerline length outside the ground truth, normalized by the
/// ground-truth centerline length: `|Y_cl ∩ (1−G)| / |G_cl|` with
/// `Y_cl = skeletonize(Y)`.
pub fn leakage(y: &BinaryMask, g: &BinaryMask, g_cl: &BinaryMask) -> Result<f64> {
    y.same_shape(g)?;
    y.same_shape(g_cl)?;
    let total = g_cl.count_ones();
    if total == 0 {
        return Err(Error::EmptyCenterline);
    }
    let y_cl = skeletonize(y);
    let mut outside = 0u64;
    for (&a, &b) in y_cl.data.iter().zip(&g.data) {
        outside += u64::from(a != 0 && b == 0);
    }
    Ok(outside as f64 / total as f64)
}

/// Continuity gaps: `NCC(Y ∩ G_cl) − NCC(G_cl)` under 26-connectivity.
pub fn gaps(y: &BinaryMask, g_cl: &BinaryMask) -> Result<i64> {
    y.same_shape(g_cl)?;
    let detected = y.and(g_cl);
    let (_, n_det) = connected_components(&detected, Connectivity::TwentySix);
    let (_, n_cl) = connected_components(g_cl, Connectivity::TwentySix);
    Ok(n_det as i64 - n_cl as i64)
}

/// All four metrics for one case.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CaseMetrics {
    pub id: String,
    pub dice: f64,
    pub completeness: f64,
    pub leakage: f64,
    pub gaps: i64,
    /// Component count of `Y ∩ G_cl`, logged so negative gap values can be
    /// interpreted downstream.
    pub detected_components: usize,
}

/// Evaluate one case with shared intermediates.
pub fn evaluate_case(id: &str, y: &BinaryMask, g: &BinaryMask, g_cl: &BinaryMask) -> Result<CaseMetrics> {
    y.same_shape(g)?;
    y.same_shape(g_cl)?;
    let dice = dice_coeff(y, g)?;
    let comp = completeness(y, g_cl)?;
    let leak = leakage(y, g, g_cl)?;
    let detected = y.and(g_cl);
    let (_, n_det) = connected_components(&detected, Connectivity::TwentySix);
    let (_, n_cl) = connected_components(g_cl, Connectivity::TwentySix);
    Ok(CaseMetrics {
        id: id.to_string(),
        dice,
        completeness: comp,
        leakage: leak,
        gaps: n_det as i64 - n_cl as i64,
        detected_components: n_det,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Per-case metrics plus mean/standard-deviation aggregates.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub cases: Vec<CaseMetrics>,
    pub aggregate: Aggregate,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Aggregate {
    pub dice: MeanStd,
    pub completeness: MeanStd,
    pub leakage: MeanStd,
    pub gaps: MeanStd,
}

/// Sample mean and standard deviation (n−1 denominator; 0 for n < 2).
pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd { mean: 0.0, std: 0.0 };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return MeanStd { mean, std: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    MeanStd { mean, std: var.sqrt() }
}

impl MetricsReport {
    pub fn from_cases(cases: Vec<CaseMetrics>) -> Self {
        let pick = |f: fn(&CaseMetrics) -> f64| -> Vec<f64> { cases.iter().map(f).collect() };
        let aggregate = Aggregate {
            dice: mean_std(&pick(|c| c.dice)),
            completeness: mean_std(&pick(|c| c.completeness)),
            leakage: mean_std(&pick(|c| c.leakage)),
            gaps: mean_std(&pick(|c| c.gaps as f64)),
        };
        MetricsReport { cases, aggregate }
    }
}

/// Paired two-sided Student's t-test.
///
/// Returns `(t, p)` with the p-value from the t-distribution with n−1
/// degrees of freedom. Identical pairings give `t = 0, p = 1`; zero-variance
/// differences with a nonzero mean are rejected as degenerate.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Config("paired t-test needs equal lengths >= 2".into()));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        if mean == 0.0 {
            return Ok((0.0, 1.0));
        }
        return Err(Error::DegenerateTest);
    }
    let t = mean / (var / n).sqrt();
    let df = n - 1.0;
    let p = student_t_two_sided_p(t, df);
    Ok((t, p))
}

/// Two-sided p-value for a t statistic: `I_{df/(df+t^2)}(df/2, 1/2)`.
fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    regularized_incomplete_beta(df / 2.0, 0.5, x)
}

/// Regularized incomplete beta function `I_x(a, b)` via the Lentz continued
/// fraction, accurate to ~1e-12 for moderate arguments.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    // continued fraction converges fast for x < (a+1)/(a+b+2); use symmetry otherwise
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Lanczos approximation (g = 7, n = 9), |error| < 1e-13 for positive reals.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection formula
        return std::f64::consts::PI.ln() - (std::f64::consts::PI * x).sin().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    fn mask_from(dims: [usize; 3], voxels: &[[usize; 3]]) -> BinaryMask {
        let mut m = BinaryMask::zeros(dims, [1.0; 3]);
        for &[x, y, z] in voxels {
            m.set(x, y, z, 1);
        }
        m
    }

    #[test]
    fn dice_basics() {
        let dims = [4, 4, 4];
        let a = mask_from(dims, &[[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]]);
        let b = mask_from(dims, &[[2, 0, 0], [3, 0, 0], [0, 1, 0], [1, 1, 0]]);
        assert_eq!(dice_coeff(&a, &a).unwrap(), 1.0);
        assert_eq!(dice_coeff(&a, &b).unwrap(), 0.5);
        let empty = BinaryMask::zeros(dims, [1.0; 3]);
        assert_eq!(dice_coeff(&a, &empty).unwrap(), 0.0);
        assert_eq!(dice_coeff(&empty, &empty).unwrap(), 1.0);
    }

    #[test]
    fn completeness_basics() {
        let dims = [12, 3, 3];
        let g_cl = mask_from(dims, &(0..10).map(|x| [x, 1, 1]).collect::<Vec<_>>());
        let y_half = mask_from(dims, &(0..5).map(|x| [x, 1, 1]).collect::<Vec<_>>());
        assert_eq!(completeness(&g_cl, &g_cl).unwrap(), 1.0);
        assert_eq!(completeness(&y_half, &g_cl).unwrap(), 0.5);
        let empty = BinaryMask::zeros(dims, [1.0; 3]);
        assert_eq!(completeness(&empty, &g_cl).unwrap(), 0.0);
        assert!(matches!(completeness(&y_half, &empty), Err(Error::EmptyCenterline)));
    }

    #[test]
    fn leakage_basics() {
        let dims = [14, 5, 5];
        // ground truth: solid line of 8 voxels; centerline equals it
        let g = mask_from(dims, &(1..9).map(|x| [x, 2, 2]).collect::<Vec<_>>());
        let g_cl = g.clone();
        // prediction inside the ground truth leaks nothing
        assert_eq!(leakage(&g, &g, &g_cl).unwrap(), 0.0);
        // thin prediction sticking out by 4 voxels: |Y_cl outside G| = 4, |G_cl| = 8
        let y = mask_from(dims, &(1..13).map(|x| [x, 2, 2]).collect::<Vec<_>>());
        assert_eq!(leakage(&y, &g, &g_cl).unwrap(), 0.5);
        let empty = BinaryMask::zeros(dims, [1.0; 3]);
        assert_eq!(leakage(&empty, &g, &g_cl).unwrap(), 0.0);
    }

    #[test]
    fn gaps_line_fixture() {
        let dims = [12, 3, 3];
        let g_cl = mask_from(dims, &(0..10).map(|x| [x, 1, 1]).collect::<Vec<_>>());
        // prediction missing the two middle centerline voxels: 2 components - 1
        let y = mask_from(
            dims,
            &(0..10).filter(|x| *x != 4 && *x != 5).map(|x| [x, 1, 1]).collect::<Vec<_>>(),
        );
        assert_eq!(gaps(&y, &g_cl).unwrap(), 1);
        assert_eq!(gaps(&g_cl, &g_cl).unwrap(), 0);
        let empty = BinaryMask::zeros(dims, [1.0; 3]);
        assert_eq!(gaps(&empty, &g_cl).unwrap(), -1);
    }

    #[test]
    fn perfect_prediction_is_perfect() {
        let dims = [10, 6, 6];
        let g = mask_from(dims, &(1..9).flat_map(|x| [[x, 2, 2], [x, 3, 2]]).collect::<Vec<_>>());
        let g_cl = mask_from(dims, &(1..9).map(|x| [x, 2, 2]).collect::<Vec<_>>());
        let r = evaluate_case("c0", &g, &g, &g_cl).unwrap();
        assert_eq!(r.dice, 1.0);
        assert_eq!(r.completeness, 1.0);
        assert_eq!(r.leakage, 0.0);
        assert_eq!(r.gaps, 0);
    }

    #[test]
    fn disjoint_blob_only_raises_leakage() {
        let dims = [16, 8, 8];
        let g = mask_from(dims, &(1..9).map(|x| [x, 3, 3]).collect::<Vec<_>>());
        let g_cl = g.clone();
        let y = g.clone();
        let base = evaluate_case("a", &y, &g, &g_cl).unwrap();
        let mut y2 = y.clone();
        // far-away blob
        for x in 12..15 {
            for yy in 5..8 {
                y2.set(x, yy, 6, 1);
            }
        }
        let with_blob = evaluate_case("b", &y2, &g, &g_cl).unwrap();
        assert_eq!(with_blob.completeness, base.completeness);
        assert_eq!(with_blob.gaps, base.gaps);
        assert!(with_blob.leakage >= base.leakage);
    }

    #[test]
    fn flip_invariance_of_completeness_and_leakage() {
        use rand::Rng as _;
        let mut rng = crate::rng::seed_rng(31);
        let dims = [9, 9, 9];
        let g = crate::volume::dilate_cube3(&Grid::from_fn(dims, [1.0; 3], |_, _, _| {
            u8::from(rng.random::<f32>() < 0.08)
        }));
        let g_cl = crate::skeleton::skeletonize(&g);
        if g_cl.count_ones() == 0 {
            return;
        }
        let y = Grid::from_fn(dims, [1.0; 3], |x, y, z| {
            u8::from(g.get(x, y, z) != 0 && (x + y + z) % 7 != 0)
        });
        let flip = |m: &BinaryMask| {
            Grid::from_fn(dims, [1.0; 3], |x, y, z| m.get(dims[0] - 1 - x, y, z))
        };
        let c1 = completeness(&y, &g_cl).unwrap();
        let c2 = completeness(&flip(&y), &flip(&g_cl)).unwrap();
        assert_eq!(c1, c2);
        let l1 = leakage(&y, &g, &g_cl).unwrap();
        let l2 = leakage(&flip(&y), &flip(&g), &flip(&g_cl)).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
    }

    #[test]
    fn ttest_identical_samples() {
        let a = [0.7, 0.8, 0.9, 0.75];
        let (t, p) = paired_ttest(&a, &a).unwrap();
        assert_eq!(t, 0.0);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn ttest_sign_symmetry() {
        let a = [0.70, 0.80, 0.90, 0.75, 0.85];
        let b = [0.72, 0.78, 0.95, 0.70, 0.88];
        let (t1, p1) = paired_ttest(&a, &b).unwrap();
        let (t2, p2) = paired_ttest(&b, &a).unwrap();
        assert!((t1 + t2).abs() < 1e-12);
        assert!((p1 - p2).abs() < 1e-12);
    }

    #[test]
    fn ttest_matches_reference_values() {
        // fixtures computed with an independent reference implementation
        // (scipy.stats.ttest_rel, two-sided), frozen here
        let a = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
        let b = [0.18, 0.15, 0.36, 0.42, 0.41, 0.68, 0.75, 0.72, 1.01, 1.05];
        let (t, p) = paired_ttest(&a, &b).unwrap();
        assert!((t - (-1.0216897928860424)).abs() < 1e-9, "t = {t}");
        assert!((p - 0.33360442981796923).abs() < 1e-6, "p = {p}");
    }

    #[test]
    fn ttest_degenerate_differences() {
        let a = [0.5, 0.6, 0.7];
        let b = [0.4, 0.5, 0.6]; // constant difference 0.1
        assert!(matches!(paired_ttest(&a, &b), Err(Error::DegenerateTest)));
    }

    #[test]
    fn incomplete_beta_reference_values() {
        // I_0.5(0.5, 0.5) = 0.5 exactly by symmetry
        assert!((regularized_incomplete_beta(0.5, 0.5, 0.5) - 0.5).abs() < 1e-12);
        // I_x(1, 1) = x
        assert!((regularized_incomplete_beta(1.0, 1.0, 0.3) - 0.3).abs() < 1e-12);
        // I_x(2, 3) = x^2(6 - 8x + 3x^2)
        let x: f64 = 0.4;
        let want = x * x * (6.0 - 8.0 * x + 3.0 * x * x);
        assert!((regularized_incomplete_beta(2.0, 3.0, x) - want).abs() < 1e-12);
    }
}
