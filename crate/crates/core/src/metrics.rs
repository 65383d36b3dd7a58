//! Objective evaluation: mel-cepstral distortion (optionally DTW-aligned),
//! speaker-verification accept rate and pairwise Pearson correlation.

use crate::error::{Error, Result};
use crate::features::{EmbeddingVector, FeatureMatrix, MetricTable};

/// `10 / ln 10`, the dB scale factor of mel-cepstral distortion.
pub const MCD_SCALE: f64 = 10.0 / std::f64::consts::LN_10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McdConfig {
    pub use_dtw: bool,
    /// Exclude the 0th (power) coefficient.
    pub drop_first_dim: bool,
}

impl Default for McdConfig {
    fn default() -> Self {
        Self {
            use_dtw: false,
            drop_first_dim: true,
        }
    }
}

fn sum_sq_diff<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.into() - y.into();
            d * d
        })
        .sum()
}

/// Frame-level MCD in dB: `10/ln(10) * sqrt(2 * sum_d (c_d - t_d)^2)`.
pub fn mcd_frame<T: Copy + Into<f64>>(converted: &[T], target: &[T]) -> Result<f64> {
    if converted.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            found: converted.len(),
        });
    }
    if converted.is_empty() {
        return Err(Error::Empty("mcep frame"));
    }
    Ok(MCD_SCALE * (2.0 * sum_sq_diff(converted, target)).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtwAlignment {
    /// Monotone frame pairs from `(0, 0)` to `(len_a - 1, len_b - 1)`.
    pub path: Vec<(usize, usize)>,
    /// Summed Euclidean frame distance along the path.
    pub cost: f64,
}

#[derive(Clone, Copy)]
enum Step {
    Start,
    Diagonal,
    Down,
    Right,
}

/// Dynamic time warping with steps (1,1), (1,0) and (0,1) under Euclidean
/// frame distance. Equal-cost predecessors are preferred in that order.
pub fn dtw_align(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<DtwAlignment> {
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch {
            expected: a.cols(),
            found: b.cols(),
        });
    }
    let (n, m) = (a.rows(), b.rows());
    let mut acc = vec![f64::INFINITY; n * m];
    let mut from = vec![Step::Start; n * m];
    for i in 0..n {
        for j in 0..m {
            let d = sum_sq_diff(a.row(i), b.row(j)).sqrt();
            if i == 0 && j == 0 {
                acc[0] = d;
                continue;
            }
            let mut best = (f64::INFINITY, Step::Start);
            let candidates = [
                (
                    i > 0 && j > 0,
                    Step::Diagonal,
                    i.wrapping_sub(1),
                    j.wrapping_sub(1),
                ),
                (i > 0, Step::Down, i.wrapping_sub(1), j),
                (j > 0, Step::Right, i, j.wrapping_sub(1)),
            ];
            for (ok, step, pi, pj) in candidates {
                if ok && acc[pi * m + pj] < best.0 {
                    best = (acc[pi * m + pj], step);
                }
            }
            acc[i * m + j] = best.0 + d;
            from[i * m + j] = best.1;
        }
    }

    let mut path = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n - 1, m - 1);
    loop {
        path.push((i, j));
        match from[i * m + j] {
            Step::Start => break,
            Step::Diagonal => {
                i -= 1;
                j -= 1;
            }
            Step::Down => i -= 1,
            Step::Right => j -= 1,
        }
    }
    path.reverse();
    Ok(DtwAlignment {
        path,
        cost: acc[n * m - 1],
    })
}

/// Mean frame MCD between a converted and a reference mcep sequence.
pub fn mcd_sequence(
    converted: &FeatureMatrix,
    reference: &FeatureMatrix,
    cfg: McdConfig,
) -> Result<f64> {
    if converted.cols() != reference.cols() {
        return Err(Error::DimensionMismatch {
            expected: reference.cols(),
            found: converted.cols(),
        });
    }
    let trim = |m: &FeatureMatrix| -> Result<FeatureMatrix> {
        if cfg.drop_first_dim {
            if m.cols() < 2 {
                return Err(Error::Shape(
                    "dropping the first coefficient leaves no dimensions".into(),
                ));
            }
            m.column_block(1, m.cols() - 1)
        } else {
            Ok(m.clone())
        }
    };
    let (c, r) = (trim(converted)?, trim(reference)?);

    let pairs: Vec<(usize, usize)> = if cfg.use_dtw {
        dtw_align(&c, &r)?.path
    } else {
        if c.rows() != r.rows() {
            return Err(Error::LengthMismatch {
                left: c.rows(),
                right: r.rows(),
            });
        }
        (0..c.rows()).map(|i| (i, i)).collect()
    };
    let total = pairs
        .iter()
        .map(|&(i, j)| mcd_frame(c.row(i), r.row(j)))
        .sum::<Result<f64>>()?;
    Ok(total / pairs.len() as f64)
}

/// Cosine of the angle between two embeddings, clamped to [-1, 1].
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Percentage of converted embeddings whose cosine similarity to the target
/// strictly exceeds `threshold`.
pub fn asv_accept_rate(
    converted: &[EmbeddingVector],
    target: &EmbeddingVector,
    threshold: f64,
) -> Result<f64> {
    if converted.is_empty() {
        return Err(Error::Empty("converted embeddings"));
    }
    let mut accepted = 0usize;
    for e in converted {
        if cosine_similarity(e, target)? > threshold {
            accepted += 1;
        }
    }
    Ok(100.0 * accepted as f64 / converted.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerPoint {
    pub threshold: f64,
    /// Equal error rate as a fraction in [0, 1].
    pub rate: f64,
}

/// False-accept and false-reject rates when scores strictly above
/// `threshold` are accepted.
pub fn error_rates(genuine: &[f64], impostor: &[f64], threshold: f64) -> (f64, f64) {
    let fa = impostor.iter().filter(|&&s| s > threshold).count();
    let fr = genuine.iter().filter(|&&s| s <= threshold).count();
    (
        fa as f64 / impostor.len() as f64,
        fr as f64 / genuine.len() as f64,
    )
}

/// Threshold where false-accept and false-reject rates cross.
///
/// Operating points sit midway between adjacent distinct scores, bracketed
/// by accept-all at the lowest score and reject-all at the highest. When a
/// run of operating points has equal rates, the centre of the run is
/// returned; otherwise the crossing is linearly interpolated between the two
/// adjacent points that straddle it.
pub fn eer_threshold(genuine: &[f64], impostor: &[f64]) -> Result<EerPoint> {
    if genuine.is_empty() {
        return Err(Error::Empty("genuine scores"));
    }
    if impostor.is_empty() {
        return Err(Error::Empty("impostor scores"));
    }
    if let Some(pos) = genuine.iter().chain(impostor).position(|s| !s.is_finite()) {
        return Err(Error::NonFinite { row: pos, col: 0 });
    }
    let mut scores: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    scores.sort_by(f64::total_cmp);
    scores.dedup();

    // (threshold, far, frr)
    let mut points = Vec::with_capacity(scores.len() + 1);
    points.push((scores[0], 1.0, 0.0));
    for w in scores.windows(2) {
        let t = 0.5 * (w[0] + w[1]);
        let (far, frr) = error_rates(genuine, impostor, t);
        points.push((t, far, frr));
    }
    points.push((scores[scores.len() - 1], 0.0, 1.0));

    let diff = |p: &(f64, f64, f64)| p.2 - p.1;
    if let Some(first) = points.iter().position(|p| diff(p) == 0.0) {
        let last = points.iter().rposition(|p| diff(p) == 0.0).unwrap();
        return Ok(EerPoint {
            threshold: 0.5 * (points[first].0 + points[last].0),
            rate: points[first].1,
        });
    }
    let i = points
        .windows(2)
        .position(|w| diff(&w[0]) < 0.0 && diff(&w[1]) > 0.0)
        .expect("rate difference runs from -1 to 1");
    let (lo, hi) = (points[i], points[i + 1]);
    let f = -diff(&lo) / (diff(&hi) - diff(&lo));
    let lerp = |a: f64, b: f64| a + f * (b - a);
    Ok(EerPoint {
        threshold: lerp(lo.0, hi.0),
        rate: 0.5 * (lerp(lo.1, hi.1) + lerp(lo.2, hi.2)),
    })
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Empty("pearson needs at least two observations"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantInput(None));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    labels: Vec<String>,
    values: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.labels.len() + j]
    }

    pub fn by_name(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        Some(self.get(i, j))
    }

    /// Square CSV with a labelled header row and column, six decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(l);
            for j in 0..self.labels.len() {
                out.push_str(&format!(",{:.6}", self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

/// Pairwise Pearson correlation between the named columns of `table`.
pub fn correlation_matrix(table: &MetricTable, columns: &[&str]) -> Result<CorrelationMatrix> {
    if columns.is_empty() {
        return Err(Error::InvalidConfig("no columns selected".into()));
    }
    for (i, c) in columns.iter().enumerate() {
        if columns[..i].contains(c) {
            return Err(Error::DuplicateColumn(c.to_string()));
        }
    }
    let data = columns
        .iter()
        .map(|&c| {
            table
                .column(c)
                .ok_or_else(|| Error::MissingColumn(c.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    if table.len() < 2 {
        return Err(Error::Empty("correlation needs at least two rows"));
    }
    let k = columns.len();
    let mut values = vec![0.0; k * k];
    for i in 0..k {
        values[i * k + i] = 1.0;
        for j in i + 1..k {
            let r = pearson(data[i], data[j]).map_err(|e| match e {
                Error::ConstantInput(_) => {
                    let name = if pearson(data[i], data[i]).is_err() {
                        columns[i]
                    } else {
                        columns[j]
                    };
                    Error::ConstantInput(Some(name.to_string()))
                }
                other => other,
            })?;
            values[i * k + j] = r;
            values[j * k + i] = r;
        }
    }
    if k == 1 && pearson(data[0], data[0]).is_err() {
        return Err(Error::ConstantInput(Some(columns[0].to_string())));
    }
    Ok(CorrelationMatrix {
        labels: columns.iter().map(|c| c.to_string()).collect(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(rows: &[&[f64]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn mcd_frame_closed_forms() {
        assert_eq!(mcd_frame(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((mcd_frame(&[1.0], &[0.0]).unwrap() - 6.1418).abs() < 1e-3);
        assert!((mcd_frame(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 30.709).abs() < 1e-2);
        assert!(mcd_frame(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn dtw_single_frame_against_three() {
        let a = seq(&[&[0.0]]);
        let b = seq(&[&[1.0], &[2.0], &[3.0]]);
        let al = dtw_align(&a, &b).unwrap();
        assert_eq!(al.path, vec![(0, 0), (0, 1), (0, 2)]);
        assert_eq!(al.cost, 6.0);
    }

    #[test]
    fn dtw_identity_is_diagonal() {
        let a = seq(&[&[0.0, 1.0], &[2.0, 0.5], &[4.0, 4.0]]);
        let al = dtw_align(&a, &a).unwrap();
        assert_eq!(al.path, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(al.cost, 0.0);
    }

    #[test]
    fn dtw_prefers_diagonal_on_ties() {
        let a = seq(&[&[0.0], &[0.0]]);
        let al = dtw_align(&a, &a).unwrap();
        assert_eq!(al.path, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn dtw_rejects_dim_mismatch() {
        assert!(dtw_align(&seq(&[&[0.0]]), &seq(&[&[0.0, 1.0]])).is_err());
    }

    #[test]
    fn mcd_sequence_modes() {
        let a = seq(&[&[9.0, 0.0], &[9.0, 1.0]]);
        assert_eq!(mcd_sequence(&a, &a, McdConfig::default()).unwrap(), 0.0);

        // Per-frame MCDs of 2 dB and 4 dB average to 3 dB.
        let d1 = 2.0 / (MCD_SCALE * 2f64.sqrt());
        let d2 = 4.0 / (MCD_SCALE * 2f64.sqrt());
        let c = seq(&[&[0.0, d1], &[0.0, d2]]);
        let r = seq(&[&[5.0, 0.0], &[7.0, 0.0]]);
        let got = mcd_sequence(&c, &r, McdConfig::default()).unwrap();
        assert!((got - 3.0).abs() < 1e-6, "{got}");

        let keep = McdConfig {
            drop_first_dim: false,
            ..McdConfig::default()
        };
        assert!(mcd_sequence(&c, &r, keep).unwrap() > got);

        let short = seq(&[&[0.0, 1.0]]);
        assert!(matches!(
            mcd_sequence(&short, &r, McdConfig::default()),
            Err(Error::LengthMismatch { .. })
        ));
        let dtw = McdConfig {
            use_dtw: true,
            ..McdConfig::default()
        };
        assert!(mcd_sequence(&short, &r, dtw).is_ok());
    }

    #[test]
    fn mcd_dtw_absorbs_duplicated_frame() {
        let conv = seq(&[&[1.0, 0.0, 1.0], &[1.0, 3.0, 2.0], &[1.0, -1.0, 0.5]]);
        let refr = seq(&[
            &[1.0, 0.0, 1.0],
            &[1.0, 3.0, 2.0],
            &[1.0, 3.0, 2.0],
            &[1.0, -1.0, 0.5],
        ]);
        let cfg = McdConfig {
            use_dtw: true,
            drop_first_dim: true,
        };
        assert_eq!(mcd_sequence(&conv, &refr, cfg).unwrap(), 0.0);
    }

    #[test]
    fn cosine_cases() {
        let e = |v: &[f64]| EmbeddingVector::new(v.to_vec()).unwrap();
        assert!((cosine_similarity(&e(&[1.0, 2.0]), &e(&[1.0, 2.0])).unwrap() - 1.0).abs() < 1e-15);
        assert!(
            (cosine_similarity(&e(&[1.0, 2.0]), &e(&[-1.0, -2.0])).unwrap() + 1.0).abs() < 1e-15
        );
        assert_eq!(
            cosine_similarity(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])).unwrap(),
            0.0
        );
        let r = cosine_similarity(&e(&[1.0, 0.0]), &e(&[1.0, 1.0])).unwrap();
        assert!((r - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(
            cosine_similarity(&e(&[0.0, 0.0]), &e(&[1.0, 1.0])),
            Err(Error::ZeroVector)
        ));
        assert!(cosine_similarity(&e(&[1.0]), &e(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn accept_rate_cases() {
        let e = |v: &[f64]| EmbeddingVector::new(v.to_vec()).unwrap();
        let target = e(&[1.0, 0.0]);
        let same = vec![target.clone(); 3];
        assert_eq!(asv_accept_rate(&same, &target, 0.5).unwrap(), 100.0);
        assert_eq!(asv_accept_rate(&same, &target, 1.5).unwrap(), 0.0);
        // Strict inequality: similarity exactly at the threshold is rejected.
        assert_eq!(asv_accept_rate(&same, &target, 1.0).unwrap(), 0.0);

        let four = vec![
            e(&[1.0, 0.1]),
            e(&[1.0, 0.5]),
            e(&[1.0, -0.9]),
            e(&[0.0, 1.0]),
        ];
        // cosines: 0.995, 0.894, 0.743, 0.0
        assert_eq!(asv_accept_rate(&four, &target, 0.5).unwrap(), 75.0);
        assert!(asv_accept_rate(&[], &target, 0.5).is_err());
    }

    #[test]
    fn eer_separable_midpoint() {
        let p = eer_threshold(&[0.9, 0.9, 0.9], &[0.1, 0.1]).unwrap();
        assert!((p.threshold - 0.5).abs() < 1e-15);
        assert_eq!(p.rate, 0.0);
    }

    #[test]
    fn eer_equal_distributions_at_median() {
        let s = [0.1, 0.4, 0.7];
        let p = eer_threshold(&s, &s).unwrap();
        assert!((p.threshold - 0.4).abs() < 1e-12);
        assert!((p.rate - 0.5).abs() < 1e-12);
    }

    #[test]
    fn eer_single_score() {
        let p = eer_threshold(&[0.3], &[0.3]).unwrap();
        assert_eq!(p.threshold, 0.3);
        assert_eq!(p.rate, 0.5);
        assert!(eer_threshold(&[], &[0.3]).is_err());
        assert!(eer_threshold(&[0.3], &[]).is_err());
        assert!(eer_threshold(&[f64::NAN], &[0.3]).is_err());
    }

    #[test]
    fn pearson_cases() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(
            pearson(&x, &[1.0; 4]),
            Err(Error::ConstantInput(_))
        ));
        assert!(pearson(&x, &[1.0, 2.0]).is_err());
        assert!(pearson(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn correlation_matrix_errors() {
        let t = MetricTable::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![
                ("X".into(), vec![1.0, 2.0, 3.0]),
                ("Y".into(), vec![3.0, 1.0, 2.0]),
                ("Z".into(), vec![5.0, 5.0, 5.0]),
            ],
        )
        .unwrap();
        let m = correlation_matrix(&t, &["X", "Y"]).unwrap();
        assert_eq!(m.get(0, 0), 1.0);
        assert_eq!(m.get(0, 1), m.get(1, 0));
        assert!((m.get(0, 1) + 0.5).abs() < 1e-12);
        assert_eq!(correlation_matrix(&t, &["X"]).unwrap().get(0, 0), 1.0);
        assert!(matches!(
            correlation_matrix(&t, &["X", "X"]),
            Err(Error::DuplicateColumn(_))
        ));
        assert!(matches!(
            correlation_matrix(&t, &["X", "W"]),
            Err(Error::MissingColumn(_))
        ));
        assert!(matches!(
            correlation_matrix(&t, &["X", "Z"]),
            Err(Error::ConstantInput(Some(ref c))) if c == "Z"
        ));
        assert!(m.to_csv().starts_with("metric,X,Y\nX,1.000000,-0.500000\n"));
    }
}
