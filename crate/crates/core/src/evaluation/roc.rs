use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::verification::Decision;

/// Header line stating which way scores point.
pub const SCORE_ORIENTATION: &str = "score = cosine distance to the reference; higher = more likely fake";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredFrame {
    pub frame_id: String,
    pub identity: String,
    pub video_id: String,
    pub label: Label,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocReport {
    pub auc: f64,
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub curve: Vec<(f64, f64)>,
    pub n_real: usize,
    pub n_fake: usize,
}

fn check_scores(frames: &[ScoredFrame]) -> Result<(usize, usize)> {
    if let Some(f) = frames.iter().find(|f| !f.score.is_finite()) {
        return Err(Error::InvalidConfig(format!("non-finite score for frame {}", f.frame_id)));
    }
    let n_fake = frames.iter().filter(|f| f.label == Label::Fake).count();
    let n_real = frames.len() - n_fake;
    if n_real == 0 || n_fake == 0 {
        return Err(Error::SingleClass { n_real, n_fake });
    }
    Ok((n_real, n_fake))
}

/// Score-sorted groups of tied frames: `(score, reals, fakes)`, ascending.
fn tie_groups(frames: &[ScoredFrame]) -> Vec<(f64, usize, usize)> {
    let mut sorted: Vec<(f64, Label)> = frames.iter().map(|f| (f.score, f.label)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for (s, l) in sorted {
        match groups.last_mut() {
            Some(g) if g.0 == s => {}
            _ => groups.push((s, 0, 0)),
        }
        let g = groups.last_mut().expect("just pushed");
        match l {
            Label::Real => g.1 += 1,
            Label::Fake => g.2 += 1,
        }
    }
    groups
}

/// Frame-level ROC with fakes as the positive class. AUC is the
/// Mann-Whitney statistic with average ranks for ties; the curve has one
/// point per distinct score.
pub fn roc_auc(frames: &[ScoredFrame]) -> Result<RocReport> {
    let (n_real, n_fake) = check_scores(frames)?;
    let groups = tie_groups(frames);

    let mut rank_sum_fake = 0.0f64;
    let mut below = 0usize;
    for &(_, r, f) in &groups {
        let size = r + f;
        // ranks below+1 ..= below+size, averaged
        let avg_rank = below as f64 + (size as f64 + 1.0) / 2.0;
        rank_sum_fake += avg_rank * f as f64;
        below += size;
    }
    let (nr, nf) = (n_real as f64, n_fake as f64);
    let auc = (rank_sum_fake - nf * (nf + 1.0) / 2.0) / (nr * nf);

    let mut curve = vec![(0.0, 0.0)];
    let (mut fp, mut tp) = (0usize, 0usize);
    for &(_, r, f) in groups.iter().rev() {
        fp += r;
        tp += f;
        curve.push((fp as f64 / nr, tp as f64 / nf));
    }
    Ok(RocReport {
        auc,
        curve,
        n_real,
        n_fake,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// Fraction of correctly decided frames per video, by video id.
    pub per_video: BTreeMap<String, f64>,
    /// Unweighted mean over videos.
    pub overall: f64,
}

/// Thresholded accuracy averaged over videos rather than frames.
pub fn accuracy_at_threshold(frames: &[ScoredFrame], tau: f64) -> Result<AccuracyReport> {
    if frames.is_empty() {
        return Err(Error::InvalidConfig("no frames to score".into()));
    }
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for f in frames {
        let predicted = Decision::from_distance(f.score, tau);
        let correct = matches!(
            (predicted, f.label),
            (Decision::Real, Label::Real) | (Decision::Fake, Label::Fake)
        );
        let t = tally.entry(f.video_id.clone()).or_default();
        t.0 += usize::from(correct);
        t.1 += 1;
    }
    let per_video: BTreeMap<String, f64> = tally
        .into_iter()
        .map(|(v, (c, n))| (v, c as f64 / n as f64))
        .collect();
    let overall = per_video.values().sum::<f64>() / per_video.len() as f64;
    Ok(AccuracyReport { per_video, overall })
}

/// Threshold maximizing Youden's J over the observed scores, for the
/// decision `fake <=> score > tau`. Ties go to the smallest threshold.
pub fn calibrate_threshold(frames: &[ScoredFrame]) -> Result<f64> {
    let (n_real, n_fake) = check_scores(frames)?;
    let groups = tie_groups(frames);
    // sweeping up: frames at or below tau are called real
    let (mut real_at_or_below, mut fake_at_or_below) = (0usize, 0usize);
    let mut best = (f64::NEG_INFINITY, groups[0].0);
    for &(s, r, f) in &groups {
        real_at_or_below += r;
        fake_at_or_below += f;
        let tpr = (n_fake - fake_at_or_below) as f64 / n_fake as f64;
        let fpr = (n_real - real_at_or_below) as f64 / n_real as f64;
        let j = tpr - fpr;
        if j > best.0 {
            best = (j, s);
        }
    }
    Ok(best.1)
}

/// `fpr,tpr` rows with the orientation note as a comment header.
pub fn roc_csv(report: &RocReport) -> String {
    let mut out = format!("# {SCORE_ORIENTATION}\n# auc={}\nfpr,tpr\n", report.auc);
    for (fpr, tpr) in &report.curve {
        let _ = writeln!(out, "{fpr},{tpr}");
    }
    out
}

/// Standalone SVG line plot of the curve.
pub fn roc_svg(report: &RocReport, title: &str) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 50.0;
    let x = |v: f64| PAD + v * SIZE;
    let y = |v: f64| PAD + (1.0 - v) * SIZE;
    let points: Vec<String> = report
        .curve
        .iter()
        .map(|&(f, t)| format!("{:.2},{:.2}", x(f), y(t)))
        .collect();
    let total = SIZE + 2.0 * PAD;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{total}\" height=\"{total}\" viewBox=\"0 0 {total} {total}\">\n"
    );
    let _ = writeln!(svg, "<desc>{}</desc>", escape(SCORE_ORIENTATION));
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{SIZE}\" height=\"{SIZE}\" fill=\"none\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"gray\" stroke-dasharray=\"4\"/>",
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    let _ = writeln!(
        svg,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"crimson\" stroke-width=\"2\"/>",
        points.join(" ")
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"30\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{} (AUC {:.4})</text>",
        total / 2.0,
        escape(title),
        report.auc
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">false positive rate</text>",
        total / 2.0,
        total - 15.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"15\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 15 {})\">true positive rate</text>",
        total / 2.0,
        total / 2.0
    );
    svg.push_str("</svg>\n");
    svg
}

pub(crate) fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn frames(labels: &[Label], scores: &[f64]) -> Vec<ScoredFrame> {
        labels
            .iter()
            .zip(scores)
            .enumerate()
            .map(|(i, (&label, &score))| ScoredFrame {
                frame_id: format!("f{i}"),
                identity: "a".into(),
                video_id: format!("v{}", i / 2),
                label,
                score,
            })
            .collect()
    }

    use Label::{Fake as F, Real as R};

    #[test]
    fn auc_examples() {
        let perfect = roc_auc(&frames(&[R, R, F, F], &[0.1, 0.2, 0.8, 0.9])).unwrap();
        assert_eq!(perfect.auc, 1.0);
        let flat = roc_auc(&frames(&[R, F, R, F], &[0.5; 4])).unwrap();
        assert_eq!(flat.auc, 0.5);
        // wins 0.8>0.6, 0.8>0.2, 0.4>0.2; loss 0.4<0.6
        let mixed = roc_auc(&frames(&[F, F, R, R], &[0.8, 0.4, 0.6, 0.2])).unwrap();
        assert_eq!(mixed.auc, 0.75);
    }

    #[test]
    fn curve_endpoints() {
        let r = roc_auc(&frames(&[F, F, R, R], &[0.8, 0.4, 0.6, 0.2])).unwrap();
        assert_eq!(r.curve, vec![(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]);
        assert_eq!((r.n_real, r.n_fake), (2, 2));
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(
            roc_auc(&frames(&[R, R], &[0.1, 0.2])),
            Err(Error::SingleClass { n_real: 2, n_fake: 0 })
        ));
        assert!(matches!(calibrate_threshold(&frames(&[F], &[0.1])), Err(Error::SingleClass { .. })));
    }

    #[test]
    fn non_finite_scores_are_rejected() {
        assert!(roc_auc(&frames(&[R, F], &[0.1, f64::NAN])).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let all_real = frames(&[R, R, R], &[0.0; 3]);
        assert_eq!(accuracy_at_threshold(&all_real, 0.3).unwrap().overall, 1.0);
        // video v0 fully right, video v1 half right
        let f = frames(&[R, F, R, F], &[0.1, 0.9, 0.9, 0.9]);
        let acc = accuracy_at_threshold(&f, 0.5).unwrap();
        assert_eq!(acc.per_video["v0"], 1.0);
        assert_eq!(acc.per_video["v1"], 0.5);
        assert_eq!(acc.overall, 0.75);
    }

    #[test]
    fn threshold_examples() {
        let f = frames(&[R, R, F, F], &[0.1, 0.2, 0.8, 0.9]);
        assert_eq!(calibrate_threshold(&f).unwrap(), 0.2);
        let flat = frames(&[R, F, R], &[0.4; 3]);
        assert_eq!(calibrate_threshold(&flat).unwrap(), 0.4);
    }

    /// Youden's J at every candidate, by direct counting.
    #[test]
    fn threshold_matches_exhaustive_sweep() {
        let f = frames(&[R, F, R, F, R, F, F, R], &[0.3, 0.35, 0.5, 0.5, 0.1, 0.7, 0.2, 0.6]);
        let j = |tau: f64| {
            let tp = f.iter().filter(|x| x.label == F && x.score > tau).count() as f64 / 4.0;
            let fp = f.iter().filter(|x| x.label == R && x.score > tau).count() as f64 / 4.0;
            tp - fp
        };
        let mut cands: Vec<f64> = f.iter().map(|x| x.score).collect();
        cands.sort_by(f64::total_cmp);
        let best = cands.iter().map(|&t| j(t)).fold(f64::NEG_INFINITY, f64::max);
        let expected = cands.into_iter().find(|&t| j(t) == best).unwrap();
        assert_eq!(calibrate_threshold(&f).unwrap(), expected);
    }

    #[test]
    fn csv_and_svg_mention_orientation() {
        let r = roc_auc(&frames(&[R, F], &[0.1, 0.9])).unwrap();
        let csv = roc_csv(&r);
        assert!(csv.starts_with("# score = cosine distance"));
        assert!(csv.contains("fpr,tpr\n0,0\n"));
        let svg = roc_svg(&r, "a < b");
        assert!(svg.contains("<polyline") && svg.contains("a &lt; b"));
    }
}
