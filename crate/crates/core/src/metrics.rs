//! Detection metrics (EER, AUC, minDCF, actDCF, ROC/DET points) and 1-of-2
//! matching accuracy.
//!
//! Every threshold decision in this module accepts a trial iff `score >= threshold`.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::store::ScoreSet;
use crate::vfnet::{match_one_of_two, match_voice_one_of_two, Choice, VfNetParams};

/// Operating prior and costs of the detection cost function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams<T> {
    pub p_target: T,
    pub c_miss: T,
    pub c_fa: T,
}

impl<T: Scalar> Default for DcfParams<T> {
    fn default() -> Self {
        DcfParams {
            p_target: T::lit(0.05),
            c_miss: T::one(),
            c_fa: T::one(),
        }
    }
}

impl<T: Scalar> DcfParams<T> {
    pub fn new(p_target: T, c_miss: T, c_fa: T) -> Result<Self> {
        let p = DcfParams { p_target, c_miss, c_fa };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.p_target > T::zero()
            && self.p_target < T::one()
            && self.c_miss > T::zero()
            && self.c_fa > T::zero()
            && self.c_miss.is_finite()
            && self.c_fa.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "DCF parameters need 0 < p_target < 1 and positive finite costs".into(),
            ))
        }
    }

    /// Prior that folds the costs in: `p c_miss / (p c_miss + (1 - p) c_fa)`.
    pub fn effective_prior(&self) -> T {
        let a = self.p_target * self.c_miss;
        a / (a + (T::one() - self.p_target) * self.c_fa)
    }

    /// Bayes decision threshold for calibrated log-likelihood ratios.
    pub fn bayes_threshold(&self) -> T {
        let p = self.effective_prior();
        ((T::one() - p) / p).ln()
    }

    fn cost(&self, p_miss: T, p_fa: T) -> T {
        let miss = self.c_miss * self.p_target;
        let fa = self.c_fa * (T::one() - self.p_target);
        (miss * p_miss + fa * p_fa) / miss.min(fa)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint<T> {
    pub threshold: T,
    pub p_miss: T,
    pub p_fa: T,
}

/// Target and nontarget scores, each sorted ascending.
#[derive(Debug, Clone)]
pub struct DetectionScores<T> {
    targets: Vec<T>,
    nontargets: Vec<T>,
}

fn total_cmp<T: Scalar>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

impl<T: Scalar> DetectionScores<T> {
    pub fn new(mut targets: Vec<T>, mut nontargets: Vec<T>) -> Result<Self> {
        if targets.is_empty() || nontargets.is_empty() {
            return Err(Error::InsufficientLabels {
                targets: targets.len(),
                nontargets: nontargets.len(),
            });
        }
        if targets.iter().chain(&nontargets).any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("detection score".into()));
        }
        targets.sort_by(total_cmp);
        nontargets.sort_by(total_cmp);
        Ok(DetectionScores { targets, nontargets })
    }

    pub fn from_score_set(scores: &ScoreSet<T>) -> Result<Self> {
        let (t, n) = scores.split()?;
        Self::new(t, n)
    }

    pub fn n_target(&self) -> usize {
        self.targets.len()
    }

    pub fn n_nontarget(&self) -> usize {
        self.nontargets.len()
    }

    /// Miss and false-alarm rates when accepting `score >= threshold`.
    pub fn rates_at(&self, threshold: T) -> (T, T) {
        let misses = self.targets.partition_point(|&s| s < threshold);
        let rejected = self.nontargets.partition_point(|&s| s < threshold);
        let fas = self.nontargets.len() - rejected;
        (
            T::from_count(misses) / T::from_count(self.targets.len()),
            T::from_count(fas) / T::from_count(self.nontargets.len()),
        )
    }

    /// One point per distinct score plus the accept-all and reject-all endpoints,
    /// in increasing threshold order.
    pub fn roc_points(&self) -> Vec<RocPoint<T>> {
        let mut thresholds: Vec<T> = self.targets.iter().chain(&self.nontargets).copied().collect();
        thresholds.sort_by(total_cmp);
        thresholds.dedup();
        let mut points = Vec::with_capacity(thresholds.len() + 2);
        points.push(RocPoint {
            threshold: -T::infinity(),
            p_miss: T::zero(),
            p_fa: T::one(),
        });
        for th in thresholds {
            let (p_miss, p_fa) = self.rates_at(th);
            points.push(RocPoint { threshold: th, p_miss, p_fa });
        }
        points.push(RocPoint {
            threshold: T::infinity(),
            p_miss: T::one(),
            p_fa: T::zero(),
        });
        points
    }

    /// Rate where the miss and false-alarm curves cross, interpolated linearly
    /// between the two operating points that bracket the crossing.
    pub fn eer(&self) -> T {
        let points = self.roc_points();
        let i = points
            .iter()
            .position(|p| p.p_miss >= p.p_fa)
            .expect("reject-all endpoint always has p_miss >= p_fa");
        if i == 0 || points[i].p_miss == points[i].p_fa {
            return points[i].p_miss;
        }
        let (a, b) = (points[i - 1], points[i]);
        let denom = (b.p_miss - a.p_miss) - (b.p_fa - a.p_fa);
        let t = (a.p_fa - a.p_miss) / denom;
        a.p_miss + t * (b.p_miss - a.p_miss)
    }

    /// Probability that a random target outscores a random nontarget, ties counting half.
    pub fn auc(&self) -> T {
        let mut twice_wins: u128 = 0;
        for &t in &self.targets {
            let below = self.nontargets.partition_point(|&n| n < t);
            let not_above = self.nontargets.partition_point(|&n| n <= t);
            twice_wins += (2 * below + (not_above - below)) as u128;
        }
        let pairs = 2 * self.targets.len() as u128 * self.nontargets.len() as u128;
        T::lit(twice_wins as f64 / pairs as f64)
    }

    /// Minimum normalized DCF over all operating points and the (lowest)
    /// threshold attaining it.
    pub fn min_dcf(&self, params: &DcfParams<T>) -> (T, T) {
        let mut best = (T::infinity(), T::infinity());
        for p in self.roc_points() {
            let c = params.cost(p.p_miss, p.p_fa);
            if c < best.0 {
                best = (c, p.threshold);
            }
        }
        best
    }

    /// Normalized DCF at the Bayes threshold, reading scores as calibrated llrs.
    pub fn act_dcf(&self, params: &DcfParams<T>) -> T {
        let (p_miss, p_fa) = self.rates_at(params.bayes_threshold());
        params.cost(p_miss, p_fa)
    }

    pub fn report(&self, params: &DcfParams<T>) -> MetricReport<T> {
        let (min_dcf, min_dcf_threshold) = self.min_dcf(params);
        MetricReport {
            eer: self.eer(),
            auc: self.auc(),
            min_dcf,
            min_dcf_threshold,
            act_dcf: self.act_dcf(params),
            act_dcf_threshold: params.bayes_threshold(),
            n_target: self.targets.len(),
            n_nontarget: self.nontargets.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport<T> {
    pub eer: T,
    pub auc: T,
    pub min_dcf: T,
    pub min_dcf_threshold: T,
    pub act_dcf: T,
    pub act_dcf_threshold: T,
    pub n_target: usize,
    pub n_nontarget: usize,
}

impl<T: Scalar> MetricReport<T> {
    pub const TSV_HEADER: &'static str =
        "eer\tauc\tmin_dcf\tact_dcf\tmin_dcf_threshold\tact_dcf_threshold\tn_target\tn_nontarget";

    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.eer,
            self.auc,
            self.min_dcf,
            self.act_dcf,
            self.min_dcf_threshold,
            self.act_dcf_threshold,
            self.n_target,
            self.n_nontarget
        )
    }
}

pub fn roc_points<T: Scalar>(scores: &ScoreSet<T>) -> Result<Vec<RocPoint<T>>> {
    Ok(DetectionScores::from_score_set(scores)?.roc_points())
}

pub fn eer<T: Scalar>(scores: &ScoreSet<T>) -> Result<T> {
    Ok(DetectionScores::from_score_set(scores)?.eer())
}

pub fn auc<T: Scalar>(scores: &ScoreSet<T>) -> Result<T> {
    Ok(DetectionScores::from_score_set(scores)?.auc())
}

pub fn min_dcf<T: Scalar>(scores: &ScoreSet<T>, params: &DcfParams<T>) -> Result<(T, T)> {
    Ok(DetectionScores::from_score_set(scores)?.min_dcf(params))
}

pub fn act_dcf<T: Scalar>(llr_scores: &ScoreSet<T>, params: &DcfParams<T>) -> Result<T> {
    Ok(DetectionScores::from_score_set(llr_scores)?.act_dcf(params))
}

pub fn evaluate<T: Scalar>(scores: &ScoreSet<T>, params: &DcfParams<T>) -> Result<MetricReport<T>> {
    Ok(DetectionScores::from_score_set(scores)?.report(params))
}

/// One probe and two candidates from the other modality; `same` shares the probe's identity.
#[derive(Debug, Clone, Copy)]
pub struct Triplet<'a, T> {
    pub probe: &'a [T],
    pub same: &'a [T],
    pub other: &'a [T],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchDirection {
    /// Voice probe, two candidate faces.
    VoiceToFace,
    /// Face probe, two candidate voices.
    FaceToVoice,
}

/// Fraction of triplets where the same-identity candidate (passed first) is picked.
pub fn matching_accuracy<T: Scalar>(
    params: &VfNetParams<T>,
    triplets: &[Triplet<'_, T>],
    direction: MatchDirection,
) -> Result<T> {
    if triplets.is_empty() {
        return Err(Error::Empty("matching triplets"));
    }
    let mut correct = 0usize;
    for t in triplets {
        let choice = match direction {
            MatchDirection::VoiceToFace => match_one_of_two(params, t.probe, t.same, t.other)?,
            MatchDirection::FaceToVoice => match_voice_one_of_two(params, t.probe, t.same, t.other)?,
        };
        if choice == Choice::First {
            correct += 1;
        }
    }
    Ok(T::from_count(correct) / T::from_count(triplets.len()))
}
