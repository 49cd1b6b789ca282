use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Scalar};
use crate::vfnet::{cosine_similarity, pair_probability, VfNetParams};

/// Keeps the top `fraction` of a test segment's per-face scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolingRule<T> {
    fraction: T,
}

impl<T: Scalar> Default for PoolingRule<T> {
    fn default() -> Self {
        PoolingRule { fraction: T::lit(0.2) }
    }
}

impl<T: Scalar> PoolingRule<T> {
    pub fn new(fraction: T) -> Result<Self> {
        if !(fraction > T::zero() && fraction <= T::one()) {
            return Err(Error::Config(format!("pooling fraction {fraction} outside (0, 1]")));
        }
        Ok(PoolingRule { fraction })
    }

    pub fn fraction(&self) -> T {
        self.fraction
    }

    /// `max(1, ceil(fraction * n))`. Products within a relative 1e-9 of an
    /// integer count as that integer, so 0.2 * 35 keeps 7 scores rather than 8.
    pub fn count(&self, n: usize) -> usize {
        let x = self.fraction.to_f64_lossy() * n as f64;
        let k = (x - 1e-9 * x.max(1.0)).ceil() as usize;
        k.clamp(1, n.max(1))
    }
}

/// Mean of the `rule.count(n)` largest scores.
pub fn pool_top_fraction<T: Scalar>(scores: &[T], rule: &PoolingRule<T>) -> Result<T> {
    if scores.is_empty() {
        return Err(Error::Empty("scores to pool"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let k = rule.count(sorted.len());
    let sum = sorted[..k].iter().fold(T::zero(), |acc, &s| acc + s);
    Ok(sum / T::from_count(k))
}

/// Cosine between the length-normalized mean enrollment face and each test
/// face, pooled over the test faces.
pub fn score_face_trial<T: Scalar>(
    enroll_faces: &[&[T]],
    test_faces: &[&[T]],
    rule: &PoolingRule<T>,
) -> Result<T> {
    let first = enroll_faces.first().ok_or(Error::Empty("enrollment faces"))?;
    if test_faces.is_empty() {
        return Err(Error::Empty("test faces"));
    }
    let mut template = vec![T::zero(); first.len()];
    for f in enroll_faces {
        if f.len() != template.len() {
            return Err(Error::DimensionMismatch {
                context: "enrollment face",
                expected: template.len(),
                found: f.len(),
            });
        }
        for (t, &x) in template.iter_mut().zip(f.iter()) {
            *t += x;
        }
    }
    let n = norm(&template);
    if n == T::zero() {
        return Err(Error::ZeroNorm("enrollment face template"));
    }
    template.iter_mut().for_each(|t| *t /= n);
    let scores = test_faces
        .iter()
        .map(|f| {
            if f.len() != template.len() {
                return Err(Error::DimensionMismatch {
                    context: "test face",
                    expected: template.len(),
                    found: f.len(),
                });
            }
            let nf = norm(f);
            if nf == T::zero() {
                return Err(Error::ZeroNorm("test face"));
            }
            Ok((dot(&template, f) / nf).clamp(-T::one(), T::one()))
        })
        .collect::<Result<Vec<T>>>()?;
    pool_top_fraction(&scores, rule)
}

/// Network same-person probability of the enrollment voice against each test
/// face, pooled over the test faces.
pub fn score_vfnet_trial<T: Scalar>(
    params: &VfNetParams<T>,
    enroll_voice: &[T],
    test_faces: &[&[T]],
    rule: &PoolingRule<T>,
) -> Result<T> {
    if test_faces.is_empty() {
        return Err(Error::Empty("test faces"));
    }
    let tv = params.transform_voice(enroll_voice)?;
    let scores = test_faces
        .iter()
        .map(|f| {
            let tf = params.transform_face(f)?;
            Ok(pair_probability(cosine_similarity(&tv, &tf)?).p_same)
        })
        .collect::<Result<Vec<T>>>()?;
    pool_top_fraction(&scores, rule)
}
