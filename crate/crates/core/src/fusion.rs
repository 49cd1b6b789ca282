//! Prior-weighted logistic-regression calibration and linear score fusion.
//!
//! A model maps the scores `s` of one or more systems on a trial to the
//! log-likelihood ratio `w.s + b`. Training minimizes
//!
//! ```text
//! P/Nt * sum_tar softplus(-(w.s + b + logit P)) + (1-P)/Nn * sum_non softplus(w.s + b + logit P)
//! ```
//!
//! where `P` is the effective prior of the target operating point. Fusing a
//! single system is calibration.

use std::path::Path;

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::metrics::DcfParams;
use crate::scalar::Scalar;
use crate::store::{Label, ScoreSet};

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel<T> {
    pub weights: Vec<T>,
    pub bias: T,
    pub effective_prior: T,
}

/// Optimizer settings for [`fit_fusion`].
#[derive(Debug, Clone, Copy)]
pub struct FusionTrainer {
    /// Optional L2 penalty on the weights (not the bias).
    pub l2: f64,
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    /// Weight-norm cap applied when the classes are separable and the optimum is at infinity.
    pub max_weight_norm: f64,
}

impl Default for FusionTrainer {
    fn default() -> Self {
        FusionTrainer {
            l2: 0.0,
            gradient_tolerance: 1e-8,
            max_iterations: 200,
            max_weight_norm: 1e3,
        }
    }
}

/// Labeled design matrix: one row per trial, one column per system.
struct Problem<T: Scalar> {
    rows: Vec<Vec<T>>,
    is_target: Vec<bool>,
    tar_weight: T,
    non_weight: T,
    offset: T,
    l2: T,
}

impl<T: Scalar> Problem<T> {
    fn margin(&self, theta: &DVector<T>, row: &[T]) -> T {
        let k = row.len();
        let mut z = theta[k] + self.offset;
        for (j, &s) in row.iter().enumerate() {
            z += theta[j] * s;
        }
        z
    }

    fn objective(&self, theta: &DVector<T>) -> T {
        let k = theta.len() - 1;
        let mut c = T::zero();
        for (row, &tar) in self.rows.iter().zip(&self.is_target) {
            let z = self.margin(theta, row);
            c += if tar {
                self.tar_weight * (-z).softplus()
            } else {
                self.non_weight * z.softplus()
            };
        }
        let w2 = theta.rows(0, k).norm_squared();
        c + T::lit(0.5) * self.l2 * w2
    }

    fn gradient_hessian(&self, theta: &DVector<T>) -> (DVector<T>, DMatrix<T>) {
        let k = theta.len() - 1;
        let mut g = DVector::zeros(k + 1);
        let mut h = DMatrix::zeros(k + 1, k + 1);
        let mut x = DVector::zeros(k + 1);
        x[k] = T::one();
        for (row, &tar) in self.rows.iter().zip(&self.is_target) {
            for (j, &s) in row.iter().enumerate() {
                x[j] = s;
            }
            let z = self.margin(theta, row);
            let p = z.logistic();
            let (dz, wt) = if tar {
                (-self.tar_weight * (T::one() - p), self.tar_weight)
            } else {
                (self.non_weight * p, self.non_weight)
            };
            g.axpy(dz, &x, T::one());
            h.ger(wt * p * (T::one() - p), &x, &x, T::one());
        }
        for j in 0..k {
            g[j] += self.l2 * theta[j];
            h[(j, j)] += self.l2;
        }
        (g, h)
    }
}

fn check_aligned<T: Scalar>(systems: &[ScoreSet<T>]) -> Result<()> {
    let first = systems.first().ok_or(Error::Empty("systems to fuse"))?;
    for (i, s) in systems.iter().enumerate().skip(1) {
        if !first.aligned_with(s) {
            return Err(Error::Misaligned(format!("system {} lists different trials than system 0", i)));
        }
    }
    Ok(())
}

impl FusionTrainer {
    pub fn fit<T: Scalar>(&self, systems: &[ScoreSet<T>], params: &DcfParams<T>) -> Result<FusionModel<T>> {
        let k = systems.len();
        self.fit_from(systems, params, &vec![T::zero(); k], T::zero())
    }

    /// Runs the optimizer from the given starting weights and bias.
    pub fn fit_from<T: Scalar>(
        &self,
        systems: &[ScoreSet<T>],
        params: &DcfParams<T>,
        start_weights: &[T],
        start_bias: T,
    ) -> Result<FusionModel<T>> {
        params.validate()?;
        check_aligned(systems)?;
        let k = systems.len();
        if start_weights.len() != k {
            return Err(Error::Misaligned(format!("{} start weights for {k} systems", start_weights.len())));
        }
        let first = &systems[0];
        if !first.is_labeled() {
            return Err(Error::Unlabeled);
        }
        for s in &systems[1..] {
            if s.entries().iter().zip(first.entries()).any(|(a, b)| a.label.is_some() && a.label != b.label) {
                return Err(Error::Misaligned("systems disagree on trial labels".into()));
            }
        }
        let is_target: Vec<bool> = first.entries().iter().map(|e| e.label == Some(Label::Target)).collect();
        let n_tar = is_target.iter().filter(|&&t| t).count();
        let n_non = is_target.len() - n_tar;
        if n_tar == 0 || n_non == 0 {
            return Err(Error::InsufficientLabels { targets: n_tar, nontargets: n_non });
        }
        let prior = params.effective_prior();
        let rows = (0..first.len())
            .map(|i| systems.iter().map(|s| s.entries()[i].score).collect())
            .collect();
        let problem = Problem {
            rows,
            is_target,
            tar_weight: prior / T::from_count(n_tar),
            non_weight: (T::one() - prior) / T::from_count(n_non),
            offset: (prior / (T::one() - prior)).ln(),
            l2: T::lit(self.l2),
        };

        let mut theta = DVector::from_iterator(k + 1, start_weights.iter().copied().chain([start_bias]));
        let mut value = problem.objective(&theta);
        let cap = T::lit(self.max_weight_norm);
        for _ in 0..self.max_iterations {
            let (g, h) = problem.gradient_hessian(&theta);
            if g.norm() < T::lit(self.gradient_tolerance) {
                break;
            }
            let dir = newton_direction(&g, h);
            let slope = g.dot(&dir);
            let mut step = T::one();
            let mut improved = false;
            while step > T::lit(1e-20) {
                let cand = &theta + &dir * step;
                let v = problem.objective(&cand);
                if v <= value + T::lit(1e-4) * step * slope {
                    theta = cand;
                    value = v;
                    improved = true;
                    break;
                }
                step *= T::lit(0.5);
            }
            if !improved {
                break;
            }
            let wn = theta.rows(0, k).norm();
            if wn > cap {
                warn!("fusion weights diverge (scores look separable); capping weight norm at {cap}");
                let scale = cap / wn;
                for j in 0..k {
                    theta[j] *= scale;
                }
                break;
            }
        }
        Ok(FusionModel {
            weights: theta.rows(0, k).iter().copied().collect(),
            bias: theta[k],
            effective_prior: prior,
        })
    }
}

/// Newton step, falling back to a ridge-regularized Hessian and finally to
/// steepest descent when the Hessian is not positive definite.
fn newton_direction<T: Scalar>(g: &DVector<T>, h: DMatrix<T>) -> DVector<T> {
    let n = g.len();
    let scale = h.diagonal().amax().max(T::lit(1e-300));
    let mut ridge = T::zero();
    for _ in 0..12 {
        let mut m = h.clone();
        for i in 0..n {
            m[(i, i)] += ridge;
        }
        if let Some(c) = Cholesky::new(m) {
            let d = -c.solve(g);
            if d.iter().all(|v| v.is_finite()) {
                return d;
            }
        }
        ridge = if ridge == T::zero() { scale * T::lit(1e-12) } else { ridge * T::lit(100.0) };
    }
    -g.clone()
}

/// Fits the fusion weights on labeled development scores with the default optimizer.
pub fn fit_fusion<T: Scalar>(systems: &[ScoreSet<T>], params: &DcfParams<T>) -> Result<FusionModel<T>> {
    FusionTrainer::default().fit(systems, params)
}

/// Fused log-likelihood ratios `w.s + b` over aligned system scores.
pub fn apply_fusion<T: Scalar>(model: &FusionModel<T>, systems: &[ScoreSet<T>]) -> Result<ScoreSet<T>> {
    model.apply(systems)
}

impl<T: Scalar> FusionModel<T> {
    pub fn apply(&self, systems: &[ScoreSet<T>]) -> Result<ScoreSet<T>> {
        if systems.len() != self.weights.len() {
            return Err(Error::Misaligned(format!(
                "model fuses {} systems, got {}",
                self.weights.len(),
                systems.len()
            )));
        }
        check_aligned(systems)?;
        let fused = (0..systems[0].len())
            .map(|i| {
                let mut z = self.bias;
                for (w, s) in self.weights.iter().zip(systems) {
                    z += *w * s.entries()[i].score;
                }
                z
            })
            .collect();
        systems[0].with_scores(fused)
    }

    /// Value of the training objective on labeled scores (no L2 term).
    pub fn objective(&self, systems: &[ScoreSet<T>]) -> Result<T> {
        let fused = self.apply(systems)?;
        let (tar, non) = fused.split()?;
        let p = self.effective_prior;
        let offset = (p / (T::one() - p)).ln();
        let t: T = tar.iter().fold(T::zero(), |a, &s| a + (-(s + offset)).softplus());
        let n: T = non.iter().fold(T::zero(), |a, &s| a + (s + offset).softplus());
        Ok(p * t / T::from_count(tar.len()) + (T::one() - p) * n / T::from_count(non.len()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let mut c = Checkpoint::new("fusion");
        c.push("weights", self.weights.len(), 1, self.weights.clone());
        c.push_scalar("bias", self.bias);
        c.push_scalar("effective_prior", self.effective_prior);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint<T>) -> Result<Self> {
        c.expect_kind("fusion")?;
        let w = c.get("weights")?;
        Ok(FusionModel {
            weights: c.get_shaped("weights", w.rows, 1)?.to_vec(),
            bias: c.get_scalar("bias")?,
            effective_prior: c.get_scalar("effective_prior")?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
