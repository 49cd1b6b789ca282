//! Two-covariance PLDA: identity means `y ~ N(mu, B)`, observations `x ~ N(y, W)`.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel<T: Scalar> {
    pub mu: DVector<T>,
    /// Between-identity covariance `B`.
    pub between: DMatrix<T>,
    /// Within-identity covariance `W`.
    pub within: DMatrix<T>,
    // llr = 1/2 (a'Qa + b'Qb) + a'Pb + offset, with a, b centered by mu
    q: DMatrix<T>,
    p: DMatrix<T>,
    offset: T,
}

fn symmetric_within<T: Scalar>(m: &DMatrix<T>, name: &str) -> Result<()> {
    let scale = m.amax().max(T::one());
    let asym = (m - m.transpose()).amax();
    if asym > T::lit(1e-10) * scale {
        return Err(Error::Config(format!("PLDA {name} covariance is not symmetric")));
    }
    Ok(())
}

fn chol<T: Scalar>(m: DMatrix<T>, what: &str) -> Result<Cholesky<T, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::Config(format!("{what} is not positive definite")))
}

fn log_det<T: Scalar>(c: &Cholesky<T, Dyn>) -> T {
    c.l_dirty().diagonal().iter().map(|d| d.ln()).fold(T::zero(), |a, b| a + b) * T::lit(2.0)
}

impl<T: Scalar> PldaModel<T> {
    pub fn new(mu: DVector<T>, between: DMatrix<T>, within: DMatrix<T>) -> Result<Self> {
        let d = mu.len();
        if between.shape() != (d, d) || within.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                context: "PLDA covariance",
                expected: d,
                found: between.nrows().max(within.nrows()),
            });
        }
        symmetric_within(&between, "between")?;
        symmetric_within(&within, "within")?;
        let min_b = SymmetricEigen::new(between.clone()).eigenvalues.min();
        if min_b < -T::lit(1e-10) * between.amax().max(T::one()) {
            return Err(Error::Config("PLDA between covariance is not positive semidefinite".into()));
        }
        let w_chol = chol(within.clone(), "PLDA within covariance")?;
        let total = &between + &within;
        let t_chol = chol(total, "PLDA total covariance")?;
        let s_chol = chol(&within + &between * T::lit(2.0), "PLDA W + 2B")?;

        let t_inv = t_chol.inverse();
        let s1 = s_chol.inverse();
        let s2 = w_chol.inverse();
        let half = T::lit(0.5);
        let a = (&s1 + &s2) * half;
        let g = (&s1 - &s2) * half;
        let q = &t_inv - a;
        let p = -g;
        let offset = half * (log_det(&t_chol) * T::lit(2.0) - log_det(&s_chol) - log_det(&w_chol));
        Ok(PldaModel {
            mu,
            between,
            within,
            q,
            p,
            offset,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Log-likelihood ratio of "same identity" against "different identities".
    pub fn llr(&self, e1: &[T], e2: &[T]) -> Result<T> {
        for e in [e1, e2] {
            if e.len() != self.dim() {
                return Err(Error::DimensionMismatch {
                    context: "PLDA input",
                    expected: self.dim(),
                    found: e.len(),
                });
            }
        }
        let a = DVector::from_column_slice(e1) - &self.mu;
        let b = DVector::from_column_slice(e2) - &self.mu;
        let qa = a.dot(&(&self.q * &a));
        let qb = b.dot(&(&self.q * &b));
        let pab = a.dot(&(&self.p * &b));
        Ok(T::lit(0.5) * (qa + qb) + pab + self.offset)
    }

    pub(crate) fn write_into(&self, c: &mut Checkpoint<T>) {
        let d = self.dim();
        c.push("plda.mu", d, 1, self.mu.as_slice().to_vec());
        c.push("plda.between", d, d, self.between.transpose().as_slice().to_vec());
        c.push("plda.within", d, d, self.within.transpose().as_slice().to_vec());
    }

    pub(crate) fn read_from(c: &Checkpoint<T>) -> Result<Self> {
        let mu = c.get("plda.mu")?;
        let d = mu.rows;
        let mu = DVector::from_column_slice(c.get_shaped("plda.mu", d, 1)?);
        let b = DMatrix::from_row_slice(d, d, c.get_shaped("plda.between", d, d)?);
        let w = DMatrix::from_row_slice(d, d, c.get_shaped("plda.within", d, d)?);
        PldaModel::new(mu, b, w)
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let mut c = Checkpoint::new("plda");
        self.write_into(&mut c);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint<T>) -> Result<Self> {
        c.expect_kind("plda")?;
        Self::read_from(c)
    }
}

pub fn plda_llr<T: Scalar>(model: &PldaModel<T>, e1: &[T], e2: &[T]) -> Result<T> {
    model.llr(e1, e2)
}

/// EM stopping rule and covariance floor.
#[derive(Debug, Clone, Copy)]
pub struct PldaTrainer {
    pub max_iterations: usize,
    /// Stop once the per-observation log-likelihood gains less than this.
    pub tolerance: f64,
    pub eigenvalue_floor: f64,
}

impl Default for PldaTrainer {
    fn default() -> Self {
        PldaTrainer {
            max_iterations: 100,
            tolerance: 1e-6,
            eigenvalue_floor: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PldaFit<T: Scalar> {
    pub model: PldaModel<T>,
    /// Mean log-likelihood per observation: the initial value, then one entry per EM iteration.
    pub log_likelihood: Vec<T>,
}

struct Speaker<T: Scalar> {
    n: usize,
    sum: DVector<T>,
}

struct Stats<T: Scalar> {
    speakers: Vec<Speaker<T>>,
    total: usize,
    dim: usize,
    within_scatter: DMatrix<T>,
}

impl<T: Scalar> Stats<T> {
    fn new(classes: &[Vec<DVector<T>>]) -> Self {
        let dim = classes[0][0].len();
        let mut within_scatter = DMatrix::zeros(dim, dim);
        let speakers: Vec<Speaker<T>> = classes
            .iter()
            .map(|c| {
                let mut sum = DVector::zeros(dim);
                for x in c {
                    sum += x;
                }
                let mean = &sum / T::from_count(c.len());
                for x in c {
                    let d = x - &mean;
                    within_scatter.ger(T::one(), &d, &d, T::one());
                }
                Speaker { n: c.len(), sum }
            })
            .collect();
        let total = classes.iter().map(Vec::len).sum();
        Stats { speakers, total, dim, within_scatter }
    }

    fn session_counts(&self) -> Vec<usize> {
        let mut ns: Vec<usize> = self.speakers.iter().map(|s| s.n).collect();
        ns.sort_unstable();
        ns.dedup();
        ns
    }

    /// Mean marginal log-likelihood per observation.
    fn log_likelihood(&self, mu: &DVector<T>, b: &DMatrix<T>, w: &DMatrix<T>) -> Result<T> {
        let d = T::from_count(self.dim);
        let half = T::lit(0.5);
        let ln2pi = T::lit(LN_2PI);
        let w_chol = chol(w.clone(), "PLDA within covariance")?;
        let w_logdet = log_det(&w_chol);
        let w_inv = w_chol.inverse();
        let mut ll = -half * (w_inv.component_mul(&self.within_scatter)).sum();

        let mut per_n = BTreeMap::new();
        for n in self.session_counts() {
            let cov = b + w / T::from_count(n);
            let c = chol(cov, "PLDA marginal covariance")?;
            let logdet = log_det(&c);
            per_n.insert(n, (c, logdet));
        }
        for s in &self.speakers {
            let n = T::from_count(s.n);
            let (c, logdet) = &per_n[&s.n];
            let diff = &s.sum / n - mu;
            let sol = c.solve(&diff);
            ll += -half * (n - T::one()) * (d * ln2pi + w_logdet) - half * d * n.ln()
                - half * (d * ln2pi + *logdet + diff.dot(&sol));
        }
        Ok(ll / T::from_count(self.total))
    }
}

fn floor_covariance<T: Scalar>(m: DMatrix<T>, floor: T, name: &str) -> DMatrix<T> {
    let m = (&m + m.transpose()) * T::lit(0.5);
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.min() >= floor {
        return m;
    }
    warn!("PLDA {name} covariance collapsed, flooring eigenvalues at {floor}");
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    (&out + out.transpose()) * T::lit(0.5)
}

impl PldaTrainer {
    /// EM on vectors grouped by identity.
    pub fn fit_classes<T: Scalar>(&self, classes: &[Vec<DVector<T>>]) -> Result<PldaFit<T>> {
        if classes.len() < 2 {
            return Err(Error::InsufficientData("PLDA needs at least two identities".into()));
        }
        if classes.iter().any(Vec::is_empty) {
            return Err(Error::InsufficientData("PLDA identity without sessions".into()));
        }
        let stats = Stats::new(classes);
        let dim = stats.dim;
        let floor = T::lit(self.eigenvalue_floor);
        let n_total = T::from_count(stats.total);
        let n_spk = T::from_count(stats.speakers.len());

        let mut mu = DVector::zeros(dim);
        for s in &stats.speakers {
            mu += &s.sum;
        }
        mu /= n_total;
        let mut means_cov = DMatrix::zeros(dim, dim);
        let mut total_cov = stats.within_scatter.clone();
        for s in &stats.speakers {
            let dm = &s.sum / T::from_count(s.n) - &mu;
            means_cov.ger(T::one(), &dm, &dm, T::one());
            total_cov.ger(T::from_count(s.n), &dm, &dm, T::one());
        }
        means_cov /= n_spk;
        total_cov /= n_total;
        let mut w = if stats.total > stats.speakers.len() {
            stats.within_scatter.clone() / n_total
        } else {
            &total_cov * T::lit(0.5)
        };
        let mut b = if stats.total > stats.speakers.len() {
            means_cov
        } else {
            &total_cov * T::lit(0.5)
        };
        w = floor_covariance(w, floor, "within");
        b = floor_covariance(b, floor, "between");

        let mut history = vec![stats.log_likelihood(&mu, &b, &w)?];
        for _ in 0..self.max_iterations {
            // E-step: posterior of each identity variable; covariance depends only on n
            let b_inv = chol(b.clone(), "PLDA between covariance")?.inverse();
            let w_inv = chol(w.clone(), "PLDA within covariance")?.inverse();
            let prior_term = &b_inv * &mu;
            let mut post_cov = BTreeMap::new();
            for n in stats.session_counts() {
                let prec = &b_inv + &w_inv * T::from_count(n);
                post_cov.insert(n, chol(prec, "PLDA posterior precision")?.inverse());
            }

            // M-step
            let mut mu_acc = DVector::zeros(dim);
            let mut yy = DMatrix::zeros(dim, dim);
            let mut w_acc = stats.within_scatter.clone();
            for s in &stats.speakers {
                let cov = &post_cov[&s.n];
                let y = cov * (&prior_term + &w_inv * &s.sum);
                let n = T::from_count(s.n);
                let xbar = &s.sum / n;
                // sum_j (x_j - y)(x_j - y)' = scatter + n (xbar - y)(xbar - y)'
                let dy = &xbar - &y;
                w_acc.ger(n, &dy, &dy, T::one());
                w_acc += cov * n;
                yy += cov;
                yy.ger(T::one(), &y, &y, T::one());
                mu_acc += y;
            }
            mu = mu_acc / n_spk;
            let mut b_new = yy / n_spk;
            b_new.ger(-T::one(), &mu, &mu, T::one());
            b = floor_covariance(b_new, floor, "between");
            w = floor_covariance(w_acc / n_total, floor, "within");

            let ll = stats.log_likelihood(&mu, &b, &w)?;
            let gain = ll - *history.last().expect("history starts non-empty");
            history.push(ll);
            if gain < T::lit(self.tolerance) {
                break;
            }
        }
        Ok(PldaFit {
            model: PldaModel::new(mu, b, w)?,
            log_likelihood: history,
        })
    }
}

/// Two-covariance PLDA fitted by EM with the default stopping rule.
pub fn fit_plda<T: Scalar>(classes: &[Vec<DVector<T>>]) -> Result<PldaFit<T>> {
    PldaTrainer::default().fit_classes(classes)
}
