use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::store::{EmbeddingStore, Modality};

/// Affine projection `x -> P (x - mean)` whose output has identity
/// within-class covariance on the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaTransform<T: Scalar> {
    /// `d x D`, rows ordered by decreasing between/within variance ratio.
    pub projection: DMatrix<T>,
    pub mean: DVector<T>,
}

/// Class means, global mean, and the within / between class covariances
/// (both normalized by the total sample count).
pub(crate) struct Scatter<T: Scalar> {
    pub mean: DVector<T>,
    pub within: DMatrix<T>,
    pub between: DMatrix<T>,
}

pub(crate) fn scatter<T: Scalar>(classes: &[Vec<DVector<T>>]) -> Scatter<T> {
    let dim = classes[0][0].len();
    let total: usize = classes.iter().map(Vec::len).sum();
    let n = T::from_count(total);
    let mut mean = DVector::zeros(dim);
    for x in classes.iter().flatten() {
        mean += x;
    }
    mean /= n;
    let mut within = DMatrix::zeros(dim, dim);
    let mut between = DMatrix::zeros(dim, dim);
    for class in classes {
        let mut m = DVector::zeros(dim);
        for x in class {
            m += x;
        }
        m /= T::from_count(class.len());
        for x in class {
            let d = x - &m;
            within.ger(T::one(), &d, &d, T::one());
        }
        let dm = &m - &mean;
        between.ger(T::from_count(class.len()), &dm, &dm, T::one());
    }
    within /= n;
    between /= n;
    Scatter { mean, within, between }
}

/// Symmetric inverse square root `U diag(s^-1/2) U^T`.
pub(crate) fn inv_sqrt<T: Scalar>(eig: &SymmetricEigen<T, nalgebra::Dyn>) -> DMatrix<T> {
    let d = eig.eigenvalues.map(|s| T::one() / s.sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

impl<T: Scalar> LdaTransform<T> {
    /// Fits on labeled vectors grouped by class.
    pub fn fit_classes(classes: &[Vec<DVector<T>>], target_dim: usize) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::InsufficientData("LDA needs at least two classes".into()));
        }
        if classes.iter().any(Vec::is_empty) {
            return Err(Error::InsufficientData("LDA class without samples".into()));
        }
        if classes.iter().all(|c| c.len() < 2) {
            return Err(Error::InsufficientData(
                "LDA needs at least one class with two or more samples".into(),
            ));
        }
        if target_dim == 0 {
            return Err(Error::Config("LDA target dimension must be positive".into()));
        }
        let dim = classes[0][0].len();
        let out_dim = target_dim.min(classes.len() - 1).min(dim);
        let Scatter { mean, mut within, between } = scatter(classes);

        let mut eig = SymmetricEigen::new(within.clone());
        let max_ev = eig.eigenvalues.max();
        let min_ev = eig.eigenvalues.min();
        if min_ev <= T::lit(1e-10) * max_ev.max(T::lit(1e-300)) {
            let lambda = T::lit(1e-4) * within.trace() / T::from_count(dim);
            let lambda = if lambda > T::zero() { lambda } else { T::lit(1e-4) };
            warn!("within-class scatter is singular, adding {lambda} to its diagonal");
            for i in 0..dim {
                within[(i, i)] += lambda;
            }
            eig = SymmetricEigen::new(within);
        }
        let whiten = inv_sqrt(&eig);
        let m = &whiten * between * &whiten;
        let m = (&m + m.transpose()) * T::lit(0.5);
        let e = SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| {
            e.eigenvalues[b]
                .partial_cmp(&e.eigenvalues[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut projection = DMatrix::zeros(out_dim, dim);
        for (r, &k) in order.iter().take(out_dim).enumerate() {
            let v = e.eigenvectors.column(k);
            // fix the sign so the largest-magnitude entry is positive
            let pivot = v.iter().fold(T::zero(), |acc, &x| if x.abs() > acc.abs() { x } else { acc });
            let sign = if pivot < T::zero() { -T::one() } else { T::one() };
            let row = (whiten.transpose() * v).transpose() * sign;
            projection.set_row(r, &row);
        }
        Ok(LdaTransform { projection, mean })
    }

    /// Fits on the voice records of a store, one class per identity.
    pub fn fit(store: &EmbeddingStore<T>, target_dim: usize) -> Result<Self> {
        let classes: Vec<Vec<DVector<T>>> = store
            .group_by_identity(Modality::Voice)
            .into_values()
            .map(|rs| rs.iter().map(|r| DVector::from_column_slice(&r.vector)).collect())
            .collect();
        Self::fit_classes(&classes, target_dim)
    }

    pub fn input_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn apply(&self, x: &[T]) -> Result<DVector<T>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "LDA input",
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(&self.projection * (DVector::from_column_slice(x) - &self.mean))
    }

    pub(crate) fn write_into(&self, c: &mut Checkpoint<T>) {
        let (d, dd) = self.projection.shape();
        c.push("lda.projection", d, dd, self.projection.transpose().as_slice().to_vec());
        c.push("lda.mean", dd, 1, self.mean.as_slice().to_vec());
    }

    pub(crate) fn read_from(c: &Checkpoint<T>) -> Result<Self> {
        let p = c.get("lda.projection")?;
        let projection = DMatrix::from_row_slice(p.rows, p.cols, &p.data);
        let mean = DVector::from_column_slice(c.get_shaped("lda.mean", p.cols, 1)?);
        Ok(LdaTransform { projection, mean })
    }
}

/// LDA fitted on the voice records of `store`.
pub fn fit_lda<T: Scalar>(store: &EmbeddingStore<T>, target_dim: usize) -> Result<LdaTransform<T>> {
    LdaTransform::fit(store, target_dim)
}
