//! Single-modality scoring back-ends: LDA + PLDA for voices, cosine with
//! top-fraction pooling for faces, and pooled network scores for
//! enrollment-voice against test-faces trials.

mod lda;
mod plda;
mod pooling;

use std::path::Path;

use nalgebra::DVector;

use crate::checkpoint::Checkpoint;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::store::{EmbeddingStore, Modality};

pub use lda::{fit_lda, LdaTransform};
pub use plda::{fit_plda, plda_llr, PldaFit, PldaModel, PldaTrainer};
pub use pooling::{pool_top_fraction, score_face_trial, score_vfnet_trial, PoolingRule};

/// LDA projection, optional length normalization, then PLDA scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerBackend<T: Scalar> {
    pub lda: LdaTransform<T>,
    pub plda: PldaModel<T>,
    /// Rescale projected vectors to norm `sqrt(d)` before PLDA.
    pub length_norm: bool,
}

impl<T: Scalar> SpeakerBackend<T> {
    /// Fits LDA then PLDA on the voice records of `store`, one class per identity.
    pub fn fit(store: &EmbeddingStore<T>, lda_dim: usize, length_norm: bool) -> Result<(Self, PldaFit<T>)> {
        let lda = LdaTransform::fit(store, lda_dim)?;
        let classes = store
            .group_by_identity(Modality::Voice)
            .into_values()
            .map(|rs| {
                rs.iter()
                    .map(|r| Ok(normalize(lda.apply(&r.vector)?, length_norm)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let fit = PldaTrainer::default().fit_classes(&classes)?;
        let backend = SpeakerBackend {
            lda,
            plda: fit.model.clone(),
            length_norm,
        };
        Ok((backend, fit))
    }

    pub fn project(&self, x: &[T]) -> Result<DVector<T>> {
        Ok(normalize(self.lda.apply(x)?, self.length_norm))
    }

    pub fn score(&self, enroll: &[T], test: &[T]) -> Result<T> {
        let a = self.project(enroll)?;
        let b = self.project(test)?;
        self.plda.llr(a.as_slice(), b.as_slice())
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let mut c = Checkpoint::new("speaker-backend");
        self.lda.write_into(&mut c);
        self.plda.write_into(&mut c);
        c.push_scalar("length_norm", if self.length_norm { T::one() } else { T::zero() });
        c
    }

    pub fn from_checkpoint(c: &Checkpoint<T>) -> Result<Self> {
        c.expect_kind("speaker-backend")?;
        Ok(SpeakerBackend {
            lda: LdaTransform::read_from(c)?,
            plda: PldaModel::read_from(c)?,
            length_norm: c.get_scalar("length_norm")? != T::zero(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn normalize<T: Scalar>(x: DVector<T>, length_norm: bool) -> DVector<T> {
    if !length_norm {
        return x;
    }
    let n = x.norm();
    if n == T::zero() {
        return x;
    }
    let target = T::from_count(x.len()).sqrt();
    x * (target / n)
}
