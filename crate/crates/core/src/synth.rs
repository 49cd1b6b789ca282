//! Linear-Gaussian synthetic embeddings with a known cross-modal identity space.
//!
//! Every identity draws `z ~ N(0, I)` in a `d_id`-dimensional space. A voice
//! session is `A_v z + sigma n` and a face session is `A_f z + sigma m`, with
//! `A_v`, `A_f` fixed matrices with orthonormal columns and `n`, `m` standard
//! normal noise. Because the model is known, the exact same-vs-different
//! log-likelihood ratio of any voice/face pair is available as an oracle.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::FlatConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::store::{EmbeddingRecord, EmbeddingStore, Label, Modality, Trial, TrialSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub d_id: usize,
    pub d_voice: usize,
    pub d_face: usize,
    pub train_identities: usize,
    pub test_identities: usize,
    pub voice_sessions: usize,
    pub face_sessions: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            d_id: 16,
            d_voice: 64,
            d_face: 64,
            train_identities: 1000,
            test_identities: 200,
            voice_sessions: 8,
            face_sessions: 8,
            sigma: 0.5,
            seed: 1,
        }
    }
}

const KEYS: [&str; 9] = [
    "d_id",
    "d_voice",
    "d_face",
    "train_identities",
    "test_identities",
    "voice_sessions",
    "face_sessions",
    "sigma",
    "seed",
];

// Independent RNG streams derived from the one user seed.
const MAP_STREAM: u64 = 0x6d61_7073;
const TRAIN_STREAM: u64 = 0x7472_6169;
const TEST_STREAM: u64 = 0x7465_7374;

fn stream(seed: u64, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(salt);
    rng
}

fn normal_vec<T: Scalar>(n: usize, rng: &mut ChaCha8Rng) -> DVector<T> {
    DVector::from_fn(n, |_, _| T::lit(StandardNormal.sample(rng)))
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_id == 0 || self.d_voice < self.d_id || self.d_face < self.d_id {
            return Err(Error::Config(
                "need 0 < d_id <= d_voice and d_id <= d_face".into(),
            ));
        }
        if self.d_voice != self.d_face {
            return Err(Error::Config(format!(
                "d_voice ({}) and d_face ({}) must match: an embedding store holds a single dimension",
                self.d_voice, self.d_face
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config("sigma must be positive".into()));
        }
        if self.voice_sessions == 0 || self.face_sessions == 0 {
            return Err(Error::Config("session counts must be positive".into()));
        }
        Ok(())
    }

    pub fn to_flat(&self) -> FlatConfig {
        let mut c = FlatConfig::default();
        c.set("d_id", self.d_id.to_string());
        c.set("d_voice", self.d_voice.to_string());
        c.set("d_face", self.d_face.to_string());
        c.set("train_identities", self.train_identities.to_string());
        c.set("test_identities", self.test_identities.to_string());
        c.set("voice_sessions", self.voice_sessions.to_string());
        c.set("face_sessions", self.face_sessions.to_string());
        c.set("sigma", self.sigma.to_string());
        c.set("seed", self.seed.to_string());
        c
    }

    /// Reads the keys it knows from `c`, keeping defaults for the rest.
    pub fn from_flat(c: &FlatConfig) -> Result<Self> {
        let d = GenConfig::default();
        let g = GenConfig {
            d_id: c.parsed_or("d_id", d.d_id)?,
            d_voice: c.parsed_or("d_voice", d.d_voice)?,
            d_face: c.parsed_or("d_face", d.d_face)?,
            train_identities: c.parsed_or("train_identities", d.train_identities)?,
            test_identities: c.parsed_or("test_identities", d.test_identities)?,
            voice_sessions: c.parsed_or("voice_sessions", d.voice_sessions)?,
            face_sessions: c.parsed_or("face_sessions", d.face_sessions)?,
            sigma: c.parsed_or("sigma", d.sigma)?,
            seed: c.parsed_or("seed", d.seed)?,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn keys() -> &'static [&'static str] {
        &KEYS
    }

    pub fn ground_truth<T: Scalar>(&self) -> Result<GroundTruth<T>> {
        self.validate()?;
        let mut rng = stream(self.seed, MAP_STREAM);
        let mut orthonormal = |rows: usize| {
            let g = DMatrix::<f64>::from_fn(rows, self.d_id, |_, _| StandardNormal.sample(&mut rng));
            g.qr().q().map(T::lit)
        };
        let voice_map = orthonormal(self.d_voice);
        let face_map = orthonormal(self.d_face);
        Ok(GroundTruth {
            config: *self,
            voice_map,
            face_map,
        })
    }
}

/// Generator configuration together with the mixing maps it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<T: Scalar> {
    pub config: GenConfig,
    /// `d_voice x d_id`, orthonormal columns.
    pub voice_map: DMatrix<T>,
    /// `d_face x d_id`, orthonormal columns.
    pub face_map: DMatrix<T>,
}

#[derive(Debug, Clone)]
pub struct SynthData<T: Scalar> {
    pub train: EmbeddingStore<T>,
    pub test: EmbeddingStore<T>,
    pub truth: GroundTruth<T>,
}

impl<T: Scalar> GroundTruth<T> {
    pub fn sigma(&self) -> T {
        T::lit(self.config.sigma)
    }

    pub fn draw_identity(&self, rng: &mut ChaCha8Rng) -> DVector<T> {
        normal_vec(self.config.d_id, rng)
    }

    pub fn draw_session(&self, z: &DVector<T>, modality: Modality, rng: &mut ChaCha8Rng) -> Vec<T> {
        let map = match modality {
            Modality::Voice => &self.voice_map,
            Modality::Face => &self.face_map,
        };
        let noise = normal_vec::<T>(map.nrows(), rng);
        (map * z + noise * self.sigma()).as_slice().to_vec()
    }

    fn identities(&self, count: usize, prefix: &str, rng: &mut ChaCha8Rng) -> Result<EmbeddingStore<T>> {
        let c = &self.config;
        let mut store = EmbeddingStore::new();
        for i in 0..count {
            let id = format!("{prefix}{i:05}");
            let z = self.draw_identity(rng);
            for s in 0..c.voice_sessions {
                store.push(EmbeddingRecord::new(format!("{id}-v{s}"), &id, Modality::Voice, self.draw_session(&z, Modality::Voice, rng)))?;
            }
            for s in 0..c.face_sessions {
                store.push(EmbeddingRecord::new(format!("{id}-f{s}"), &id, Modality::Face, self.draw_session(&z, Modality::Face, rng)))?;
            }
        }
        Ok(store)
    }

    /// Exact same-vs-different identity llr of a voice/face pair.
    ///
    /// Only the projections onto the identity subspace matter; there
    /// `x = z + sigma n` and `y = z + sigma m`, so the llr is a two-covariance
    /// score with between covariance `I` and within covariance `sigma^2 I`.
    pub fn oracle_score(&self, e_v: &[T], e_f: &[T]) -> Result<T> {
        if e_v.len() != self.voice_map.nrows() {
            return Err(Error::DimensionMismatch {
                context: "oracle voice",
                expected: self.voice_map.nrows(),
                found: e_v.len(),
            });
        }
        if e_f.len() != self.face_map.nrows() {
            return Err(Error::DimensionMismatch {
                context: "oracle face",
                expected: self.face_map.nrows(),
                found: e_f.len(),
            });
        }
        let x = self.voice_map.tr_mul(&DVector::from_column_slice(e_v));
        let y = self.face_map.tr_mul(&DVector::from_column_slice(e_f));
        let one = T::one();
        let half = T::lit(0.5);
        let s = self.sigma() * self.sigma();
        let total = one + s;
        let same_sum = one / (s + T::lit(2.0));
        let same_diff = one / s;
        let a = (same_sum + same_diff) * half;
        let g = (same_sum - same_diff) * half;
        let d = T::from_count(self.config.d_id);
        let quad = (x.norm_squared() + y.norm_squared()) * (one / total - a) - (g + g) * x.dot(&y);
        let logdet = d * (total.ln() + total.ln() - (s + T::lit(2.0)).ln() - s.ln());
        Ok(half * (quad + logdet))
    }

    /// Enrollment/test segments in the layout of an audio-visual evaluation,
    /// with a full enrollment x test trial list.
    pub fn generate_av_split(&self, split: &AvSplitConfig, prefix: &str, seed: u64) -> Result<(EmbeddingStore<T>, TrialSet)> {
        if split.enroll_identities == 0 || split.tests_per_identity == 0 || split.enroll_faces == 0 {
            return Err(Error::Config("audio-visual split needs identities, tests and enrollment faces".into()));
        }
        if split.test_own_faces + split.test_distractor_faces == 0 {
            return Err(Error::Config("test segments need at least one face".into()));
        }
        if split.test_distractor_faces > 0 && split.background_identities == 0 {
            return Err(Error::Config("distractor faces need background identities".into()));
        }
        let mut rng = stream(self.config.seed ^ seed.rotate_left(17), seed);
        let background: Vec<DVector<T>> = (0..split.background_identities).map(|_| self.draw_identity(&mut rng)).collect();
        let mut store = EmbeddingStore::new();
        let mut enrolls = Vec::new();
        let mut tests = Vec::new();
        for i in 0..split.enroll_identities {
            let id = format!("{prefix}-id{i:04}");
            let z = self.draw_identity(&mut rng);
            let seg = format!("{prefix}-enr{i:04}");
            store.push(EmbeddingRecord::new(format!("{seg}/voice"), &id, Modality::Voice, self.draw_session(&z, Modality::Voice, &mut rng)))?;
            for k in 0..split.enroll_faces {
                store.push(EmbeddingRecord::new(format!("{seg}/face{k}"), &id, Modality::Face, self.draw_session(&z, Modality::Face, &mut rng)))?;
            }
            enrolls.push((seg, id.clone()));
            for t in 0..split.tests_per_identity {
                let seg = format!("{prefix}-tst{i:04}-{t}");
                store.push(EmbeddingRecord::new(format!("{seg}/voice"), &id, Modality::Voice, self.draw_session(&z, Modality::Voice, &mut rng)))?;
                let mut k = 0;
                for _ in 0..split.test_own_faces {
                    store.push(EmbeddingRecord::new(format!("{seg}/face{k}"), &id, Modality::Face, self.draw_session(&z, Modality::Face, &mut rng)))?;
                    k += 1;
                }
                let idx: Vec<usize> = (0..background.len()).collect();
                for _ in 0..split.test_distractor_faces {
                    let b = *idx.choose(&mut rng).expect("background is non-empty");
                    store.push(EmbeddingRecord::new(
                        format!("{seg}/face{k}"),
                        format!("{prefix}-bg{b:04}"),
                        Modality::Face,
                        self.draw_session(&background[b], Modality::Face, &mut rng),
                    ))?;
                    k += 1;
                }
                tests.push((seg, id.clone()));
            }
        }
        let mut trials = Vec::with_capacity(enrolls.len() * tests.len());
        for (e, eid) in &enrolls {
            for (t, tid) in &tests {
                let label = if eid == tid { Label::Target } else { Label::Nontarget };
                trials.push(Trial::new(e, t, Some(label)));
            }
        }
        Ok((store, TrialSet::new(trials)?))
    }
}

/// Shape of a synthetic audio-visual evaluation split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvSplitConfig {
    pub enroll_identities: usize,
    pub tests_per_identity: usize,
    pub enroll_faces: usize,
    pub test_own_faces: usize,
    pub test_distractor_faces: usize,
    pub background_identities: usize,
}

impl Default for AvSplitConfig {
    fn default() -> Self {
        AvSplitConfig {
            enroll_identities: 100,
            tests_per_identity: 2,
            enroll_faces: 3,
            test_own_faces: 2,
            test_distractor_faces: 3,
            background_identities: 50,
        }
    }
}

/// Train and test stores with disjoint identities, deterministic in the seed.
pub fn generate<T: Scalar>(config: &GenConfig) -> Result<SynthData<T>> {
    let truth = config.ground_truth::<T>()?;
    let train = truth.identities(config.train_identities, "tr", &mut stream(config.seed, TRAIN_STREAM))?;
    let test = truth.identities(config.test_identities, "te", &mut stream(config.seed, TEST_STREAM))?;
    Ok(SynthData { train, test, truth })
}

pub fn oracle_score<T: Scalar>(truth: &GroundTruth<T>, e_v: &[T], e_f: &[T]) -> Result<T> {
    truth.oracle_score(e_v, e_f)
}

/// Writes the ground-truth generator configuration (the maps follow from the seed).
pub fn save_ground_truth(config: &GenConfig, path: impl AsRef<Path>) -> Result<()> {
    crate::store::write_string(path.as_ref(), &config.to_flat().to_text())
}

pub fn load_ground_truth<T: Scalar>(path: impl AsRef<Path>) -> Result<GroundTruth<T>> {
    let flat = FlatConfig::load(path)?;
    flat.check_keys(&KEYS)?;
    GenConfig::from_flat(&flat)?.ground_truth()
}
