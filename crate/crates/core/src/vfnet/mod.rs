//! Voice-face discriminative network.
//!
//! Each modality has its own two-layer transform (`fc1` with ReLU, then a
//! linear `fc2`). A voice/face pair is scored by the cosine similarity `S` of
//! the transformed vectors, turned into a same/different distribution by a
//! softmax over the two logits `S` and `1 - S`.

mod grad;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::scalar::{all_finite, axpy, dot, norm, Scalar};
use crate::store::Label;

pub use grad::{pair_grad, pair_grad_accumulate};

/// Layer sizes of the two branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub voice_dim: usize,
    pub face_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
}

impl Architecture {
    /// 512-d inputs, 256-unit hidden layer and 128-d output.
    pub const DEFAULT: Architecture = Architecture {
        voice_dim: 512,
        face_dim: 512,
        hidden_dim: 256,
        output_dim: 128,
    };

    pub fn with_inputs(voice_dim: usize, face_dim: usize) -> Self {
        Architecture {
            voice_dim,
            face_dim,
            ..Self::DEFAULT
        }
    }
}

impl Default for Architecture {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Fully connected layer, `weight` stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            inputs,
            outputs,
            weight: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weight = (0..inputs * outputs)
            .map(|_| T::lit(rng.random_range(-limit..limit)))
            .collect();
        Linear {
            inputs,
            outputs,
            weight,
            bias: vec![T::zero(); outputs],
        }
    }

    pub fn row(&self, o: usize) -> &[T] {
        &self.weight[o * self.inputs..(o + 1) * self.inputs]
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.inputs);
        (0..self.outputs)
            .map(|o| self.bias[o] + dot(self.row(o), x))
            .collect()
    }

    /// `W^T g`, the gradient with respect to the layer input.
    pub(crate) fn backward_input(&self, g: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.inputs];
        for (o, &go) in g.iter().enumerate() {
            if go != T::zero() {
                axpy(go, self.row(o), &mut out);
            }
        }
        out
    }
}

/// Per-modality transform `fc2(relu(fc1(x)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

/// Intermediate values of one branch evaluation, kept for backpropagation.
pub(crate) struct BranchTrace<T> {
    pub pre: Vec<T>,
    pub hidden: Vec<T>,
    pub out: Vec<T>,
}

impl<T: Scalar> Branch<T> {
    pub fn input_dim(&self) -> usize {
        self.fc1.inputs
    }

    pub(crate) fn trace(&self, x: &[T]) -> BranchTrace<T> {
        let pre = self.fc1.forward(x);
        let hidden: Vec<T> = pre.iter().map(|&h| h.max(T::zero())).collect();
        let out = self.fc2.forward(&hidden);
        BranchTrace { pre, hidden, out }
    }

    pub fn transform(&self, x: &[T]) -> Vec<T> {
        self.trace(x).out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VfNetParams<T> {
    pub voice: Branch<T>,
    pub face: Branch<T>,
}

const TENSOR_NAMES: [&str; 8] = [
    "voice_fc1.weight",
    "voice_fc1.bias",
    "voice_fc2.weight",
    "voice_fc2.bias",
    "face_fc1.weight",
    "face_fc1.bias",
    "face_fc2.weight",
    "face_fc2.bias",
];

impl<T: Scalar> VfNetParams<T> {
    pub fn zeros(arch: Architecture) -> Self {
        let branch = |d| Branch {
            fc1: Linear::zeros(d, arch.hidden_dim),
            fc2: Linear::zeros(arch.hidden_dim, arch.output_dim),
        };
        VfNetParams {
            voice: branch(arch.voice_dim),
            face: branch(arch.face_dim),
        }
    }

    /// Glorot-uniform initialization, deterministic in `seed`.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut branch = |d| Branch {
            fc1: Linear::glorot(d, arch.hidden_dim, &mut rng),
            fc2: Linear::glorot(arch.hidden_dim, arch.output_dim, &mut rng),
        };
        let voice = branch(arch.voice_dim);
        let face = branch(arch.face_dim);
        VfNetParams { voice, face }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            voice_dim: self.voice.fc1.inputs,
            face_dim: self.face.fc1.inputs,
            hidden_dim: self.voice.fc1.outputs,
            output_dim: self.voice.fc2.outputs,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.architecture())
    }

    pub fn slices(&self) -> [&[T]; 8] {
        [
            &self.voice.fc1.weight,
            &self.voice.fc1.bias,
            &self.voice.fc2.weight,
            &self.voice.fc2.bias,
            &self.face.fc1.weight,
            &self.face.fc1.bias,
            &self.face.fc2.weight,
            &self.face.fc2.bias,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [T]; 8] {
        [
            &mut self.voice.fc1.weight,
            &mut self.voice.fc1.bias,
            &mut self.voice.fc2.weight,
            &mut self.voice.fc2.bias,
            &mut self.face.fc1.weight,
            &mut self.face.fc1.bias,
            &mut self.face.fc2.weight,
            &mut self.face.fc2.bias,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Parameter at a flat index (tensors in checkpoint order).
    pub fn get_flat(&self, mut i: usize) -> T {
        for s in self.slices() {
            if i < s.len() {
                return s[i];
            }
            i -= s.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_flat(&mut self, mut i: usize, value: T) {
        for s in self.slices_mut() {
            if i < s.len() {
                s[i] = value;
                return;
            }
            i -= s.len();
        }
        panic!("parameter index out of range");
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            axpy(T::one(), b, a);
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| all_finite(s))
    }

    pub fn transform_voice(&self, e_v: &[T]) -> Result<Vec<T>> {
        check_dim("voice embedding", self.voice.input_dim(), e_v.len())?;
        Ok(self.voice.transform(e_v))
    }

    pub fn transform_face(&self, e_f: &[T]) -> Result<Vec<T>> {
        check_dim("face embedding", self.face.input_dim(), e_f.len())?;
        Ok(self.face.transform(e_f))
    }

    /// Forward pass for one voice/face pair.
    pub fn score(&self, e_v: &[T], e_f: &[T]) -> Result<PairScore<T>> {
        let tv = self.transform_voice(e_v)?;
        let tf = self.transform_face(e_f)?;
        let s = cosine_similarity(&tv, &tf).map_err(|_| transformed_zero_norm(&tv))?;
        Ok(pair_probability(s))
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let mut c = Checkpoint::new("vfnet");
        let layers = [&self.voice.fc1, &self.voice.fc2, &self.face.fc1, &self.face.fc2];
        for (k, layer) in layers.into_iter().enumerate() {
            c.push(TENSOR_NAMES[2 * k], layer.outputs, layer.inputs, layer.weight.clone());
            c.push(TENSOR_NAMES[2 * k + 1], layer.outputs, 1, layer.bias.clone());
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint<T>) -> Result<Self> {
        c.expect_kind("vfnet")?;
        let layer = |k: usize| -> Result<Linear<T>> {
            let w = c.get(TENSOR_NAMES[2 * k])?;
            let bias = c.get_shaped(TENSOR_NAMES[2 * k + 1], w.rows, 1)?.to_vec();
            Ok(Linear {
                inputs: w.cols,
                outputs: w.rows,
                weight: w.data.clone(),
                bias,
            })
        };
        let params = VfNetParams {
            voice: Branch { fc1: layer(0)?, fc2: layer(1)? },
            face: Branch { fc1: layer(2)?, fc2: layer(3)? },
        };
        let a = params.architecture();
        let consistent = params.voice.fc2.inputs == a.hidden_dim
            && params.face.fc1.outputs == a.hidden_dim
            && params.face.fc2.inputs == a.hidden_dim
            && params.face.fc2.outputs == a.output_dim;
        if !consistent {
            return Err(Error::Checkpoint("inconsistent layer shapes".into()));
        }
        if !params.is_finite() {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

fn transformed_zero_norm<T: Scalar>(tv: &[T]) -> Error {
    if norm(tv) == T::zero() {
        Error::ZeroNorm("transformed voice embedding")
    } else {
        Error::ZeroNorm("transformed face embedding")
    }
}

/// Output of the network for one voice/face pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore<T> {
    pub similarity: T,
    pub p_same: T,
    pub p_diff: T,
}

/// `a.b / (|a||b|)`.
pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    check_dim("cosine similarity", a.len(), b.len())?;
    let na = norm(a);
    if na == T::zero() {
        return Err(Error::ZeroNorm("first argument"));
    }
    let nb = norm(b);
    if nb == T::zero() {
        return Err(Error::ZeroNorm("second argument"));
    }
    let s = dot(a, b) / (na * nb);
    Ok(s.clamp(-T::one(), T::one()))
}

/// Two-way softmax over the logits `S` (same) and `1 - S` (different),
/// evaluated as `p_same = logistic(2S - 1)`.
pub fn pair_probability<T: Scalar>(similarity: T) -> PairScore<T> {
    let z = similarity + similarity - T::one();
    PairScore {
        similarity,
        p_same: z.logistic(),
        p_diff: (-z).logistic(),
    }
}

/// Cross-entropy of the pair prediction against its label.
pub fn pair_loss<T: Scalar>(p: &PairScore<T>, label: Label) -> T {
    let z = p.similarity + p.similarity - T::one();
    match label {
        Label::Target => (-z).softplus(),
        Label::Nontarget => z.softplus(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    First,
    Second,
}

/// Picks the face closer to the voice; both faces go through the same face branch.
/// Ties go to `First`.
pub fn match_one_of_two<T: Scalar>(
    params: &VfNetParams<T>,
    e_v: &[T],
    e_f_a: &[T],
    e_f_b: &[T],
) -> Result<Choice> {
    let tv = params.transform_voice(e_v)?;
    let sa = cosine_similarity(&tv, &params.transform_face(e_f_a)?)?;
    let sb = cosine_similarity(&tv, &params.transform_face(e_f_b)?)?;
    Ok(if sb > sa { Choice::Second } else { Choice::First })
}

/// Face-to-voice direction: picks the voice closer to the face. Ties go to `First`.
pub fn match_voice_one_of_two<T: Scalar>(
    params: &VfNetParams<T>,
    e_f: &[T],
    e_v_a: &[T],
    e_v_b: &[T],
) -> Result<Choice> {
    let tf = params.transform_face(e_f)?;
    let sa = cosine_similarity(&params.transform_voice(e_v_a)?, &tf)?;
    let sb = cosine_similarity(&params.transform_voice(e_v_b)?, &tf)?;
    Ok(if sb > sa { Choice::Second } else { Choice::First })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Softmax over `[S, 1 - S]` written out literally, with max subtraction.
    fn literal_p_same(s: f64) -> f64 {
        let (a, b) = (s, 1.0 - s);
        let m = a.max(b);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        ea / (ea + eb)
    }

    fn toy_arch() -> Architecture {
        Architecture { voice_dim: 4, face_dim: 4, hidden_dim: 3, output_dim: 2 }
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_output() {
        let p = VfNetParams::<f64>::init(toy_arch(), 3);
        assert_eq!(p.transform_voice(&[0.0; 4]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(p.transform_face(&[0.0; 4]).unwrap(), vec![0.0, 0.0]);
    }

    fn toy_params() -> VfNetParams<f64> {
        // fc1 copies the first three coordinates, fc2 sums hidden units into
        // output 0 and takes twice the first unit minus the third into output 1.
        let mut p = VfNetParams::<f64>::zeros(toy_arch());
        for b in [&mut p.voice, &mut p.face] {
            b.fc1.weight = vec![
                1.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, 0.0,
            ];
            b.fc2.weight = vec![1.0, 1.0, 1.0, 2.0, 0.0, -1.0];
        }
        p.voice.fc1.bias = vec![0.0, -2.0, 0.5];
        p.face.fc2.bias = vec![0.25, -0.25];
        p
    }

    #[test]
    fn toy_transform_matches_hand_evaluation() {
        let p = toy_params();
        // voice: pre = (1, -1, 1.5), relu -> (1, 0, 1.5)
        // out = (1 + 0 + 1.5, 2 - 1.5) = (2.5, 0.5)
        assert_eq!(p.transform_voice(&[1.0; 4]).unwrap(), vec![2.5, 0.5]);
        // face: pre = (1, 1, 1) -> out = (3 + 0.25, 1 - 0.25)
        assert_eq!(p.transform_face(&[1.0; 4]).unwrap(), vec![3.25, 0.75]);
    }

    #[test]
    fn negative_preactivations_are_cut() {
        let p = toy_params();
        // face pre = (-1, 2, -3) -> relu (0, 2, 0) -> out = (2 + 0.25, 0 - 0.25)
        assert_eq!(p.transform_face(&[-1.0, 2.0, -3.0, 9.0]).unwrap(), vec![2.25, -0.25]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = toy_params();
        assert!(matches!(
            p.transform_voice(&[1.0; 5]),
            Err(Error::DimensionMismatch { expected: 4, found: 5, .. })
        ));
    }

    #[test]
    fn cosine_examples() {
        let a = [0.3f64, -1.2, 4.0];
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm("first argument"))));
        assert!(matches!(cosine_similarity(&[1.0, 0.0], &[0.0, 0.0]), Err(Error::ZeroNorm("second argument"))));
    }

    #[test]
    fn pair_probability_examples() {
        let half = pair_probability(0.5f64);
        assert_eq!((half.p_same, half.p_diff), (0.5, 0.5));
        let e = std::f64::consts::E;
        assert!((pair_probability(1.0f64).p_same - e / (e + 1.0)).abs() < 1e-15);
        assert!((pair_probability(1.0f64).p_same - 0.731059).abs() < 1e-6);
        assert!((pair_probability(0.0f64).p_same - 0.268941).abs() < 1e-6);
        for s in [-10.0, -1.0, -0.3, 0.0, 0.2, 0.9, 1.0, 7.5] {
            let p = pair_probability(s);
            assert!((p.p_same - literal_p_same(s)).abs() < 1e-12);
            assert!((p.p_same + p.p_diff - 1.0).abs() < 1e-12);
            assert!((p.p_same + pair_probability(1.0 - s).p_same - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pair_loss_examples() {
        let half = pair_probability(0.5f64);
        assert!((pair_loss(&half, Label::Target) - 2f64.ln()).abs() < 1e-15);
        let one = pair_probability(1.0f64);
        assert!((pair_loss(&one, Label::Target) - 0.313262).abs() < 1e-6);
        assert!((pair_loss(&one, Label::Target) + one.p_same.ln()).abs() < 1e-15);
        assert!((pair_loss(&one, Label::Nontarget) + one.p_diff.ln()).abs() < 1e-15);
        assert!(pair_loss(&pair_probability(40.0f64), Label::Target) < 1e-30);
    }

    #[test]
    fn matching_rules() {
        let p = VfNetParams::<f64>::init(toy_arch(), 9);
        let v = [0.4, -0.1, 0.7, 0.2];
        let f = [0.1, 0.5, -0.3, 0.8];
        assert_eq!(match_one_of_two(&p, &v, &f, &f).unwrap(), Choice::First);

        // identity-like branches in 2-d make S equal to the raw cosine
        let arch = Architecture { voice_dim: 2, face_dim: 2, hidden_dim: 4, output_dim: 2 };
        let mut q = VfNetParams::<f64>::zeros(arch);
        for b in [&mut q.voice, &mut q.face] {
            b.fc1.weight = vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0];
            b.fc2.weight = vec![1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0];
        }
        let voice = [1.0, 0.0];
        let s_a = 0.9f64;
        let s_b = 0.1f64;
        let fa = [s_a, (1.0 - s_a * s_a).sqrt()];
        let fb = [s_b, -(1.0 - s_b * s_b).sqrt()];
        assert!((q.score(&voice, &fa).unwrap().similarity - 0.9).abs() < 1e-12);
        assert_eq!(match_one_of_two(&q, &voice, &fa, &fb).unwrap(), Choice::First);
        assert_eq!(match_one_of_two(&q, &voice, &fb, &fa).unwrap(), Choice::Second);
        let scaled: Vec<f64> = fb.iter().map(|x| 7.0 * x).collect();
        assert_eq!(match_one_of_two(&q, &voice, &scaled, &fa).unwrap(), Choice::Second);
        assert_eq!(match_voice_one_of_two(&q, &voice, &fb, &fa).unwrap(), Choice::Second);
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = VfNetParams::<f64>::init(Architecture::with_inputs(6, 5), 1);
        let back = VfNetParams::from_checkpoint(&Checkpoint::parse(&p.to_checkpoint().to_text()).unwrap()).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.architecture(), Architecture::with_inputs(6, 5));
    }

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let p = VfNetParams::<f64>::init(Architecture::with_inputs(64, 64), 5);
        let limit = (6.0f64 / (64.0 + 256.0)).sqrt();
        assert!(p.voice.fc1.weight.iter().all(|w| w.abs() <= limit));
        assert!(p.face.fc2.bias.iter().all(|&b| b == 0.0));
        assert_ne!(p.voice.fc1.weight, p.face.fc1.weight);
    }
}
