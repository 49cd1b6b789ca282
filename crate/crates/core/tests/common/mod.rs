//! Shared helpers for the integration and acceptance tests: brute-force
//! metric oracles and small synthetic fixtures.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vfnet_core::metrics::{DcfParams, Triplet};
use vfnet_core::store::CrossModalTrials;
use vfnet_core::synth::{GenConfig, GroundTruth};
use vfnet_core::train::voice_face_indices;
use vfnet_core::{EmbeddingStore, Modality, TrialSet};

/// Operating points by exhaustive counting, thresholds ascending: the
/// accept-all point, every distinct score, then the reject-all point.
pub fn sweep(tar: &[f64], non: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut th: Vec<f64> = tar.iter().chain(non).copied().collect();
    th.sort_by(f64::total_cmp);
    th.dedup();
    let mut all = vec![f64::NEG_INFINITY];
    all.extend(th);
    all.push(f64::INFINITY);
    all.iter()
        .map(|&t| {
            let miss = tar.iter().filter(|&&s| s < t).count() as f64 / tar.len() as f64;
            let fa = non.iter().filter(|&&s| s >= t).count() as f64 / non.len() as f64;
            (t, miss, fa)
        })
        .collect()
}

pub fn brute_eer(tar: &[f64], non: &[f64]) -> f64 {
    let pts = sweep(tar, non);
    for w in pts.windows(2) {
        let (_, m0, f0) = w[0];
        let (_, m1, f1) = w[1];
        if m0 == f0 {
            return m0;
        }
        if m0 < f0 && m1 >= f1 {
            // Where the straight segment between the two points meets miss == fa.
            let t = (f0 - m0) / ((f0 - m0) + (m1 - f1));
            return m0 + t * (m1 - m0);
        }
    }
    pts.last().unwrap().1
}

pub fn brute_auc(tar: &[f64], non: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &t in tar {
        for &n in non {
            wins += if t > n {
                1.0
            } else if t == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (tar.len() * non.len()) as f64
}

fn cost(p: &DcfParams<f64>, miss: f64, fa: f64) -> f64 {
    let raw = p.c_miss * p.p_target * miss + p.c_fa * (1.0 - p.p_target) * fa;
    raw / (p.c_miss * p.p_target).min(p.c_fa * (1.0 - p.p_target))
}

/// Minimum normalized cost and the lowest threshold attaining it.
pub fn brute_min_dcf(tar: &[f64], non: &[f64], p: &DcfParams<f64>) -> (f64, f64) {
    let mut best = (f64::INFINITY, f64::NAN);
    for (t, m, f) in sweep(tar, non) {
        let c = cost(p, m, f);
        if c < best.0 {
            best = (c, t);
        }
    }
    best
}

pub fn brute_act_dcf(tar: &[f64], non: &[f64], p: &DcfParams<f64>) -> f64 {
    let pt = p.p_target * p.c_miss / (p.p_target * p.c_miss + (1.0 - p.p_target) * p.c_fa);
    let theta = ((1.0 - pt) / pt).ln();
    let miss = tar.iter().filter(|&&s| s < theta).count() as f64 / tar.len() as f64;
    let fa = non.iter().filter(|&&s| s >= theta).count() as f64 / non.len() as f64;
    cost(p, miss, fa)
}

/// Random labeled scores with at most `max_total` entries. Every third set
/// draws from a handful of values so that ties are common.
pub fn random_score_set(rng: &mut ChaCha8Rng, max_total: usize) -> (Vec<f64>, Vec<f64>) {
    let total = rng.random_range(2..=max_total);
    let nt = rng.random_range(1..total);
    let tied = rng.random_range(0..3) == 0;
    let shift = rng.random_range(-1.0..4.0);
    let mut draw = |offset: f64| {
        if tied {
            rng.random_range(0..5) as f64 * 0.5 + offset
        } else {
            rng.random_range(-4.0..4.0) + offset
        }
    };
    let tar = (0..nt).map(|_| draw(shift)).collect();
    let non = (0..total - nt).map(|_| draw(0.0)).collect();
    (tar, non)
}

/// Cross-modal trials of a store with a fixed seed.
pub fn crossmodal(store: &EmbeddingStore<f64>, seed: u64) -> TrialSet {
    CrossModalTrials { seed, ..CrossModalTrials::default() }.build(store).unwrap()
}

/// Oracle llr of every trial, split into (targets, nontargets).
pub fn oracle_scores(truth: &GroundTruth<f64>, store: &EmbeddingStore<f64>, trials: &TrialSet) -> (Vec<f64>, Vec<f64>) {
    let (mut tar, mut non) = (Vec::new(), Vec::new());
    for t in trials.trials() {
        let (v, f) = voice_face_indices(store, t).unwrap();
        let s = truth
            .oracle_score(&store.records()[v].vector, &store.records()[f].vector)
            .unwrap();
        if t.label.unwrap().is_target() {
            tar.push(s);
        } else {
            non.push(s);
        }
    }
    (tar, non)
}

/// Owned (voice, same-identity face, other-identity face) triplets.
pub struct TripletData {
    pub rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

impl TripletData {
    pub fn voice_to_face(store: &EmbeddingStore<f64>, n: usize, seed: u64) -> Self {
        let voices: Vec<_> = store.by_modality(Modality::Voice).collect();
        let faces = store.group_by_identity(Modality::Face);
        let ids: Vec<&str> = faces.keys().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|_| {
                let v = voices[rng.random_range(0..voices.len())];
                let same = &faces[v.identity_id.as_str()];
                let other_id = loop {
                    let id = ids[rng.random_range(0..ids.len())];
                    if id != v.identity_id {
                        break id;
                    }
                };
                let other = &faces[other_id];
                (
                    v.vector.clone(),
                    same[rng.random_range(0..same.len())].vector.clone(),
                    other[rng.random_range(0..other.len())].vector.clone(),
                )
            })
            .collect();
        TripletData { rows }
    }

    pub fn triplets(&self) -> Vec<Triplet<'_, f64>> {
        self.rows
            .iter()
            .map(|(p, s, o)| Triplet { probe: p, same: s, other: o })
            .collect()
    }
}

/// A small generator setting for tests that need to train quickly.
pub fn small_gen(seed: u64) -> GenConfig {
    GenConfig {
        d_id: 8,
        d_voice: 32,
        d_face: 32,
        train_identities: 120,
        test_identities: 60,
        voice_sessions: 4,
        face_sessions: 4,
        sigma: 0.5,
        seed,
    }
}
