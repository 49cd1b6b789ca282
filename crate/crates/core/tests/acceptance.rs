//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails at the end if any criterion failed.
//!
//! Run with `cargo test -p vfnet-core --test acceptance -- --nocapture`.

mod common;

use std::time::{Duration, Instant};

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use vfnet_core::backend::{fit_plda, pool_top_fraction, PoolingRule};
use vfnet_core::metrics::{matching_accuracy, DcfParams, DetectionScores, MatchDirection};
use vfnet_core::pipeline::{hold_out_identities, run_pipeline, PipelineOutcome, PipelineSettings, SyntheticExperiment};
use vfnet_core::store::CrossModalTrials;
use vfnet_core::synth::{generate, GenConfig};
use vfnet_core::train::{train, validation_eer, TrainConfig};
use vfnet_core::vfnet::{pair_grad, pair_loss, pair_probability, Architecture, VfNetParams};
use vfnet_core::{Label, Trial, TrialSet};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gradient_check() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst: f64 = 0.0;
    let configs = 24;
    for c in 0..configs {
        let arch = Architecture {
            voice_dim: rng.random_range(2..9),
            face_dim: rng.random_range(2..9),
            hidden_dim: rng.random_range(2..12),
            output_dim: rng.random_range(2..7),
        };
        let mut p = VfNetParams::<f64>::init(arch, c);
        for s in p.slices_mut() {
            for x in s.iter_mut() {
                *x += rng.random_range(-0.1..0.1);
            }
        }
        let v: Vec<f64> = (0..arch.voice_dim).map(|_| normal(&mut rng)).collect();
        let f: Vec<f64> = (0..arch.face_dim).map(|_| normal(&mut rng)).collect();
        let label = if c % 2 == 0 { Label::Target } else { Label::Nontarget };
        let (_, g) = pair_grad(&p, &v, &f, label).unwrap();
        let loss = |p: &VfNetParams<f64>| pair_loss(&p.score(&v, &f).unwrap(), label);
        let h = 1e-5;
        for i in 0..p.num_params() {
            let x0 = p.get_flat(i);
            p.set_flat(i, x0 + h);
            let up = loss(&p);
            p.set_flat(i, x0 - h);
            let down = loss(&p);
            p.set_flat(i, x0);
            let fd = (up - down) / (2.0 * h);
            let an = g.get_flat(i);
            // Entries that vanish analytically are compared on an absolute scale.
            let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst < 1e-4 && elapsed < Duration::from_secs(10),
        format!("{configs} configurations, max relative error {worst:.2e}, {elapsed:.2?}"),
    )
}

fn probability_identity() -> Verdict {
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let s = -10.0 + 20.0 * i as f64 / 999.0;
        let expected = 1.0 / (1.0 + (-(2.0 * s - 1.0)).exp());
        let p = pair_probability(s);
        worst = worst.max((p.p_same - expected).abs()).max((p.p_same + p.p_diff - 1.0).abs());
    }
    verdict(worst < 1e-12, format!("1000 similarities in [-10, 10], max deviation {worst:.2e}"))
}

fn metric_oracles() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let params = [
        DcfParams::default(),
        DcfParams::new(0.5, 1.0, 1.0).unwrap(),
        DcfParams::new(0.05, 10.0, 1.0).unwrap(),
    ];
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (tar, non) = random_score_set(&mut rng, 100);
        let d = DetectionScores::new(tar.clone(), non.clone()).unwrap();
        worst = worst.max((d.eer() - brute_eer(&tar, &non)).abs());
        worst = worst.max((d.auc() - brute_auc(&tar, &non)).abs());
        for p in &params {
            worst = worst.max((d.min_dcf(p).0 - brute_min_dcf(&tar, &non, p).0).abs());
            worst = worst.max((d.act_dcf(p) - brute_act_dcf(&tar, &non, p)).abs());
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst < 1e-12 && elapsed < Duration::from_secs(60),
        format!("1000 sets, max deviation {worst:.2e}, {elapsed:.2?}"),
    )
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize, ridge: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| normal(rng));
    &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * ridge
}

fn sample(rng: &mut ChaCha8Rng, chol: &DMatrix<f64>) -> DVector<f64> {
    chol * DVector::from_fn(chol.nrows(), |_, _| normal(rng))
}

fn plda_data(rng: &mut ChaCha8Rng, d: usize, ids: usize, sessions: usize) -> (Vec<Vec<DVector<f64>>>, DMatrix<f64>, DMatrix<f64>) {
    let mu = DVector::from_fn(d, |_, _| normal(rng));
    let b = random_spd(rng, d, 0.2);
    let w = random_spd(rng, d, 0.2);
    let lb = b.clone().cholesky().unwrap().l();
    let lw = w.clone().cholesky().unwrap().l();
    let classes = (0..ids)
        .map(|_| {
            let y = &mu + sample(rng, &lb);
            (0..sessions).map(|_| &y + sample(rng, &lw)).collect()
        })
        .collect();
    (classes, b, w)
}

fn plda_em() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let mut monotone = 0;
    let mut worst_drop: f64 = 0.0;
    for k in 0..10 {
        let d = 2 + k % 5;
        let ids = rng.random_range(20..80);
        let sessions = rng.random_range(2..6);
        let (classes, _, _) = plda_data(&mut rng, d, ids, sessions);
        let ll = fit_plda(&classes).unwrap().log_likelihood;
        let drop = ll.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
        worst_drop = worst_drop.max(drop);
        if drop <= 1e-9 {
            monotone += 1;
        }
    }
    let (classes, b, w) = plda_data(&mut rng, 6, 500, 10);
    let model = fit_plda(&classes).unwrap().model;
    let err_b = (&model.between - &b).norm() / b.norm();
    let err_w = (&model.within - &w).norm() / w.norm();
    verdict(
        monotone == 10 && err_b < 0.15 && err_w < 0.15,
        format!(
            "{monotone}/10 monotone (largest step down {worst_drop:.1e}), recovery error B {:.1}% W {:.1}%",
            100.0 * err_b,
            100.0 * err_w
        ),
    )
}

fn shuffled(trials: &TrialSet, seed: u64) -> TrialSet {
    let mut labels: Vec<Option<Label>> = trials.trials().iter().map(|t| t.label).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    TrialSet::new(
        trials
            .trials()
            .iter()
            .zip(labels)
            .map(|(t, l)| Trial::new(&t.enroll_id, &t.test_id, l))
            .collect(),
    )
    .unwrap()
}

fn learnability() -> Verdict {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let start = Instant::now();
        let data = generate::<f64>(&GenConfig::default()).unwrap();
        let (fit, held) = hold_out_identities(&data.train, 0.1).unwrap();
        let store = fit.merged(&held).unwrap();
        let train_trials = CrossModalTrials { seed: 1, ..CrossModalTrials::default() }.build(&fit).unwrap();
        let valid_trials = CrossModalTrials { seed: 2, ..CrossModalTrials::default() }.build(&held).unwrap();
        let test_trials = CrossModalTrials { seed: 3, ..CrossModalTrials::default() }.build(&data.test).unwrap();
        let (tar, non) = oracle_scores(&data.truth, &data.test, &test_trials);
        let oracle = DetectionScores::new(tar, non).unwrap().eer();
        let triplets = TripletData::voice_to_face(&data.test, 2000, 4);

        let cfg = TrainConfig::default();
        let net = train(&store, &train_trials, &valid_trials, &cfg).unwrap().final_params;
        let eer = validation_eer(&net, &data.test, &test_trials).unwrap();
        let acc = matching_accuracy(&net, &triplets.triplets(), MatchDirection::VoiceToFace).unwrap();
        let trained_time = start.elapsed();

        let chance = train(&store, &shuffled(&train_trials, 5), &shuffled(&valid_trials, 6), &cfg).unwrap().final_params;
        let chance_acc = matching_accuracy(&chance, &triplets.triplets(), MatchDirection::VoiceToFace).unwrap();
        let chance_eer = validation_eer(&chance, &data.test, &test_trials).unwrap();
        let elapsed = start.elapsed();

        let bound = 1.5 * oracle + 0.02;
        verdict(
            eer <= bound
                && acc > 0.8
                && (0.45..=0.55).contains(&chance_acc)
                && (0.45..=0.55).contains(&chance_eer)
                && elapsed < Duration::from_secs(300),
            format!(
                "EER {:.2}% (oracle {:.2}%, bound {:.2}%), matching {:.1}%, shuffled labels: matching {:.1}% EER {:.1}%, {trained_time:.0?} training + control {elapsed:.0?} total",
                100.0 * eer,
                100.0 * oracle,
                100.0 * bound,
                100.0 * acc,
                100.0 * chance_acc,
                100.0 * chance_eer,
            ),
        )
    })
}

fn eer_of(outcome: &PipelineOutcome<f64>, row: &str) -> f64 {
    outcome.row(row).unwrap().metrics.eer
}

fn fusion_helps(outcome: &PipelineOutcome<f64>) -> Verdict {
    let av = eer_of(outcome, "av");
    let all = eer_of(outcome, "av+vfnet");
    let singles = ["audio", "visual"].map(|r| eer_of(outcome, r));
    let best_single = singles.iter().copied().fold(f64::INFINITY, f64::min);
    verdict(
        all <= av && all <= best_single + 0.005,
        format!(
            "EER av+vfnet {:.2}%, av {:.2}%, audio {:.2}%, visual {:.2}%",
            100.0 * all,
            100.0 * av,
            100.0 * singles[0],
            100.0 * singles[1]
        ),
    )
}

fn calibration(outcome: &PipelineOutcome<f64>) -> Verdict {
    let mut ok = true;
    let mut gaps = Vec::new();
    for row in &outcome.rows {
        let m = &row.metrics;
        ok &= m.act_dcf >= m.min_dcf;
        if row.systems.len() > 1 {
            ok &= m.act_dcf - m.min_dcf < 0.05;
            gaps.push(format!("{} {:.3}", row.name, m.act_dcf - m.min_dcf));
        }
    }
    verdict(ok, format!("actDCF - minDCF on fused rows: {}", gaps.join(", ")))
}

fn pooling_examples() -> Verdict {
    let rule = PoolingRule::<f64>::default();
    let tenths: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let got = [
        pool_top_fraction(&tenths, &rule).unwrap(),
        pool_top_fraction(&[0.3], &rule).unwrap(),
        pool_top_fraction(&[0.1, 0.5, 0.9], &rule).unwrap(),
    ];
    verdict(got == [0.95, 0.3, 0.9], format!("pooled {got:?}"))
}

fn report(n: usize, name: &str, v: &Verdict) -> bool {
    println!("[{}] {n}. {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
    v.passed
}

#[test]
fn acceptance() {
    let mut failed = Vec::new();
    let mut check = |n: usize, name: &str, v: Verdict| {
        if !report(n, name, &v) {
            failed.push(n);
        }
    };
    check(1, "gradient", gradient_check());
    check(2, "pair probability", probability_identity());
    check(3, "metric oracles", metric_oracles());
    check(4, "PLDA EM", plda_em());
    check(5, "learnability", learnability());

    let data = SyntheticExperiment::default().generate::<f64>().unwrap();
    let settings = PipelineSettings::default();
    let first = run_pipeline(&data, &settings).unwrap();
    print!("{}", first.report_tsv());
    check(6, "fusion", fusion_helps(&first));
    check(7, "calibration", calibration(&first));
    check(8, "pooling", pooling_examples());
    let regenerated = SyntheticExperiment::default().generate::<f64>().unwrap();
    let second = run_pipeline(&regenerated, &settings).unwrap();
    let same = first.report_tsv().as_bytes() == second.report_tsv().as_bytes();
    check(9, "determinism", verdict(same, format!("two runs, reports {}", if same { "identical" } else { "differ" })));

    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
