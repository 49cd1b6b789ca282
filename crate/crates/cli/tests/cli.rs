use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use vfnet_core::backend::{score_vfnet_trial, PoolingRule};
use vfnet_core::vfnet::{pair_probability, Architecture, VfNetParams};
use vfnet_core::Scores;

fn vfnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vfnet")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn ok(args: &[&str]) -> String {
    let out = vfnet(args);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    stdout(&out)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn every_subcommand_has_help() {
    let cases: [(&str, &[&str]); 7] = [
        ("synth", &["--out-dir", "--sigma", "--av-splits"]),
        ("train-vfnet", &["--store", "--valid-trials", "--init", "--extra-store", "--optimizer"]),
        ("fit-backend", &["--lda-dim", "--length-norm"]),
        ("score", &["--system", "--model", "--pooling-fraction"]),
        ("fuse", &["--dev", "--eval", "--model-out", "--l2"]),
        ("eval", &["--scores", "--p-target", "--det-out"]),
        ("pipeline", &["--synthetic", "--out-dir", "--systems"]),
    ];
    for (cmd, flags) in cases {
        let text = ok(&[cmd, "--help"]);
        assert!(text.contains("--config"), "{cmd}");
        for f in flags {
            assert!(text.contains(f), "{cmd} lacks {f}");
        }
    }
    assert!(ok(&["--help"]).contains("train-vfnet"));
}

#[test]
fn eval_prints_metrics_of_a_score_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.scores");
    fs::write(&path, "e1\tt1\t0.9\ttarget\ne1\tt2\t0.2\ttarget\ne2\tt1\t0.8\tnontarget\ne2\tt2\t0.1\tnontarget\n").unwrap();
    let det = dir.path().join("det.tsv");
    let text = ok(&["eval", "--scores", s(&path), "--det-out", s(&det)]);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().trim_start_matches('#').split('\t').collect();
    let row: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let eer = header.iter().position(|h| *h == "eer").unwrap();
    assert_eq!(row[eer].parse::<f64>().unwrap(), 0.5);
    assert!(fs::read_to_string(det).unwrap().lines().count() > 2);
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&vfnet(&["eval", "--bogus"])), 1);
    assert_eq!(code(&vfnet(&["frobnicate"])), 1);
    let missing = dir.path().join("nope.scores");
    assert_eq!(code(&vfnet(&["eval", "--scores", s(&missing)])), 1);
    assert_eq!(code(&vfnet(&["eval"])), 1);
    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "scores = x\nwibble = 3\n").unwrap();
    assert_eq!(code(&vfnet(&["eval", "--config", s(&conf)])), 1);
    let malformed = dir.path().join("bad.scores");
    fs::write(&malformed, "a\tb\tnot-a-number\ttarget\n").unwrap();
    assert_eq!(code(&vfnet(&["eval", "--scores", s(&malformed)])), 1);
    assert_eq!(code(&vfnet(&["synth", "--out-dir", s(dir.path()), "--d-voice", "8", "--d-face", "9"])), 1);
}

#[test]
fn config_file_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.scores");
    fs::write(&path, "a\tx\t2\ttarget\nb\tx\t-2\tnontarget\nc\tx\t-1\tnontarget\n").unwrap();
    let conf = dir.path().join("eval.conf");
    fs::write(&conf, format!("scores = {}\np_target = 0.5\n", path.display())).unwrap();
    let from_file = ok(&["eval", "--config", s(&conf)]);
    let overridden = ok(&["eval", "--config", s(&conf), "--p-target", "0.01"]);
    assert_ne!(from_file, overridden);
    assert_eq!(overridden, ok(&["eval", "--scores", s(&path), "--p-target", "0.01"]));
}

#[test]
fn vfnet_scores_with_one_face_equal_the_pair_probability() {
    let dir = tempfile::tempdir().unwrap();
    let arch = Architecture { voice_dim: 3, face_dim: 3, hidden_dim: 5, output_dim: 4 };
    let net = VfNetParams::<f64>::init(arch, 7);
    let model = dir.path().join("net.ckpt");
    net.save(&model).unwrap();
    let v = [0.4, -1.0, 0.3];
    let f = [1.2, 0.1, -0.6];
    let g = [-0.2, 0.8, 0.5];
    let store = dir.path().join("s.emb");
    fs::write(
        &store,
        "enr/voice\tA\tvoice\t0.4,-1,0.3\ntst/face0\tA\tface\t1.2,0.1,-0.6\nmany/face0\tA\tface\t1.2,0.1,-0.6\nmany/face1\tB\tface\t-0.2,0.8,0.5\n",
    )
    .unwrap();
    let trials = dir.path().join("t.trials");
    fs::write(&trials, "enr\ttst\ttarget\nenr\tmany\tnontarget\n").unwrap();
    let out = dir.path().join("o.scores");
    ok(&["score", "--system", "vfnet", "--store", s(&store), "--trials", s(&trials), "--model", s(&model), "--out", s(&out)]);
    let scores = Scores::load(&out).unwrap().scores();
    let expected = pair_probability(
        vfnet_core::vfnet::cosine_similarity(&net.transform_voice(&v).unwrap(), &net.transform_face(&f).unwrap()).unwrap(),
    )
    .p_same;
    assert_eq!(scores[0], expected);
    let pooled = score_vfnet_trial(&net, &v, &[&f[..], &g[..]], &PoolingRule::default()).unwrap();
    assert_eq!(scores[1], pooled);
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let arch = Architecture { voice_dim: 2, face_dim: 2, hidden_dim: 3, output_dim: 2 };
    let init = dir.path().join("zero.ckpt");
    VfNetParams::<f64>::zeros(arch).save(&init).unwrap();
    let store = dir.path().join("s.emb");
    fs::write(&store, "v\tA\tvoice\t1,0\nf\tA\tface\t0,1\ng\tB\tface\t1,1\n").unwrap();
    let trials = dir.path().join("t.trials");
    fs::write(&trials, "v\tf\ttarget\nv\tg\tnontarget\n").unwrap();
    let out = vfnet(&[
        "train-vfnet", "--store", s(&store), "--trials", s(&trials), "--valid-trials", s(&trials),
        "--init", s(&init), "--out", s(&dir.path().join("net.ckpt")),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("epoch 1"));
}

#[test]
fn stages_rerun_from_saved_artifacts_reproduce_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    ok(&[
        "synth", "--out-dir", s(&data), "--d-id", "6", "--d-voice", "24", "--d-face", "24", "--train-identities", "150",
        "--test-identities", "2", "--voice-sessions", "4", "--face-sessions", "4", "--sigma", "0.8", "--av-splits",
    ]);
    let conf = dir.path().join("pipeline.conf");
    fs::write(
        &conf,
        format!(
            "train_store = {d}/train.emb\ndev_store = {d}/dev.emb\ndev_trials = {d}/dev.trials\neval_store = {d}/eval.emb\neval_trials = {d}/eval.trials\nmax_epochs = 2\n",
            d = data.display()
        ),
    )
    .unwrap();
    let report = ok(&["pipeline", "--config", s(&conf), "--out-dir", s(&run)]);
    assert_eq!(report.lines().count(), 7);
    assert_eq!(report, fs::read_to_string(run.join("report.tsv")).unwrap());

    let eval_store = data.join("eval.emb");
    let eval_trials = data.join("eval.trials");
    let rescored = dir.path().join("rescored");
    fs::create_dir(&rescored).unwrap();
    for (system, model) in [("audio", Some("backend.ckpt")), ("visual", None), ("vfnet", Some("vfnet.ckpt"))] {
        let out = rescored.join(format!("{system}.scores"));
        let mut args = vec!["score", "--system", system, "--store", s(&eval_store), "--trials", s(&eval_trials), "--out", s(&out)];
        let model_path = model.map(|m| run.join(m));
        if let Some(m) = &model_path {
            args.extend(["--model", s(m)]);
        }
        ok(&args);
        assert_eq!(fs::read(&out).unwrap(), fs::read(run.join(format!("eval_{system}.scores"))).unwrap(), "{system}");
    }

    let fused = rescored.join("fused.scores");
    ok(&[
        "fuse", "--model", s(&run.join("fusion_av+vfnet.ckpt")),
        "--eval", s(&rescored.join("audio.scores")),
        "--eval", s(&rescored.join("visual.scores")),
        "--eval", s(&rescored.join("vfnet.scores")),
        "--out", s(&fused),
    ]);
    assert_eq!(fs::read(&fused).unwrap(), fs::read(run.join("fused_av+vfnet.scores")).unwrap());

    let refit = rescored.join("refit.scores");
    ok(&[
        "fuse", "--dev", s(&run.join("dev_audio.scores")), "--dev", s(&run.join("dev_vfnet.scores")),
        "--eval", s(&run.join("eval_audio.scores")), "--eval", s(&run.join("eval_vfnet.scores")),
        "--out", s(&refit),
    ]);
    assert_eq!(fs::read(&refit).unwrap(), fs::read(run.join("fused_audio+vfnet.scores")).unwrap());

    let metrics = ok(&["eval", "--scores", s(&run.join("fused_av.scores"))]);
    let row = report.lines().find(|l| l.starts_with("av\t")).unwrap();
    let eer_report: f64 = row.split('\t').nth(1).unwrap().parse().unwrap();
    let header: Vec<&str> = metrics.lines().next().unwrap().trim_start_matches('#').split('\t').collect();
    let values: Vec<&str> = metrics.lines().nth(1).unwrap().split('\t').collect();
    let eer_eval: f64 = values[header.iter().position(|h| *h == "eer").unwrap()].parse().unwrap();
    assert_eq!(eer_report, eer_eval);
}
