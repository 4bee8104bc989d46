use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mam_cli::manifest::{Entry, Manifest, Split};
use mam_cli::synth::class_profile;
use mam_core::dsp::{
    chromagram, n_frames_for, read_feature_cache, read_wav, stft_magnitude, write_wav, AudioClip, FeatureConfig,
    N_CHANNELS,
};
use mam_core::training::load_checkpoint;
use tempfile::TempDir;

const TINY: &str = "\
model.n_layers = 2
model.hidden_dim = 16
model.n_heads = 2
model.ffn_dim = 64
pretrain.batch_size = 2
pretrain.total_steps = 6
pretrain.crop_frames = 32
pretrain.checkpoint_every = 3
optimizer.warmup_steps = 4
finetune.batch_sizes = 4
finetune.learning_rates = 0.001
finetune.epochs = 1
finetune.dropout_rates = 0.1
finetune.crop_frames = 32
eval.folds = 2
";

fn mam(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mam"))
        .current_dir(dir)
        .env_remove("MAM_CONFIG")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("run mam")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mam(dir, args);
    assert!(
        out.status.success(),
        "mam {args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_corpus(extra: &[&str]) -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("tiny.conf"), TINY).unwrap();
    let mut args = vec!["--out", "corpus", "synth", "--classes", "3", "--per-class", "4", "--min-s", "3", "--max-s", "4"];
    args.extend_from_slice(extra);
    ok(dir.path(), &args);
    dir
}

fn files_with_ext(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    v
}

#[test]
fn synth_writes_a_balanced_corpus_with_separable_chroma() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["--out", "c", "synth", "--classes", "3", "--per-class", "20", "--min-s", "2", "--max-s", "3"]);
    let wavs = files_with_ext(&dir.path().join("c/audio"), "wav");
    assert_eq!(wavs.len(), 60);
    let m = Manifest::load(&dir.path().join("c/manifest.tsv")).unwrap();
    assert_eq!(m.entries.len(), 60);
    for c in 0..3 {
        assert_eq!(m.entries.iter().filter(|e| m.class_of(e).unwrap() == c).count(), 20);
    }

    // Raw (un-normalised) chroma averaged over each class peaks on one of
    // that class's chord tones.
    let cfg = FeatureConfig::default();
    let mut sums = vec![[0.0f64; 12]; 3];
    for e in &m.entries {
        let clip = read_wav(&m.resolve(e)).unwrap();
        let chroma = chromagram(&stft_magnitude(&clip, &cfg).unwrap(), &cfg).unwrap();
        let c = m.class_of(e).unwrap();
        for r in 0..chroma.rows() {
            for (s, v) in sums[c].iter_mut().zip(chroma.row(r)) {
                *s += v;
            }
        }
    }
    for (c, s) in sums.iter().enumerate() {
        let top = (0..12).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap() as u8;
        assert!(class_profile(c, 3).pitch_classes.contains(&top), "class {c}: top pitch class {top}");
    }
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tiny_corpus(&[]);
    let d = dir.path();
    let conf = ["--config", "tiny.conf"];
    let with = |rest: &[&str]| -> Vec<String> { conf.iter().chain(rest).map(|s| s.to_string()).collect() };
    let run = |rest: &[&str]| ok(d, &with(rest).iter().map(String::as_str).collect::<Vec<_>>());

    let first = run(&["extract", "--manifest", "corpus/manifest.tsv"]);
    assert!(first.contains("extracted 12, up to date 0, failed 0"), "{first}");
    let again = run(&["extract", "--manifest", "corpus/manifest.tsv"]);
    assert!(again.contains("extracted 0, up to date 12, failed 0"), "{again}");

    let m = Manifest::load(&d.join("corpus/manifest.tsv")).unwrap();
    for e in &m.entries {
        let bytes = fs::read(d.join("corpus/features").join(format!("{}.mcfe", e.clip_id))).unwrap();
        let seq = read_feature_cache(bytes.as_slice()).unwrap();
        let clip = read_wav(&m.resolve(e)).unwrap();
        assert_eq!(seq.n_channels(), N_CHANNELS);
        assert_eq!(seq.n_frames(), n_frames_for(clip.samples.len(), 1024));
    }

    run(&["--out", "pt1", "pretrain", "--manifest", "corpus/manifest.tsv"]);
    run(&["--out", "pt2", "pretrain", "--manifest", "corpus/manifest.tsv"]);
    let names: Vec<_> = files_with_ext(&d.join("pt1"), "mcck").iter().map(|p| p.file_name().unwrap().to_owned()).collect();
    assert_eq!(names, ["checkpoint_00000003.mcck", "pretrained.mcck"]);
    for f in ["pretrained.mcck", "checkpoint_00000003.mcck", "loss.log"] {
        assert_eq!(fs::read(d.join("pt1").join(f)).unwrap(), fs::read(d.join("pt2").join(f)).unwrap(), "{f}");
    }
    let log = fs::read_to_string(d.join("pt1/loss.log")).unwrap();
    assert_eq!(log.lines().count(), 6);
    let ck = load_checkpoint(&d.join("pt1/pretrained.mcck")).unwrap();
    assert_eq!(ck.state.step, 6);

    let report = run(&["--out", "ft", "finetune", "--manifest", "corpus/manifest.tsv", "--task", "genre", "--checkpoint", "pt1/pretrained.mcck"]);
    assert!(report.starts_with("batch_size\tlearning_rate\tepochs\tdropout\taccuracy"), "{report}");
    assert!(d.join("ft/grid_report.tsv").exists());
    let ft = load_checkpoint(&d.join("ft/finetuned.mcck")).unwrap();
    assert!(ft.params.task_head.is_some());

    let cv = run(&["--out", "ev", "evaluate", "--manifest", "corpus/manifest.tsv", "--task", "genre", "--random-init"]);
    assert_eq!(cv, fs::read_to_string(d.join("ev/eval_report.txt")).unwrap());
    assert!(cv.lines().any(|l| l.starts_with("mean\t")), "{cv}");
    assert_eq!(cv.lines().filter(|l| l.starts_with(|c: char| c.is_ascii_digit())).count(), 2);

    // A checkpoint from a different architecture is refused.
    let out = mam(d, &["--out", "x", "finetune", "--manifest", "corpus/manifest.tsv", "--task", "genre", "--checkpoint", "pt1/pretrained.mcck"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("architecture"));
}

#[test]
fn config_file_can_come_from_the_environment() {
    let dir = tiny_corpus(&[]);
    let d = dir.path();
    ok(d, &["extract", "--manifest", "corpus/manifest.tsv"]);
    let out = Command::new(env!("CARGO_BIN_EXE_mam"))
        .current_dir(d)
        .env("MAM_CONFIG", "tiny.conf")
        .env("RUST_LOG", "warn")
        .args(["--out", "pt", "pretrain", "--manifest", "corpus/manifest.tsv", "--steps", "2"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(load_checkpoint(&d.join("pt/pretrained.mcck")).unwrap().config.hidden_dim, 16);
}

#[test]
fn tagging_finetunes_and_scores_the_test_split() {
    let dir = tiny_corpus(&["--tags"]);
    let d = dir.path();
    let path = d.join("corpus/manifest.tsv");
    let mut m = Manifest::load(&path).unwrap();
    for (i, e) in m.entries.iter_mut().enumerate() {
        e.split = [Split::Train, Split::Valid, Split::Test][i / 2 % 3];
    }
    m.save(&path).unwrap();
    let conf = ["--config", "tiny.conf"];
    ok(d, &[&conf[..], &["extract", "--manifest", "corpus/manifest.tsv"]].concat());
    let grid = ok(d, &[&conf[..], &["--out", "ft", "finetune", "--manifest", "corpus/manifest.tsv", "--task", "tags", "--random-init"]].concat());
    assert!(grid.contains("pr_auc_macro"), "{grid}");
    let report = ok(d, &[&conf[..], &["--out", "ev", "evaluate", "--manifest", "corpus/manifest.tsv", "--task", "tags", "--model", "ft/finetuned.mcck"]].concat());
    for tag in ["synth0", "synth1", "synth2"] {
        assert!(report.lines().any(|l| l.starts_with(tag)), "{report}");
    }
    assert!(report.lines().any(|l| l.starts_with("macro")), "{report}");
}

#[test]
fn missing_features_name_the_clip() {
    let dir = tiny_corpus(&[]);
    let d = dir.path();
    let out = mam(d, &["--config", "tiny.conf", "--out", "pt", "pretrain", "--manifest", "corpus/manifest.tsv"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("clip0000") && err.contains("mam extract"), "{err}");
}

#[test]
fn long_clips_are_capped_at_the_frame_limit() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::create_dir(d.join("audio")).unwrap();
    let sr = 44_100u32;
    let samples: Vec<f32> = (0..40 * sr as usize).map(|i| (0.3 * (i as f64 * 0.0627).sin()) as f32).collect();
    write_wav(&d.join("audio/long.wav"), &AudioClip::new(samples, sr)).unwrap();
    let entry = Entry {
        clip_id: "long".into(),
        path: "audio/long.wav".into(),
        split: Split::Train,
        labels: vec!["a".into()],
        duration_s: 40.0,
    };
    Manifest::new(vec!["a".into()], vec![entry], d.to_path_buf()).unwrap().save(&d.join("m.tsv")).unwrap();
    ok(d, &["extract", "--manifest", "m.tsv"]);
    let seq = read_feature_cache(fs::read(d.join("features/long.mcfe")).unwrap().as_slice()).unwrap();
    assert_eq!(seq.n_frames(), FeatureConfig::default().max_frames);
    assert_eq!(seq.n_frames(), 1600);
}

#[test]
fn mask_demo_reports_statistics() {
    let dir = TempDir::new().unwrap();
    let out = ok(dir.path(), &["mask-demo", "--frames", "100", "--trials", "50"]);
    let row = out.lines().find_map(|l| l.strip_prefix("frames\t")).unwrap();
    assert_eq!(row.len(), 100);
    assert_eq!(row.chars().filter(|&c| c != '.').count(), 15);
    assert!(out.contains("masked_frames\tmin=15\tmax=15"), "{out}");
    assert_eq!(out.lines().filter(|l| l.starts_with("channel_block")).count(), 2);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.conf"), "model.hidden_dim = lots\n").unwrap();
    let out = mam(d, &["--config", "bad.conf", "mask-demo"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.hidden_dim"));
    let out = mam(d, &["finetune", "--manifest", "nope.tsv", "--task", "genre", "--random-init"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.tsv"));
}

#[test]
fn printed_config_is_a_loadable_config() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.conf"), TINY).unwrap();
    let shown = ok(d, &["--config", "tiny.conf", "--seed", "5", "config"]);
    assert!(shown.lines().any(|l| l == "seed = 5"), "{shown}");
    assert!(shown.lines().any(|l| l == "model.hidden_dim = 16"), "{shown}");
    fs::write(d.join("shown.conf"), &shown).unwrap();
    assert_eq!(ok(d, &["--config", "shown.conf", "config"]), shown);
}
