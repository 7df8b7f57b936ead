use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn actseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_actseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Small synthetic dataset: 4 videos of 20-30 frames.
fn small_dataset(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    ok(&actseg(&[
        "synth",
        "--out",
        p(&data),
        "--set",
        "synth_videos_per_task=4",
        "--set",
        "synth_min_frames=20",
        "--set",
        "synth_max_frames=30",
    ]));
    data.join("manifest.tsv")
}

#[test]
fn synth_defaults_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&actseg(&["synth", "--out", p(&a)]));
    ok(&actseg(&["synth", "--out", p(&b)]));
    let features: Vec<_> = fs::read_dir(a.join("features")).unwrap().collect();
    assert_eq!(features.len(), 20);
    for entry in features {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(a.join("features").join(&name)).unwrap(),
            fs::read(b.join("features").join(&name)).unwrap()
        );
    }
    assert_eq!(
        fs::read(a.join("manifest.tsv")).unwrap(),
        fs::read(b.join("manifest.tsv")).unwrap()
    );
    let c = dir.path().join("c");
    ok(&actseg(&["synth", "--out", p(&c), "--seed", "8"]));
    assert_ne!(
        fs::read(a.join("features/t0_v000.segf")).unwrap(),
        fs::read(c.join("features/t0_v000.segf")).unwrap()
    );
}

#[test]
fn usage_and_config_errors_exit_1() {
    let dir = TempDir::new().unwrap();
    assert_eq!(actseg(&["bogus"]).status.code(), Some(1));
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "epochs=3\nnot_a_key=1\n").unwrap();
    let out = actseg(&["synth", "--out", p(&dir.path().join("o")), "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_key"));
    let out = actseg(&["synth", "--out", p(&dir.path().join("o")), "--set", "synth_actions=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(actseg(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_data_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = actseg(&[
        "train",
        "--manifest",
        p(&dir.path().join("nope.tsv")),
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_segment_eval_pipeline() {
    let dir = TempDir::new().unwrap();
    let manifest = small_dataset(dir.path());
    let run = dir.path().join("run");
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# short run\nepochs = 3\ncandidates = 4\ncheckpoint_every = 2\n").unwrap();
    ok(&actseg(&[
        "train",
        "--manifest",
        p(&manifest),
        "--out",
        p(&run),
        "--config",
        p(&cfg),
        "--seed",
        "5",
    ]));
    let resolved = fs::read_to_string(run.join("config.resolved")).unwrap();
    assert!(resolved.contains("\nepochs=3\n") && resolved.contains("\nseed=5\n"));
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4, "{history}");
    let candidates = fs::read_to_string(run.join("candidates.csv")).unwrap();
    let mut lines = candidates.lines();
    assert_eq!(
        lines.next().unwrap(),
        "video_id,epoch,candidate_index,c1,c2,c3,c_cross,total,selected"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3 * 4 * 4);
    assert_eq!(rows.iter().filter(|r| r.ends_with(",1")).count(), 3 * 4);
    assert!(run.join("checkpoints/epoch_0002.ssam").exists());
    assert!(fs::read_to_string(run.join("topk.tsv")).unwrap().lines().count() > 1);

    let seg = dir.path().join("seg");
    ok(&actseg(&[
        "segment",
        "--manifest",
        p(&manifest),
        "--checkpoint",
        p(&run.join("model.ssam")),
        "--out",
        p(&seg),
    ]));
    let svg = fs::read_to_string(seg.join("timelines/t0_v000.svg")).unwrap();
    assert!(svg.contains(r#"class="pred""#) && svg.contains(r#"class="gt""#));

    let eval = dir.path().join("eval");
    let out = actseg(&[
        "eval",
        "--manifest",
        p(&manifest),
        "--predictions",
        p(&seg.join("predictions")),
        "--out",
        p(&eval),
    ]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("MoF"));
    let metrics = fs::read_to_string(eval.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("task,mof,f1,jaccard\n") && metrics.contains("\nmean,"));

    fs::remove_file(seg.join("predictions/t0_v002.txt")).unwrap();
    let out = actseg(&["eval", "--manifest", p(&manifest), "--predictions", p(&seg.join("predictions"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t0_v002"));
}

#[test]
fn resume_continues_the_epoch_counter() {
    let dir = TempDir::new().unwrap();
    let manifest = small_dataset(dir.path());
    let first = dir.path().join("first");
    let common = ["--set", "candidates=4", "--set", "dump_candidates=false"];
    let mut args = vec!["train", "--manifest", p(&manifest), "--out", p(&first), "--set", "epochs=2"];
    args.extend(common);
    ok(&actseg(&args));
    let second = dir.path().join("second");
    let ckpt = first.join("model.ssam");
    let mut args = vec![
        "train",
        "--manifest",
        p(&manifest),
        "--out",
        p(&second),
        "--set",
        "epochs=4",
        "--resume",
        p(&ckpt),
    ];
    args.extend(common);
    ok(&actseg(&args));
    let history = fs::read_to_string(second.join("history.csv")).unwrap();
    let epochs: Vec<&str> = history.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs, ["3", "4"]);

    let straight = dir.path().join("straight");
    let mut args = vec!["train", "--manifest", p(&manifest), "--out", p(&straight), "--set", "epochs=4"];
    args.extend(common);
    ok(&actseg(&args));
    assert_eq!(
        fs::read(straight.join("model.ssam")).unwrap(),
        fs::read(second.join("model.ssam")).unwrap()
    );
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = TempDir::new().unwrap();
    let manifest = small_dataset(dir.path());
    let out = dir.path().join("sweep");
    ok(&actseg(&[
        "sweep",
        "--manifest",
        p(&manifest),
        "--out",
        p(&out),
        "--key",
        "ablation",
        "--values",
        "c1+c2+c3,random-pick",
        "--set",
        "epochs=2",
        "--set",
        "candidates=4",
    ]));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "ablation,epochs,final_total,mof,f1,jaccard");
    assert!(lines[1].starts_with("c1+c2+c3,2,") && lines[2].starts_with("random-pick,2,"));
    assert!(out.join("ablation=random-pick/predictions/t0_v001.txt").exists());
}
