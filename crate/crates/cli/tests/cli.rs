use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use frgan::data::{IntensityDomain, MaskVolume, Volume};
use frgan::io::{read_volume, write_volume};

fn tiny_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml")
}

fn frgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frgan")).args(args).output().expect("spawn frgan")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_1() {
    let o = frgan(&["bogus"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&frgan(&[])), 1);
    assert_eq!(code(&frgan(&["phantom", "--n", "x", "--out", "/tmp/never"])), 1);
    assert_eq!(code(&frgan(&["--help"])), 0);
}

#[test]
fn phantom_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = frgan(&["phantom", "--n", "8", "--seed", "1", "--side", "16", "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 9);
    for n in names {
        assert_eq!(std::fs::read(a.join(&n)).unwrap(), std::fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("grad.json");
    let o = frgan(&["gradcheck", "--seed", "7", "--out", s(&table)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("conv3d") && !stdout.contains("FAIL"));
    let rows: serde_json::Value = serde_json::from_slice(&std::fs::read(table).unwrap()).unwrap();
    assert!(rows.as_array().unwrap().len() > 20);
}

#[test]
fn bad_inputs_map_to_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nlearning_rat = 1e-4\n").unwrap();
    let o = frgan(&["--config", s(&cfg), "phantom", "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rat"));
    assert_eq!(code(&frgan(&["report", s(&dir.path().join("missing.jsonl"))])), 2);
    let junk = dir.path().join("junk.vxl");
    std::fs::write(&junk, b"VXL0....").unwrap();
    let o = frgan(&["preprocess", "--image", s(&junk), "--labels", s(&junk), "--out", s(&dir.path().join("c"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_resume_synth_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let cfg = tiny_config();
    let run = |args: &[&str]| {
        let mut all = vec!["--config", s(&cfg), "--serial"];
        all.extend_from_slice(args);
        let o = frgan(&all);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    };
    run(&["phantom", "--n", "4", "--out", s(&p("cubes"))]);
    run(&["train", "--data", s(&p("cubes")), "--out", s(&p("full")), "--epochs", "2"]);
    run(&["train", "--data", s(&p("cubes")), "--out", s(&p("half")), "--epochs", "2", "--max-steps", "2"]);
    run(&["train", "--data", s(&p("cubes")), "--out", s(&p("resumed")), "--resume", s(&p("half/checkpoints/epoch-0001"))]);
    assert_eq!(std::fs::read(p("full/history.jsonl")).unwrap(), std::fs::read(p("resumed/history.jsonl")).unwrap());
    assert_eq!(
        std::fs::read(p("full/checkpoints/epoch-0002/tensors.bin")).unwrap(),
        std::fs::read(p("resumed/checkpoints/epoch-0002/tensors.bin")).unwrap()
    );

    let summary = p("summary.json");
    let o = run(&["report", s(&p("full")), "--out", s(&summary)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("all finite: true"));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(summary).unwrap()).unwrap();
    assert_eq!(v["steps"], 4);

    let dims = [16, 16, 16];
    let image = Volume::new(dims, (0..4096).map(|i| (i % 97) as f32 / 97.0).collect(), IntensityDomain::Normalized).unwrap();
    let mut mask = MaskVolume::empty(dims);
    for x in 6..10 {
        for y in 5..9 {
            for z in 7..11 {
                mask.data[(x * 16 + y) * 16 + z] = 1;
            }
        }
    }
    write_volume(&image, &p("image.vxl")).unwrap();
    write_volume(&MaskVolume::empty(dims).to_volume(), &p("empty.vxl")).unwrap();
    write_volume(&mask.to_volume(), &p("mask.vxl")).unwrap();
    let ckpt = p("full/checkpoints/epoch-0002");
    let o = frgan(&["synth", "--checkpoint", s(&ckpt), "--volume", s(&p("image.vxl")), "--mask", s(&p("empty.vxl")), "--out", s(&p("o.vxl"))]);
    assert_eq!(code(&o), 2);
    assert!(!p("o.vxl").exists());

    run(&["synth", "--checkpoint", s(&ckpt), "--volume", s(&p("image.vxl")), "--mask", s(&p("mask.vxl")), "--out", s(&p("o.vxl")), "--montage", s(&p("o.png"))]);
    let out = read_volume(&p("o.vxl")).unwrap();
    assert_eq!(out.dims, dims);
    for (i, (&a, &b)) in out.data.iter().zip(&image.data).enumerate() {
        if mask.data[i] == 0 {
            assert_eq!(a, b, "voxel {i} outside the mask changed");
        } else {
            assert!((0.0..=1.0).contains(&a));
        }
    }
    assert_eq!(&std::fs::read(p("o.png")).unwrap()[1..4], b"PNG");
}

#[test]
fn eval_without_checkpoint_has_zero_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let o = frgan(&["--config", s(&cfg), "--serial", "eval", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "arm,Dice,Jaccard,VOE,RVD,HD");
    let delta: Vec<&str> = lines[3].split(',').collect();
    assert_eq!(delta[0], "delta");
    assert!(delta[1..].iter().all(|c| *c == "NA" || c.parse::<f64>().unwrap() == 0.0), "{}", lines[3]);
}
