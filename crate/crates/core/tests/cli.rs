use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_latent-invert"));
    c.env_remove("LATENT_INVERT_THREADS");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("spawn latent-invert")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Every file under `root`, relative path first, sorted.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Drops the trailing wall-clock column.
fn strip_ms(csv: &[u8]) -> String {
    String::from_utf8_lossy(csv)
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn train_writes_one_metrics_row_per_eval() {
    let dir = tempfile::tempdir().unwrap();
    for (eval_every, rows) in [(100, 1), (3, 4), (10, 1), (5, 2)] {
        let out = format!("r{eval_every}");
        let o = run(
            &["train", "--steps", "10", "--eval-every", &eval_every.to_string(), "--out", &out],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
        let metrics = fs::read_to_string(dir.path().join(&out).join("metrics.csv")).unwrap();
        let lines: Vec<&str> = metrics.lines().collect();
        assert_eq!(lines[0], "step,latent_loss,recon_loss,d_loss,g_adv,fm,diversity,ms");
        assert_eq!(lines.len() - 1, rows, "eval_every {eval_every}");
    }
    let o = run(&["train", "--steps", "10"], dir.path());
    assert!(o.status.success());
    let root = dir.path().join("runs/train");
    for f in ["config.resolved", "metrics.csv", "ckpt.bin", "report/train.json"] {
        assert!(root.join(f).is_file(), "missing {f}");
    }
    let imgs: Vec<_> = fs::read_dir(root.join("img")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(imgs.len(), 1);
    assert!(imgs[0].to_string_lossy().starts_with("000_"));
}

#[test]
fn cluster_without_ckpt_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["cluster", "--k", "4"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("missing checkpoint"), "{}", stderr(&o));
    let o = run(&["cluster", "--k", "4", "--ckpt", "nowhere/ckpt.bin"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nowhere/ckpt.bin"));
}

#[test]
fn usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["transmogrify"][..], &["train", "--steps", "-3"], &["train", "--bogus"], &[]] {
        let o = run(args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(!stderr(&o).is_empty());
    }
    let o = run(&["train", "--set", "colour=blue"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("colour"));
    let o = run(&["train", "--config", "absent.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("absent.cfg"));
    let o = bin().args(["train", "--steps", "1"]).env("LATENT_INVERT_THREADS", "0").current_dir(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_then_flags_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), "# short run\nsteps=4\nseed=9\nlr=0.01\n").unwrap();
    let o = run(&["train", "--config", "run.cfg", "--seed", "2", "--out", "r"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let echo = fs::read_to_string(dir.path().join("r/config.resolved")).unwrap();
    let cfg = latent_invert::cli::parse_config(&echo).unwrap();
    assert_eq!((cfg.steps, cfg.seed, cfg.learning_rate), (4, 2, 0.01));
    assert_eq!(cfg.out_dir, PathBuf::from("r"));
    let ck = latent_invert::cli::load_checkpoint(&dir.path().join("r/ckpt.bin")).unwrap();
    assert_eq!(ck.config, echo);
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["gradcheck", "--seeds", "2"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = fs::read_to_string(dir.path().join("runs/gradcheck/report/gradcheck.csv")).unwrap();
    let mut rows = 0;
    for line in report.lines().skip(1) {
        let err: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(err < 1e-4, "{line}");
        rows += 1;
    }
    assert!(rows > 20);
}

#[test]
fn identical_runs_give_identical_directories() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = run(&["train", "--steps", "30", "--eval-every", "7", "--seed", "5", "--out", out], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (a, b) = (tree(&dir.path().join("a")), tree(&dir.path().join("b")));
    assert_eq!(a.len(), b.len());
    for ((pa, ba), (pb, bb)) in a.iter().zip(&b) {
        assert_eq!(pa, pb);
        match pa.to_str().unwrap() {
            "metrics.csv" => assert_eq!(strip_ms(ba), strip_ms(bb)),
            // only out_dir differs
            "config.resolved" | "ckpt.bin" => {}
            _ => assert_eq!(ba, bb, "{}", pa.display()),
        }
    }
    let ck = |d: &str| latent_invert::cli::load_checkpoint(&dir.path().join(d).join("ckpt.bin")).unwrap();
    assert_eq!(ck("a").tensors, ck("b").tensors);
}

#[test]
fn downstream_commands_use_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["train", "--steps", "20", "--out", "t"], dir.path()).status.success());
    let cases: [(&[&str], &str); 6] = [
        (&["sweep", "--images", "8"], "report/sweep.csv"),
        (&["ood-eval", "--images", "8"], "report/ood.json"),
        (&["cluster", "--k", "4", "--images", "40"], "report/dendrogram.json"),
        (&["pairs", "--m", "3", "--images", "20"], "report/pairs.csv"),
        (&["superres", "--factor", "2", "--images", "4"], "report/superres.json"),
        (&["finetune", "--steps", "5"], "report/smoothing.json"),
    ];
    for (args, file) in cases {
        let mut argv = args.to_vec();
        argv.extend(["--ckpt", "t/ckpt.bin", "--out", "o"]);
        let o = run(&argv, dir.path());
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        assert!(dir.path().join("o").join(file).is_file(), "{file}");
        assert!(dir.path().join("o/config.resolved").is_file());
    }
    let pairs = fs::read_to_string(dir.path().join("o/report/pairs.csv")).unwrap();
    assert_eq!(pairs.lines().count(), 4);
    let o = run(&["joint", "--ckpt", "t/ckpt.bin", "--steps", "2"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("neural"));
}

#[test]
fn superres_of_a_pgm_file() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["train", "--steps", "5", "--out", "t"], dir.path()).status.success());
    let low = latent_invert::generators::Image::filled(8, 8, 0.25).unwrap();
    latent_invert::cli::write_pgm(&low, &dir.path().join("low.pgm")).unwrap();
    let o = run(&["superres", "--ckpt", "t/ckpt.bin", "--input", "low.pgm", "--out", "s"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let sr = latent_invert::cli::read_pgm(&dir.path().join("s/img/002_superres.pgm")).unwrap();
    assert_eq!((sr.height(), sr.width()), (32, 32));
    fs::write(dir.path().join("bad.pgm"), b"P5\n8 8\n255\n\x00").unwrap();
    let o = run(&["superres", "--ckpt", "t/ckpt.bin", "--input", "bad.pgm"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("truncated"));
}

#[test]
fn joint_round_trips_decoder_weights() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["train", "--backend", "neural", "--steps", "5", "--out", "n"], dir.path()).status.success());
    let o = run(&["joint", "--ckpt", "n/ckpt.bin", "--steps", "6", "--eval-every", "2", "--out", "j"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let collapse = fs::read_to_string(dir.path().join("j/report/collapse.csv")).unwrap();
    assert_eq!(collapse.lines().count(), 1 + 3);
    let ck = latent_invert::cli::load_checkpoint(&dir.path().join("j/ckpt.bin")).unwrap();
    for prefix in ["p/", "g/", "d/"] {
        assert!(ck.tensors.names().iter().any(|n| n.starts_with(prefix)), "{prefix}");
    }
    // the trained decoder is picked up by later commands
    let o = run(&["ood-eval", "--ckpt", "j/ckpt.bin", "--images", "4", "--out", "e"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
}
