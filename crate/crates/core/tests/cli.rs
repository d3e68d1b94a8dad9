use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn adapd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adapd")).args(args).output().expect("binary runs")
}

fn small_run(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--preset", "small", "-K", "2000", "--record-every", "200", "-o"];
    let out = out.to_str().unwrap();
    args.push(out);
    args.extend_from_slice(extra);
    adapd(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn generate_reports_paper_scale_and_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = adapd(&["generate", "-o", d.path().to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        let text = String::from_utf8_lossy(&o.stdout);
        assert!(text.contains("n=100 N=50"), "{text}");
        assert!(text.contains("|E|=75"), "{text}");
        assert!(text.contains("delta"));
    }
    for f in ["instance.adapd", "graph.txt"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn invalid_parameters_exit_with_status_one_before_writing() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("never");
    let o = adapd(&["run", "--preset", "small", "-K", "0", "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("K must be >= 1"), "{}", stderr(&o));
    assert!(!out.exists());
    let o = adapd(&["check-bound", "--preset", "bound", "--seeds", "1", "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = adapd(&["check-bound", "--preset", "bound", "--comparison", "initial", "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("warning"));
    let o = adapd(&["generate", "--agents", "4", "--extra-edges", "9", "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn run_writes_aligned_csvs_and_reuses_the_reference() {
    let d = tempfile::tempdir().unwrap();
    let o = small_run(d.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("solving reference"));
    let a = fs::read_to_string(d.path().join("async.csv")).unwrap();
    let s = fs::read_to_string(d.path().join("sync.csv")).unwrap();
    assert!(a.starts_with("k,comms,subopt,infeas,consensus,gap,wallclock_s\n"));
    let last_comms = |t: &str| t.lines().last().unwrap().split(',').nth(1).unwrap().to_string();
    assert_eq!(last_comms(&a), "2000");
    assert_eq!(last_comms(&s), "2000");

    let o = small_run(d.path(), &[]);
    assert!(stderr(&o).contains("reusing cached reference"), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(d.path().join("async.csv")).unwrap(), a);

    let meta = fs::read_to_string(d.path().join("metadata.json")).unwrap();
    for key in ["\"steps\"", "\"constants\"", "\"reference\"", "\"software\"", "DPDA-S-like"] {
        assert!(meta.contains(key), "metadata lacks {key}");
    }
}

#[test]
fn replaying_metadata_reproduces_the_csv() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let o = small_run(a.path(), &["--mode", "async", "--seed", "17", "--activation", "clocks"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let meta = a.path().join("metadata.json");
    let o = adapd(&["run", "--replay", meta.to_str().unwrap(), "-o", b.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(a.path().join("async.csv")).unwrap(),
        fs::read(b.path().join("async.csv")).unwrap()
    );
    assert!(!b.path().join("sync.csv").exists());
}

#[test]
fn config_file_and_flag_overrides() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("cfg.toml");
    fs::write(&cfg, "n = 3\nagents = 4\nrows = 2\niterations = 40\nrecord_every = 10\nmode = \"sync\"\n").unwrap();
    let out = d.path().join("out");
    let o = adapd(&["run", "--config", cfg.to_str().unwrap(), "--rounds", "7", "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = fs::read_to_string(out.join("sync.csv")).unwrap();
    let last = s.lines().last().unwrap();
    assert!(last.starts_with("7,28,"), "{last}");
    fs::write(&cfg, "bogus_key = 1\n").unwrap();
    let o = adapd(&["run", "--config", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn check_bound_passes_on_the_bound_fixture() {
    let d = tempfile::tempdir().unwrap();
    let o = adapd(&["check-bound", "--preset", "bound", "--seeds", "40", "-o", d.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.matches("pass").count(), 3, "{text}");
}

#[test]
fn plot_emits_three_deterministic_charts() {
    let d = tempfile::tempdir().unwrap();
    assert!(small_run(d.path(), &[]).status.success());
    let csvs = [d.path().join("async.csv"), d.path().join("sync.csv")];
    let mut renders = Vec::new();
    for sub in ["p1", "p2"] {
        let out = d.path().join(sub);
        let o = adapd(&[
            "plot",
            csvs[0].to_str().unwrap(),
            csvs[1].to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let mut files = Vec::new();
        for name in ["suboptimality.svg", "infeasibility.svg", "consensus.svg"] {
            let svg = fs::read_to_string(out.join(name)).unwrap();
            assert_eq!(svg.matches("<polyline").count(), 2, "{name}");
            assert!(svg.contains("class=\"legend\""));
            files.push(svg);
        }
        renders.push(files);
    }
    assert_eq!(renders[0], renders[1]);
}

#[test]
fn plot_rejects_malformed_csv_without_writing() {
    let d = tempfile::tempdir().unwrap();
    let empty = d.path().join("empty.csv");
    fs::write(&empty, "k,comms,subopt,infeas,consensus,gap,wallclock_s\n").unwrap();
    let out = d.path().join("plots");
    let o = adapd(&["plot", empty.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
    let bad = d.path().join("bad.csv");
    fs::write(&bad, "k,comms,subopt,infeas,consensus,gap,wallclock_s\n1,1,0.5,0,0,0,0\n2,x,0.4,0,0,0,0\n").unwrap();
    let o = adapd(&["plot", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    assert!(!out.exists());
}
