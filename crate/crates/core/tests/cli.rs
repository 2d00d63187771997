use std::path::Path;
use std::process::Command;

const SMALL: &str = r#"
seed = 3

[problem]
preset = "put1d"

[network]
kernel = "gaussian"
neurons = 40

[sampling]
interior = 120
terminal = 40
boundary = 40

[train]
mode = "adaptive"
max_iters = 30

[adaptive]
n0 = 40
k = 10
m = 5
s = 60
w = 8
epsilon = 1e-6

[lbfgs]
history = 20
inner_iters = 3

[test]
points = 50
"#;

fn pirbf(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_pirbf"))
        .args(args)
        .env_remove("PIRBF_THREADS")
        .output()
        .expect("binary runs")
}

fn train(dir: &Path, config: &Path, name: &str) -> std::path::PathBuf {
    let out = dir.join(name);
    let o = pirbf(&["--quiet", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "train"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn identical_runs_give_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let a = train(dir.path(), &cfg, "a");
    let b = train(dir.path(), &cfg, "b");
    for f in ["history.csv", "test_points.csv", "checkpoint.json"] {
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        assert!(x == y, "{f} differs between identical runs");
    }
    let hist = std::fs::read_to_string(a.join("history.csv")).unwrap();
    let header = hist.lines().next().unwrap();
    assert_eq!(
        header,
        "iteration,pde_loss,terminal_loss,boundary_loss,total_loss,mapr_w,neuron_count,test_rmse"
    );
    // neuron counts only grow by m at multiples of k
    let counts: Vec<(usize, usize)> = hist
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[6].parse().unwrap())
        })
        .collect();
    for w in counts.windows(2) {
        let ((_, n0), (it, n1)) = (w[0], w[1]);
        if n1 != n0 {
            assert_eq!(n1, n0 + 5);
            assert_eq!(it % 10, 0);
        }
    }
}

#[test]
fn finetune_price_and_surface_use_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let run = train(dir.path(), &cfg, "base");
    let ck = run.join("checkpoint.json");
    let ck = ck.to_str().unwrap();

    let ft = dir.path().join("ft");
    let o = pirbf(&["--quiet", "--out", ft.to_str().unwrap(), "finetune", "--checkpoint", ck, "--set", "sigma.0=0.3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(ft.join("checkpoint.json")).unwrap();
    assert!(text.contains("0.3"));

    let o = pirbf(&["finetune", "--checkpoint", ck, "--set", "s_max=50"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("s_max"));

    let o = pirbf(&["price", "--mode", "network", "--checkpoint", ck, "--point", "10,0", "--point", "12,0.1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.starts_with("s1,t,predicted,reference,pae\n"));
    assert!(stdout.contains("rmse,"));

    let o = pirbf(&["--out", run.to_str().unwrap(), "surface", "--checkpoint", ck, "--axis", "s1=0:30:7", "--time", "0", "--fix", "t=0.25"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let surf = std::fs::read_to_string(run.join("surface.csv")).unwrap();
    assert_eq!(surf.lines().count(), 8);
}

#[test]
fn sweep_writes_per_seed_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL.replace("max_iters = 30", "max_iters = 5")).unwrap();
    let out = dir.path().join("sweep");
    let o = pirbf(&["--quiet", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "sweep", "--seeds", "1-2,7"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let seeds: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(seeds, ["1", "2", "7"]);
    assert!(out.join("seed-7").join("history.csv").exists());
}

#[test]
fn closed_form_table_and_errors() {
    let o = pirbf(&["price", "--mode", "closed-form", "--problem", "exchange2d", "--table", "exchange"]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().count(), 12);
    assert!(stdout.contains("1.593"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, SMALL.replace("kernel = \"gaussian\"", "kernel = \"cubic\"")).unwrap();
    let o = pirbf(&["--config", bad.to_str().unwrap(), "train"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("network.kernel") && err.contains("cubic"), "{err}");

    let o = pirbf(&["price", "--mode", "closed-form", "--problem", "basket4d", "--point", "1,1,1,1,0"]);
    assert_eq!(o.status.code(), Some(1));
}
