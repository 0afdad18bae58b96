use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ltqkd"))
}

fn write(dir: &std::path::Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn scratch(tag: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("ltqkd-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn sweep_writes_csv_and_is_reproducible() {
    let dir = scratch("sweep");
    let cfg = write(
        &dir,
        "s.toml",
        "[channel]\nxi = 0.147\n[sweep]\nstart_km = 100\nstop_km = 200\nstep_km = 50\n[optimizer]\ngrid_points = 4\n",
    );
    let out = dir.join("a.csv");
    let st = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    let a = std::fs::read_to_string(&out).unwrap();
    assert!(a.starts_with("distance_km,rate,ell,m0_lower,m1_lower,eph_upper,e_z,z_ks_size,p_z,p_ks,p_kd1,k_s,k_d1,aborted,abort_reason\n"));
    assert_eq!(a.lines().count(), 4);
    let again = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(again.status.success());
    assert_eq!(String::from_utf8(again.stdout).unwrap(), a);
}

#[test]
fn asymptotic_flag_raises_rates() {
    let dir = scratch("asym");
    let cfg = write(
        &dir,
        "s.toml",
        "[sweep]\nstart_km = 150\nstop_km = 150\n[optimizer]\ngrid_points = 4\n",
    );
    let rate = |extra: &[&str]| -> f64 {
        let o = bin()
            .args(["sweep", "--config"])
            .arg(&cfg)
            .args(extra)
            .output()
            .unwrap();
        assert!(o.status.success());
        let text = String::from_utf8(o.stdout).unwrap();
        text.lines()
            .nth(1)
            .unwrap()
            .split(',')
            .nth(1)
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(rate(&["--asymptotic"]) > rate(&[]));
}

#[test]
fn config_errors_exit_with_one() {
    let dir = scratch("bad");
    for (name, text) in [
        ("unknown.toml", "[run]\nfoo = 1\n"),
        ("empty_sweep.toml", "[sweep]\nstart_km = 10\nstop_km = 0\n"),
        ("eps.toml", "[run]\neps_c = 1e-5\neps_sec = 1e-10\n"),
        ("syntax.toml", "[run\n"),
    ] {
        let p = write(&dir, name, text);
        let o = bin().args(["sweep", "--config"]).arg(&p).output().unwrap();
        assert_eq!(o.status.code(), Some(1), "{name}");
        assert!(!o.stderr.is_empty());
    }
    let o = bin()
        .args(["sweep", "--config", "/nonexistent/x.toml"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn optimize_prints_trace() {
    let dir = scratch("opt");
    let cfg = write(&dir, "s.toml", "[optimizer]\ngrid_points = 4\n");
    let o = bin()
        .args(["optimize", "--config"])
        .arg(&cfg)
        .args(["--distance", "80"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["rate"].as_f64().unwrap() > 0.0);
    assert!(!v["trace"].as_array().unwrap().is_empty());
    assert!(v["params"]["p_z"].as_f64().unwrap() > 0.0);
}

#[test]
fn validate_is_byte_identical_for_a_seed() {
    let dir = scratch("val");
    let a = dir.join("a.json");
    let b = dir.join("b.json");
    for p in [&a, &b] {
        let st = bin()
            .args(["validate", "--seed", "5", "--out"])
            .arg(p)
            .status()
            .unwrap();
        assert_eq!(st.code(), Some(0));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&a).unwrap()).unwrap();
    assert_eq!(v["passed"], serde_json::Value::Bool(true));
}
