use std::collections::HashMap;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn marykd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_marykd"))
}

fn anchor() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/anchor.toml")
}

fn run(args: &[&str]) -> Output {
    let out = marykd().arg("--config").arg(anchor()).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn fields(line: &str) -> HashMap<&str, &str> {
    line.split_whitespace().filter_map(|kv| kv.split_once('=')).collect()
}

#[test]
fn simulate_round_budget_matches_hand_arithmetic() {
    let out = run(&["simulate-round"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    let head = fields(lines.next().unwrap());
    let ps: f64 = head["p_success"].parse().unwrap();
    let round = fields(lines.next().unwrap());
    let get = |k: &str| round[k].parse::<u64>().unwrap();
    let (a, m, t, lambda, n, r, z) = (get("a"), get("m"), get("t"), get("lambda"), get("n"), get("r"), get("z"));
    assert_eq!(a, 20_000);
    assert_eq!(m, 10);
    // 20000 · (0.58264 − 0.5) = 1652.7 → 1653 leaked bits.
    assert!((ps - 0.58264).abs() < 1e-5);
    assert_eq!(t, 1653);
    assert_eq!(lambda, 1000 + 256);
    assert_eq!(n, 220_000);
    assert_eq!(r, n - t - lambda);
    assert_eq!(z, 20_000 - 1653 - 1256);
    assert_eq!(round["keys_equal"], "true");
    let post: f64 = round["tap_post_pa_agreement"].parse().unwrap();
    assert!((post - 0.5).abs() < 3.0 * (0.25 / z as f64).sqrt());
}

#[test]
fn lambda_sweep_has_65_rows_with_unit_slope() {
    let out = run(&["analyze", "--sweep", "lambda=0..64"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "lambda,log2_i,i");
    let rows: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(rows.len(), 65);
    for w in rows.windows(2) {
        assert!((w[0] - w[1] - 1.0).abs() < 1e-9);
    }
}

#[test]
fn every_table_has_a_header_and_is_reproducible() {
    for table in ["attack", "fraction", "leak", "conditions"] {
        let a = run(&["analyze", "--table", table]).stdout;
        let b = run(&["analyze", "--table", table]).stdout;
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        let header = text.lines().next().unwrap();
        let cols = header.split(',').count();
        assert!(cols >= 3);
        assert!(text.lines().skip(1).all(|l| l.split(',').count() == cols), "{table}");
    }
}

#[test]
fn encrypt_then_decrypt_a_kib_file() {
    let dir = tempfile::tempdir().unwrap();
    let keys = dir.path().join("keys");
    run(&["simulate-round", "--key-out", keys.to_str().unwrap()]);
    let plain: Vec<u8> = (0..1024u32).map(|i| (i.wrapping_mul(2654435761) >> 13) as u8).collect();
    let p = dir.path().join("plain");
    let env = dir.path().join("env");
    let back = dir.path().join("back");
    std::fs::write(&p, &plain).unwrap();
    run(&["encrypt", "--keys", keys.to_str().unwrap(), "--in", p.to_str().unwrap(), "--out", env.to_str().unwrap()]);
    let sealed = std::fs::read(&env).unwrap();
    assert_eq!(&sealed[..4], b"KBEV");
    run(&["decrypt", "--keys", keys.to_str().unwrap(), "--in", env.to_str().unwrap(), "--out", back.to_str().unwrap()]);
    assert_eq!(std::fs::read(&back).unwrap(), plain);

    let mut bad = sealed;
    let last = bad.len() - 10;
    bad[last] ^= 1;
    std::fs::write(&env, bad).unwrap();
    let out = marykd()
        .args(["decrypt", "--keys", keys.to_str().unwrap(), "--in", env.to_str().unwrap(), "--out", back.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[verification]"));
}

#[test]
fn config_errors_exit_with_code_2() {
    let out = marykd().args(["--set", "coding.m=99", "collide"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config]"));
    let out = marykd().args(["analyze", "--sweep", "sigma=0..3"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn print_config_is_canonical() {
    let a = run(&["--print-config"]).stdout;
    let text = String::from_utf8(a.clone()).unwrap();
    assert!(text.contains("[coding]"));
    assert!(text.contains("# hello_digest = "));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("resolved.toml");
    std::fs::write(&p, &a).unwrap();
    let b = marykd().arg("--config").arg(&p).arg("--print-config").output().unwrap().stdout;
    assert_eq!(a, b);
}

#[test]
fn collide_table() {
    let text = String::from_utf8(run(&["collide", "--users", "3"]).stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "users,d,exact,approx,all_20_lines");
    assert!(rows[1].starts_with("1,10000,0e0"));
    assert!(rows[2].starts_with("2,10000,1e-4"));
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn tcp_stations_agree_and_tap_reads_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let addr = format!("127.0.0.1:{}", free_port());
    let listen = format!("network.listen=\"{addr}\"");
    let connect = format!("network.connect=\"{addr}\"");
    let small = "round.a=4000";
    let pool_tx = dir.path().join("tx.pool");
    let pool_rx = dir.path().join("rx.pool");
    for p in [&pool_tx, &pool_rx] {
        run(&["--set", small, "keygen", "--bits", "64", "--pool-out", p.to_str().unwrap()]);
    }
    assert_eq!(std::fs::read(&pool_tx).unwrap(), std::fs::read(&pool_rx).unwrap());
    let keys_tx = dir.path().join("tx.keys");
    let keys_rx = dir.path().join("rx.keys");
    let tx = marykd()
        .arg("--config")
        .arg(anchor())
        .args(["--set", small, "--set", &listen, "serve-tx", "--rounds", "2"])
        .args(["--pool", pool_tx.to_str().unwrap(), "--key-out", keys_tx.to_str().unwrap()])
        .spawn()
        .unwrap();
    let rx = run(&[
        "--set", small, "--set", &connect, "serve-rx", "--rounds", "2",
        "--pool", pool_rx.to_str().unwrap(), "--key-out", keys_rx.to_str().unwrap(),
    ]);
    let tx = tx.wait_with_output().unwrap();
    assert!(tx.status.success());
    assert_eq!(String::from_utf8(rx.stdout).unwrap().lines().count(), 2);
    assert_eq!(std::fs::read(&keys_tx).unwrap(), std::fs::read(&keys_rx).unwrap());
    assert_eq!(std::fs::read(&pool_tx).unwrap(), std::fs::read(&pool_rx).unwrap());
    assert!(!std::fs::read(&keys_tx).unwrap().is_empty());

    let transcript = dir.path().join("frames");
    run(&["--set", small, "simulate-round", "--transcript-out", transcript.to_str().unwrap()]);
    let out = String::from_utf8(run(&["--set", small, "tap", "--transcript", transcript.to_str().unwrap()]).stdout).unwrap();
    let first = fields(out.lines().next().unwrap());
    assert_eq!(first["samples"], "4000");
}

#[test]
fn mismatched_pools_fail_verification() {
    let dir = tempfile::tempdir().unwrap();
    let addr = format!("127.0.0.1:{}", free_port());
    let listen = format!("network.listen=\"{addr}\"");
    let connect = format!("network.connect=\"{addr}\"");
    let small = "round.a=2000";
    let pool_tx = dir.path().join("tx.pool");
    let pool_rx = dir.path().join("rx.pool");
    run(&["--set", small, "keygen", "--bits", "8", "--pool-out", pool_tx.to_str().unwrap()]);
    run(&["--set", small, "--set", "seeds.basis=99", "keygen", "--bits", "8", "--pool-out", pool_rx.to_str().unwrap()]);
    let before = std::fs::read(&pool_rx).unwrap();
    let tx = marykd()
        .arg("--config")
        .arg(anchor())
        .args(["--set", small, "--set", &listen, "serve-tx", "--pool", pool_tx.to_str().unwrap()])
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let rx = marykd()
        .arg("--config")
        .arg(anchor())
        .args(["--set", small, "--set", &connect, "serve-rx", "--pool", pool_rx.to_str().unwrap()])
        .output()
        .unwrap();
    let tx = tx.wait_with_output().unwrap();
    assert_eq!(tx.status.code(), Some(4), "{}", String::from_utf8_lossy(&tx.stderr));
    assert_eq!(rx.status.code(), Some(4), "{}", String::from_utf8_lossy(&rx.stderr));
    assert_eq!(std::fs::read(&pool_rx).unwrap(), before);
}
