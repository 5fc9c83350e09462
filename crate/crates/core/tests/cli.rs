//! End-to-end checks of the binary: exit codes, stdout contracts, artifact
//! determinism, and the dump formats as seen through the CLI.

use std::path::Path;
use std::process::Command;
use wavet2::io::read_noise_dump;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wavet2"))
}

fn write_config(dir: &Path, out_dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    let text = format!(
        r#"beta = 1.0
box_length = 4.0
points_per_axis = 8
dt = 0.125
n_steps = 8
k_lipschitz = 1.0
drift = "ksin"
seed = 11
replicas = 6
out_dir = "{}"

[initial]
kind = "zero"

[shift]
amplitude = 0.5
width = 0.5
center = [2.0, 2.0, 2.0]
g_steps = [1.0]
{extra}
"#,
        out_dir.display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn mconst_prints_mass_and_constant() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), dir.path(), "");
    let output = bin().args(["mconst", "--config"]).arg(&config).output().unwrap();
    assert!(output.status.success(), "{output:?}");
    let stdout = String::from_utf8(output.stdout).unwrap();
    let m_line = stdout.lines().find(|l| l.starts_with("M(T)=")).unwrap();
    // six decimals
    assert_eq!(m_line.split('.').nth(1).unwrap().len(), 6);
    let m: f64 = m_line.trim_start_matches("M(T)=").parse().unwrap();
    assert!((m - 1.0).abs() < 1e-4, "M(1) = {m}");
    assert!(stdout.lines().any(|l| l.starts_with("C(T,K)=")));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    // beta out of range
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        "beta = 3.0\nbox_length = 4.0\npoints_per_axis = 8\ndt = 0.125\nn_steps = 8\nk_lipschitz = 1.0\ndrift = \"ksin\"\nseed = 1\nreplicas = 2\nout_dir = \"x\"\n",
    )
    .unwrap();
    let output = bin().args(["solve", "--config"]).arg(&path).output().unwrap();
    assert_eq!(output.status.code(), Some(2), "{output:?}");

    // wrap-around violation: T >= L/2
    let path2 = dir.path().join("wrap.toml");
    std::fs::write(
        &path2,
        "beta = 1.0\nbox_length = 4.0\npoints_per_axis = 8\ndt = 0.5\nn_steps = 8\nk_lipschitz = 1.0\ndrift = \"ksin\"\nseed = 1\nreplicas = 2\nout_dir = \"x\"\n",
    )
    .unwrap();
    let output = bin().args(["solve", "--config"]).arg(&path2).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("L/2"), "{stderr}");

    // missing file
    let output = bin().args(["solve", "--config", "/nonexistent.toml"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));

    // bad shift override
    let config = write_config(dir.path(), dir.path(), "");
    let output = bin()
        .args(["couple", "--config"])
        .arg(&config)
        .args(["--shift", "amp=zz"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn numerical_blow_up_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("blow.toml");
    std::fs::write(
        &path,
        format!(
            "beta = 1.0\nbox_length = 4.0\npoints_per_axis = 8\ndt = 0.125\nn_steps = 8\nk_lipschitz = 0.0\ndrift = \"const:1e308\"\nseed = 1\nreplicas = 1\nout_dir = \"{}\"\n\n[initial]\nkind = \"bump\"\namplitude = 1e308\nwidth = 0.05\n",
            dir.path().display()
        ),
    )
    .unwrap();
    let output = bin().args(["solve", "--config"]).arg(&path).output().unwrap();
    assert_eq!(output.status.code(), Some(3), "{output:?}");
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("blow-up"), "{stderr}");
}

#[test]
fn sample_noise_dumps_are_readable_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("artifacts");
    let config = write_config(dir.path(), &out, "");
    let status = bin().args(["sample-noise", "--config"]).arg(&config).status().unwrap();
    assert!(status.success());
    let (header, values) = read_noise_dump(&out.join("noise_rep0.bin")).unwrap();
    assert_eq!(header.points_per_axis, 8);
    assert_eq!(header.box_length, 4.0);
    assert_eq!(values.len(), 512);
    let first = std::fs::read(out.join("noise_rep0.bin")).unwrap();

    // rerun into the same directory: byte-identical dump
    let status = bin().args(["sample-noise", "--config"]).arg(&config).status().unwrap();
    assert!(status.success());
    assert_eq!(first, std::fs::read(out.join("noise_rep0.bin")).unwrap());
}

#[test]
fn couple_csv_reproducible_and_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("artifacts");
    let config = write_config(dir.path(), &out, "");
    let run_once = |threads: &str| -> Vec<u8> {
        let status = bin()
            .args(["couple", "--config"])
            .arg(&config)
            .args(["--threads", threads])
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out.join("couple_report.csv")).unwrap()
    };
    let a = run_once("1");
    let b = run_once("3");
    assert_eq!(a, b);

    // worker count via environment variable
    let status = bin()
        .args(["couple", "--config"])
        .arg(&config)
        .env("WAVET2_THREADS", "2")
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(a, std::fs::read(out.join("couple_report.csv")).unwrap());

    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# {"));
    assert_eq!(
        lines.next().unwrap(),
        "replica,eta_t,i1_max,i2_max,rn_log_weight,norm_sq,c"
    );
    assert_eq!(lines.count(), 6);
}

#[test]
fn verify_t2_small_run_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("artifacts");
    let config = write_config(dir.path(), &out, "");
    let output = bin()
        .args(["verify-t2", "--config"])
        .arg(&config)
        .args(["--replicas", "40", "--probes", "8:4:4:4"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let text = std::fs::read_to_string(out.join("t2_report.csv")).unwrap();
    let data = text.lines().nth(2).unwrap();
    assert!(data.ends_with("PASS") || data.ends_with("FAIL"));
    assert!(data.starts_with("8:4:4:4,"));
}

#[test]
fn concentration_small_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("artifacts");
    let config = write_config(dir.path(), &out, "");
    let output = bin()
        .args(["concentration", "--config"])
        .arg(&config)
        .args(["--replicas", "200", "--functional", "time-average-sup"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let text = std::fs::read_to_string(out.join("concentration_report.csv")).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("r,frequency,bound"));

    let output = bin()
        .args(["concentration", "--config"])
        .arg(&config)
        .args(["--replicas", "200", "--functional", "bogus"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}
