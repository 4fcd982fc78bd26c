use std::path::Path;
use std::process::{Command, Output};

use qdpair_core::qdtt;
use qdpair_core::quantum::{bell_psi_plus, DensityMatrix};
use qdpair_core::tomography::{standard_settings, TomoRecord};

fn qdpair(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdpair")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, efficiency: f64, dark: f64, duration: f64) -> String {
    let path = dir.join("run.toml");
    let text = format!(
        "[emitter]\nfss_uev = 2.3\nt1_xx_ps = 112.0\nt1_x_ps = 134.0\n\n\
         [detectors]\nirf_fwhm_ps = 100.0\nefficiency = [{efficiency}, {efficiency}]\ndark_rate_cps = [{dark}, {dark}]\n\n\
         [run]\nduration_s = {duration}\ntopology = \"HBT_XX\"\n"
    );
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_is_reproducible_and_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0.05, 100.0, 0.01);
    let a = dir.path().join("a.qdtt");
    let b = dir.path().join("b.qdtt");
    stdout(&qdpair(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap(), "--seed", "11", "--threads", "1"]));
    stdout(&qdpair(&["simulate", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "11", "--threads", "4"]));
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());

    let declared = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    assert!(declared > 1000);
    assert_eq!(bytes.len() as u64, qdtt::HEADER_LEN as u64 + declared * qdtt::RECORD_LEN as u64);
    assert_eq!(qdtt::read_file(&a).unwrap().events.len() as u64, declared);

    let c = dir.path().join("c.qdtt");
    stdout(&qdpair(&["simulate", "--config", &cfg, "--out", c.to_str().unwrap(), "--seed", "12"]));
    assert_ne!(bytes, std::fs::read(&c).unwrap());
}

#[test]
fn zero_efficiency_gives_only_dark_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0.0, 2000.0, 1.0);
    let out = dir.path().join("dark.qdtt");
    stdout(&qdpair(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "3"]));
    let counts = qdtt::read_file(&out).unwrap().counts_per_channel();
    for ch in 0..2 {
        let n = counts[ch] as f64;
        assert!((n - 2000.0).abs() <= 3.0 * 2000f64.sqrt(), "channel {ch}: {n}");
    }
}

#[test]
fn g2_command_reports_antibunching() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0.05, 0.0, 0.2);
    let tt = dir.path().join("hbt.qdtt");
    let hist = dir.path().join("hbt.csv");
    stdout(&qdpair(&["simulate", "--config", &cfg, "--out", tt.to_str().unwrap(), "--seed", "5"]));
    let text = stdout(&qdpair(&["g2", "--input", tt.to_str().unwrap(), "--out", hist.to_str().unwrap()]));
    let value: f64 = text.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!(value < 0.1, "{text}");
    assert!(std::fs::read_to_string(&hist).unwrap().contains("delay_ps,counts"));
}

#[test]
fn tomo_on_noiseless_bell_counts() {
    let dir = tempfile::tempdir().unwrap();
    let rho = DensityMatrix::from_ket(&bell_psi_plus());
    let rec = TomoRecord::expected(&rho, standard_settings(), 1e6, 1.0).unwrap();
    let csv = dir.path().join("counts.csv");
    std::fs::write(&csv, rec.to_csv().unwrap()).unwrap();
    let metrics = dir.path().join("metrics.json");
    let rho_out = dir.path().join("rho.txt");
    stdout(&qdpair(&[
        "tomo",
        "--input",
        csv.to_str().unwrap(),
        "--out-metrics",
        metrics.to_str().unwrap(),
        "--out-rho",
        rho_out.to_str().unwrap(),
    ]));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    let c = json["raw"]["concurrence"].as_f64().unwrap();
    let f = json["raw"]["fidelity"].as_f64().unwrap();
    assert!((c - 1.0).abs() <= 1e-3, "{c}");
    assert!((f - 1.0).abs() <= 1e-3, "{f}");
    let back = DensityMatrix::from_text(&std::fs::read_to_string(&rho_out).unwrap()).unwrap();
    assert!(back.trace_distance(&rho) < 1e-3);
}

#[test]
fn failures_exit_nonzero_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[emitter]\nfss_uev = 2.3\nt1_xx_ps = 112.0\nt1_x_ps = 134.0\ncolour = 1\n[run]\nduration_s = 1\n").unwrap();
    let o = qdpair(&["simulate", "--config", cfg.to_str().unwrap(), "--out", "/dev/null", "--seed", "1"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 5") && err.contains("colour"), "{err}");

    let o = qdpair(&["g2", "--input", dir.path().join("missing.qdtt").to_str().unwrap()]);
    assert!(!o.status.success());

    let o = qdpair(&["yield"]);
    assert!(!o.status.success(), "yield without a seed must fail");
}

#[test]
fn predict_and_contrast_outputs() {
    assert_eq!(stdout(&qdpair(&["predict", "--s", "2.3", "--t1x", "134"])), "F=0.890\n");
    assert_eq!(stdout(&qdpair(&["predict", "--s", "9.8", "--t1x", "134"])), "F=0.590\n");
    let text = stdout(&qdpair(&["contrast", "--c-lin", "0.89", "--c-diag", "0.83", "--c-circ", "-0.78"]));
    assert!(text.contains("F=0.875"), "{text}");
}
