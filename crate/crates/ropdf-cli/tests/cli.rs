use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ropdf"))
}

/// Writes a 3-bus triangle bundle whose mechanical injections balance the
/// electrical power exactly at the stated equilibrium.
fn write_triangle(dir: &Path) {
    let n = 3;
    let (g_off, b_off) = (0.2, -4.0);
    let (g_diag, b_diag) = (0.5, 8.0);
    let v = [1.0, 0.98, 1.02];
    let delta = [0.0, -0.06, 0.04];
    let mut g = [[g_off; 3]; 3];
    let mut b = [[b_off; 3]; 3];
    for i in 0..n {
        g[i][i] = g_diag;
        b[i][i] = b_diag;
    }
    let mut p_m = [0.0; 3];
    for i in 0..n {
        for j in 0..n {
            let dd: f64 = delta[i] - delta[j];
            p_m[i] += v[i] * v[j] * (g[i][j] * dd.cos() + b[i][j] * dd.sin());
        }
    }
    std::fs::create_dir_all(dir).unwrap();
    let mut network = format!("n {n}\n");
    for (i, j) in [(1, 2), (1, 3), (2, 3)] {
        network.push_str(&format!("edge {i} {j} {g_off} {b_off}\n"));
    }
    for row in &g {
        network.push_str(&format!("G {} {} {}\n", row[0], row[1], row[2]));
    }
    for row in &b {
        network.push_str(&format!("B {} {} {}\n", row[0], row[1], row[2]));
    }
    std::fs::write(dir.join("network"), network).unwrap();
    std::fs::write(
        dir.join("machines"),
        format!(
            "h 1.5 1.5 1.5\nd 0.8 0.8 0.8\np_m {} {} {}\nomega_R 1\n",
            p_m[0], p_m[1], p_m[2]
        ),
    )
    .unwrap();
    std::fs::write(
        dir.join("equilibrium"),
        format!(
            "v_star {} {} {}\ndelta_star {} {} {}\n",
            v[0], v[1], v[2], delta[0], delta[1], delta[2]
        ),
    )
    .unwrap();
    std::fs::write(
        dir.join("ratings"),
        "rating 1 2 0.12\nrating 1 3 0.12\nrating 2 3 0.12\n",
    )
    .unwrap();
}

fn write_config(dir: &Path, bundle: &Path) -> std::path::PathBuf {
    let path = dir.join("exp.cfg");
    std::fs::write(
        &path,
        format!(
            "[case]\nbundle = {}\n\
             [noise]\nr = 0.2\n\
             [scenario]\nburn_in_t = 2\npost_t = 0.5\nrecord_lines = 1-2, 1-3\nrecord_stride = 10\n\
             [sampling]\nm_r = 300\nm_kde = 500\nseed = 7\n\
             [grid]\nn_cells = 60\n\
             [output]\ndir = {}\n",
            bundle.display(),
            dir.join("out").display()
        ),
    )
    .unwrap();
    path
}

#[test]
fn validate_accepts_good_setup() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("tri");
    write_triangle(&bundle);
    let cfg = write_config(dir.path(), &bundle);
    let out = bin().args(["validate", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("ok: 3 buses, 3 lines"), "{text}");
}

#[test]
fn bad_config_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "[case]\nbundle = missing\nnope = 1\n").unwrap();
    let out = bin().args(["marginal", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));
}

#[test]
fn marginal_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("tri");
    write_triangle(&bundle);
    let cfg = write_config(dir.path(), &bundle);
    let out = bin()
        .args(["marginal", "--quick", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let outdir = dir.path().join("out");
    for name in [
        "tri_1-2_pdf.bin",
        "tri_1-2_pdf.csv",
        "tri_1-2_kde.csv",
        "tri_1-3_pdf.bin",
        "tri_summary.json",
    ] {
        assert!(outdir.join(name).exists(), "missing {name}");
    }
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("line 1-2: P[u >"), "{text}");
}

#[test]
fn runtime_failures_exit_with_run_code() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("tri");
    write_triangle(&bundle);
    let cfg_path = dir.path().join("one_line.cfg");
    std::fs::write(
        &cfg_path,
        format!(
            "[case]\nbundle = {}\n[scenario]\nburn_in_t = 1\npost_t = 0.2\nrecord_lines = 1-2\n\
             [sampling]\nm_r = 100\nm_kde = 120\n",
            bundle.display()
        ),
    )
    .unwrap();
    // A joint study needs two recorded lines.
    let out = bin().args(["joint", "--config"]).arg(&cfg_path).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exactly 2"));
}
