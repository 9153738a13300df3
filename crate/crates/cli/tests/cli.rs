use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nnspl::bench::{generate_block_sparse, nmse_db, BlockSparseSpec};
use nnspl::model::{generate_matrix, stream_rng};
use nnspl_cli::io::{read_vector, write_matrix, write_vector};
use nnspl_cli::pgm::{self, GrayImage};
use nnspl::Matrix;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nnspl"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("spawn nnspl")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

#[test]
fn identity_recovery() {
    let dir = tempfile::tempdir().unwrap();
    let n = 40;
    let x: Vec<f64> = (0..n).map(|i| if (10..30).contains(&i) { 3.0 } else { 0.0 }).collect();
    write_matrix(&dir.path().join("eye.csv"), &Matrix::identity(n)).unwrap();
    write_vector(&dir.path().join("y.csv"), &x).unwrap();

    let out = run(&["recover", "eye.csv", "y.csv", "-o", "xhat.csv"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = String::from_utf8(out.stdout).unwrap();
    assert!(summary.starts_with("iterations="), "{summary}");
    for key in ["status=", "mu0=", "tau0=", "delta0=", "mean_lambda="] {
        assert!(summary.contains(key), "{summary}");
    }
    let xhat = read_vector(&dir.path().join("xhat.csv")).unwrap();
    let db = nmse_db(&xhat, &x).unwrap();
    assert!(db < -60.0, "NMSE {db} dB");
}

#[test]
fn estimate_goes_to_stdout_without_out() {
    let dir = tempfile::tempdir().unwrap();
    write_matrix(&dir.path().join("eye.csv"), &Matrix::identity(2)).unwrap();
    write_vector(&dir.path().join("y.csv"), &[1.0, 2.0]).unwrap();
    let out = run(&["recover", "eye.csv", "y.csv"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let lines: Vec<f64> = String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert!(stderr(&out).contains("iterations="));
}

#[test]
fn dimension_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write_matrix(&dir.path().join("a.csv"), &Matrix::identity(3)).unwrap();
    write_vector(&dir.path().join("y.csv"), &[1.0, 2.0]).unwrap();
    let out = run(&["recover", "a.csv", "y.csv"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("dimension mismatch"), "{}", stderr(&out));
}

#[test]
fn parse_errors_exit_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.csv"), "1,0\n0,oops\n").unwrap();
    write_vector(&dir.path().join("y.csv"), &[1.0, 2.0]).unwrap();
    let out = run(&["recover", "a.csv", "y.csv"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("a.csv:2:"), "{}", stderr(&out));
}

#[test]
fn missing_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["recover", "nope.csv", "y.csv"], dir.path());
    assert_eq!(code(&out), 3);
}

#[test]
fn bad_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["frobnicate"], dir.path())), 2);
    assert_eq!(code(&run(&["sweep", "--algo", "lasso"], dir.path())), 2);
    assert_eq!(code(&run(&["sweep", "--set", "colour=blue"], dir.path())), 2);
}

/// Seeded 60x100 block-sparse instance. Set `NNSPL_UPDATE_GOLDEN=1` to
/// rewrite the frozen files.
#[test]
fn golden_recovery_is_byte_identical() {
    let fx = fixtures();
    let (a_path, y_path, golden) = (fx.join("golden_a.bin"), fx.join("golden_y.csv"), fx.join("golden_xhat.csv"));
    let update = std::env::var_os("NNSPL_UPDATE_GOLDEN").is_some();
    if update {
        fs::create_dir_all(&fx).unwrap();
        let mut rng = stream_rng(20240607, 0);
        let x = generate_block_sparse(&BlockSparseSpec::default(), &mut rng).unwrap();
        let a = generate_matrix(60, 100, &mut rng);
        write_matrix(&a_path, &a).unwrap();
        write_vector(&y_path, &a.matvec(&x)).unwrap();
    }

    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for name in ["first.csv", "second.csv"] {
        let out = bin()
            .args(["recover", a_path.to_str().unwrap(), y_path.to_str().unwrap(), "-o", name])
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        outputs.push((fs::read(dir.path().join(name)).unwrap(), out.stdout));
    }
    assert_eq!(outputs[0], outputs[1]);
    if update {
        fs::write(&golden, &outputs[0].0).unwrap();
    }
    assert_eq!(outputs[0].0, fs::read(&golden).unwrap(), "estimate differs from the frozen golden file");
}

#[test]
fn sweep_empty_grid_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["sweep", "--ratios", "", "-o", "agg.csv"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(dir.path().join("agg.csv")).unwrap(),
        "ratio,algo,trials,success_rate,pattern_rate,mean_nmse_db,mean_iters,mean_seconds\n"
    );
}

#[test]
fn sweep_is_reproducible_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let args = |jobs: &str, agg: &str, trials: &str| -> Vec<String> {
        ["sweep", "--ratios", "0.4,0.6", "--trials", "4", "--seed", "11", "-j", jobs, "-o", agg, "--trials-out", trials]
            .iter()
            .map(|s| s.to_string())
            .collect()
    };
    for (jobs, tag) in [("1", "a"), ("1", "b"), ("3", "c")] {
        let a = args(jobs, &format!("agg_{tag}.csv"), &format!("trials_{tag}.csv"));
        let out = bin().args(&a).current_dir(dir.path()).output().unwrap();
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let read = |f: &str| fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("agg_a.csv"), read("agg_b.csv"));
    assert_eq!(read("agg_a.csv"), read("agg_c.csv"));
    assert_eq!(read("trials_a.csv"), read("trials_c.csv"));

    let agg = String::from_utf8(read("agg_a.csv")).unwrap();
    let rows: Vec<&str> = agg.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("0.4,nnspl1d,4,"));
    assert!(rows[1].starts_with("0.4,indep,4,"));
    assert!(rows.iter().all(|r| r.ends_with(',')), "timing is off by default");
    let trials = String::from_utf8(read("trials_a.csv")).unwrap();
    assert_eq!(trials.lines().count(), 1 + 2 * 4 * 2);
}

#[test]
fn noisy_sweep_leaves_success_rate_empty() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["sweep", "--ratios", "0.5", "--trials", "2", "--snr-db", "30"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    for row in text.lines().skip(1) {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 8);
        assert_eq!(fields[3], "", "{row}");
        assert!(fields[5].parse::<f64>().is_ok(), "{row}");
    }
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.cfg"),
        "# small sweep\nratios = 0.5\ntrials = 2\nalgos = fullset\nseed = 3\n",
    )
    .unwrap();
    let out = run(&["sweep", "-c", "run.cfg", "--trials", "1"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("0.5,fullset,1,"), "{text}");

    fs::write(dir.path().join("bad.cfg"), "trials = 2\nwat = 1\n").unwrap();
    let out = run(&["sweep", "-c", "bad.cfg"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("bad.cfg:2:"), "{}", stderr(&out));
}

fn blob_image(w: usize, h: usize) -> GrayImage {
    let mut pixels = vec![0u8; w * h];
    for r in 3..9 {
        for c in 4..12 {
            pixels[r * w + c] = 200;
        }
    }
    GrayImage { width: w, height: h, maxval: 255, pixels }
}

#[test]
fn image_from_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let img = blob_image(16, 12);
    fs::write(dir.path().join("in.pgm"), pgm::encode_p2(&img)).unwrap();
    let out = run(
        &["image", "--input", "in.pgm", "--ratio", "0.6", "-o", "out.pgm", "--metrics-out", "m.csv"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rec = pgm::read(&dir.path().join("out.pgm")).unwrap();
    assert_eq!((rec.width, rec.height), (16, 12));
    let metrics = fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert_eq!(metrics.as_bytes(), out.stdout.as_slice());
    let row: Vec<&str> = metrics.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..5], &["12", "16", "115", "0.6", "nnspl2d"]);
    assert!(row[7].parse::<f64>().unwrap() < -60.0, "{metrics}");
    assert_eq!(rec.pixels, img.pixels, "noiseless recovery should requantize exactly");
}

#[test]
fn all_black_image_is_excluded_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let img = GrayImage { width: 4, height: 4, maxval: 255, pixels: vec![0; 16] };
    fs::write(dir.path().join("black.pgm"), pgm::encode_p5(&img)).unwrap();
    let out = run(&["image", "--input", "black.pgm", "-o", "out.pgm"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().contains(",excluded,,"), "{text}");
    assert!(pgm::read(&dir.path().join("out.pgm")).unwrap().pixels.iter().all(|&p| p == 0));
}

#[test]
fn unsupported_netpbm_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.ppm"), b"P6\n1 1\n255\n\x00\x00\x00").unwrap();
    let out = run(&["image", "--input", "c.ppm"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("unsupported Netpbm variant"), "{}", stderr(&out));
    fs::write(dir.path().join("deep.pgm"), b"P2\n1 1\n65535\n7\n").unwrap();
    let out = run(&["image", "--input", "deep.pgm"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("16-bit"), "{}", stderr(&out));
}

#[test]
fn synthetic_image_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let out = run(
            &["image", "--synthetic", "20x20", "--seed", "5", "-o", &format!("{name}.pgm"), "--metrics-out", &format!("{name}.csv")],
            dir.path(),
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let read = |f: &str| fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("a.pgm"), read("b.pgm"));
    assert_eq!(read("a.csv"), read("b.csv"));
}

#[test]
fn custom_adjacency_file() {
    let dir = tempfile::tempdir().unwrap();
    let n = 40;
    let x: Vec<f64> = (0..n).map(|i| if (10..30).contains(&i) { 3.0 } else { 0.0 }).collect();
    write_matrix(&dir.path().join("eye.csv"), &Matrix::identity(n)).unwrap();
    write_vector(&dir.path().join("y.csv"), &x).unwrap();
    let chain: String = (0..n)
        .map(|i| {
            let nb: Vec<String> = [i.checked_sub(1), (i + 1 < n).then_some(i + 1)]
                .into_iter()
                .flatten()
                .map(|j| j.to_string())
                .collect();
            format!("{i}: {}\n", nb.join(" "))
        })
        .collect();
    fs::write(dir.path().join("chain.adj"), chain).unwrap();

    let a = run(&["recover", "eye.csv", "y.csv", "-o", "a.csv"], dir.path());
    let b = run(&["recover", "eye.csv", "y.csv", "-o", "b.csv", "--adjacency", "chain.adj"], dir.path());
    assert_eq!(code(&a), 0);
    assert_eq!(code(&b), 0, "{}", stderr(&b));
    assert_eq!(fs::read(dir.path().join("a.csv")).unwrap(), fs::read(dir.path().join("b.csv")).unwrap());

    fs::write(dir.path().join("short.adj"), "0: 1\n1: 0\n").unwrap();
    let c = run(&["recover", "eye.csv", "y.csv", "--adjacency", "short.adj"], dir.path());
    assert_eq!(code(&c), 2);
}
