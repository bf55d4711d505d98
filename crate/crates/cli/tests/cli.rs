use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rcs_deblur::recovery::{blur, block_scene, isnr, snr};
use rcs_deblur::Image;
use rcs_deblur_cli::config::PsfSpec;
use rcs_deblur_cli::imageio::{read_image, write_image};
use rcs_deblur_cli::{read_psf, synth_psf};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcs-deblur")).args(args).output().expect("run binary")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn scene(dir: &Path, name: &str) -> PathBuf {
    let p = dir.join(name);
    write_image(&p, &block_scene(32, 32, 4, 5, 17).unwrap()).unwrap();
    p
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn psf_prints_grid() {
    let text = stdout(&cli(&["psf", "--psf", "motion:3,0"]));
    assert!(text.starts_with("psf 1 3\n"));
    let k = rcs_deblur::recovery::psf_from_text(&text).unwrap();
    for v in k.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn unit_length_blur_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let input = scene(dir.path(), "x.png");
    let output = dir.path().join("y.png");
    stdout(&cli(&["blur", "--input", path(&input), "--output", path(&output), "--psf", "motion:1,45"]));
    assert_eq!(read_image(&output).unwrap(), read_image(&input).unwrap());
    let k = read_psf(&dir.path().join("y.psf")).unwrap();
    assert_eq!(k.data(), &[1.0]);
}

#[test]
fn blur_matches_library_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let input = scene(dir.path(), "x.png");
    let output = dir.path().join("y.png");
    stdout(&cli(&["blur", "--input", path(&input), "--output", path(&output), "--psf", "motion:7,30"]));

    let spec: PsfSpec = "motion:7,30".parse().unwrap();
    let y = blur(&read_image(&input).unwrap(), &synth_psf(&spec).unwrap(), 0.0, 0).unwrap();
    let expected = dir.path().join("lib.png");
    write_image(&expected, &y).unwrap();
    assert_eq!(std::fs::read(&output).unwrap(), std::fs::read(&expected).unwrap());
}

#[test]
fn noisy_blur_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let input = scene(dir.path(), "x.pgm");
    let run = |name: &str, seed: &str| {
        let output = dir.path().join(name);
        let args = ["blur", "--input", path(&input), "--output", path(&output), "--psf", "gaussian:2,1.0"];
        stdout(&cli(&[&args[..], &["--noise", "0.05", "--seed", seed]].concat()));
        std::fs::read(output).unwrap()
    };
    let (a, b, c) = (run("a.pgm", "4"), run("b.pgm", "4"), run("c.pgm", "5"));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn identity_deblur_peaks_at_centre() {
    let dir = tempfile::tempdir().unwrap();
    let input = scene(dir.path(), "x.png");
    let output = dir.path().join("r.png");
    let report = stdout(&cli(&[
        "deblur", "--input", path(&input), "--output", path(&output), "--bbox", "3x3", "--truth", path(&input),
    ]));
    assert!(report.contains("kernel_support="));
    assert!(report.contains("SNR="));
    assert!(!report.contains("ISNR="));
    let k = read_psf(&dir.path().join("r.psf")).unwrap();
    let peak = (0..9).max_by(|&a, &b| k.data()[a].total_cmp(&k.data()[b])).unwrap();
    assert_eq!(peak, 4);
    for suffix in ["r.trace.csv", "r.kernel.mask", "r.image.mask"] {
        assert!(dir.path().join(suffix).exists(), "{suffix} missing");
    }
    let csv = std::fs::read_to_string(dir.path().join("r.trace.csv")).unwrap();
    assert!(csv.starts_with("iter,lagrangian,residual_norm,factor_imbalance,w_min,w_max,sigma\n"));
}

#[test]
fn batch_deblur_writes_per_image_directories() {
    let dir = tempfile::tempdir().unwrap();
    let a = scene(dir.path(), "a.png");
    let b = scene(dir.path(), "b.png");
    let out = dir.path().join("out");
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "bbox = 3x3\nimage_keep_fraction = 0.05\nlbfgs_max_iters = 50\n").unwrap();
    let report = stdout(&cli(&["deblur", "--input", path(&a), path(&b), "--output", path(&out), "--config", path(&cfg)]));
    assert!(report.contains("[") && report.matches("kernel_support=").count() == 2);
    for stem in ["a", "b"] {
        for file in ["recovered.png", "kernel.psf", "trace.csv", "kernel.mask", "image.mask"] {
            assert!(out.join(stem).join(file).exists(), "{stem}/{file} missing");
        }
    }
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&[
        "deblur", "--input", path(&dir.path().join("absent.png")), "--output", path(&dir.path().join("r.png")), "--bbox",
        "3x3",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.png"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let input = scene(dir.path(), "x.png");
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "lamda = 0.1\n").unwrap();
    let output = dir.path().join("r.png");
    let bad_key = cli(&["deblur", "--input", path(&input), "--output", path(&output), "--config", path(&cfg)]);
    assert_eq!(bad_key.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_key.stderr).contains("lamda"));
    let no_bbox = cli(&["deblur", "--input", path(&input), "--output", path(&output)]);
    assert_eq!(no_bbox.status.code(), Some(2));
}

#[test]
fn metrics_report() {
    let dir = tempfile::tempdir().unwrap();
    let truth = scene(dir.path(), "x.png");
    let blurred = dir.path().join("y.png");
    stdout(&cli(&["blur", "--input", path(&truth), "--output", path(&blurred), "--psf", "motion:5,30"]));
    let run = |rec: &Path| {
        stdout(&cli(&["metrics", "--input", path(&blurred), "--truth", path(&truth), "--recovered", path(rec)]))
    };
    assert!(run(&blurred).contains("ISNR=0.0000"));
    assert!(run(&truth).starts_with("SNR=300.0000\n"));

    let rec = dir.path().join("rec.png");
    let x = read_image(&truth).unwrap();
    let guess = Image::from_fn(32, 32, |r, c| 0.5 * x.get(r, c) + 0.25).unwrap();
    write_image(&rec, &guess).unwrap();
    let (y, g) = (read_image(&blurred).unwrap(), read_image(&rec).unwrap());
    let expected = format!("SNR={:.4}\nISNR={:.4}\n", snr(&x, &g).unwrap(), isnr(&y, &x, &g).unwrap());
    assert_eq!(run(&rec), expected);
}
