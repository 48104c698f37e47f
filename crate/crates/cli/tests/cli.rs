use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nwf_core::dataio::{synth::smooth_images, write_pnm};

const CONFIG: &str = "\
epochs = 1
batch_size = 4
repeat = 2
n_hidden = 1
hidden_channel = 8
patch_size = 16
patch_stride = 16
seed = 3
";

fn nwf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nwf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = nwf(args);
    assert!(
        out.status.success(),
        "nwf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes training images, a config and a trained model into `dir`.
fn trained_model(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    fs::create_dir(&data).unwrap();
    for (i, img) in smooth_images(4, 32, 32, 3, 11).iter().enumerate() {
        write_pnm(data.join(format!("img{i}.ppm")), img).unwrap();
    }
    let cfg = dir.join("c.cfg");
    fs::write(&cfg, CONFIG).unwrap();
    let model = dir.join("model.nwfm");
    ok(&[
        "train",
        "--config",
        p(&cfg),
        "--data",
        p(&data),
        "--out",
        p(&model),
    ]);
    model
}

#[test]
fn shell_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = trained_model(d);
    let input = d.join("in.ppm");
    write_pnm(&input, &smooth_images(1, 64, 32, 3, 5)[0]).unwrap();

    for ycbcr in [false, true] {
        let packed = d.join("f.nwf");
        let unpacked = d.join("out.ppm");
        let mut args = vec![
            "compress",
            p(&input),
            "--model",
            p(&model),
            "--out",
            p(&packed),
        ];
        if ycbcr {
            args.push("--ycbcr");
        }
        ok(&args);
        ok(&[
            "decompress",
            p(&packed),
            "--model",
            p(&model),
            "--out",
            p(&unpacked),
        ]);
        if !ycbcr {
            assert_eq!(fs::read(&input).unwrap(), fs::read(&unpacked).unwrap());
        }
    }

    let packed = d.join("g.nwf");
    ok(&[
        "compress",
        p(&input),
        "--model",
        p(&model),
        "--out",
        p(&packed),
    ]);
    let first = fs::read(&packed).unwrap();
    ok(&[
        "compress",
        p(&input),
        "--model",
        p(&model),
        "--out",
        p(&packed),
    ]);
    assert_eq!(first, fs::read(&packed).unwrap());

    let small = d.join("small.ppm");
    ok(&[
        "progressive",
        p(&packed),
        "--model",
        p(&model),
        "--levels",
        "1",
        "--out",
        p(&small),
    ]);
    let small = nwf_core::dataio::read_pnm(&small).unwrap();
    assert_eq!((small.width, small.height), (8, 4));

    let bad = nwf(&[
        "progressive",
        p(&packed),
        "--model",
        p(&model),
        "--levels",
        "9",
        "--out",
        p(&d.join("x.ppm")),
    ]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(String::from_utf8_lossy(&bad.stderr).lines().count(), 1);

    let bad = nwf(&[
        "compress",
        p(&input),
        "--model",
        p(&model),
        "--out",
        p(&packed),
        "--bogus",
    ]);
    assert_eq!(bad.status.code(), Some(2));

    let missing = nwf(&[
        "decompress",
        p(&d.join("none.nwf")),
        "--model",
        p(&model),
        "--out",
        p(&d.join("x.ppm")),
    ]);
    assert_eq!(missing.status.code(), Some(4));

    let odd = d.join("odd.ppm");
    write_pnm(&odd, &smooth_images(1, 48, 32, 3, 5)[0]).unwrap();
    let geom = nwf(&[
        "compress",
        p(&odd),
        "--model",
        p(&model),
        "--out",
        p(&d.join("x.nwf")),
    ]);
    assert_eq!(geom.status.code(), Some(6));

    let mut damaged = first.clone();
    damaged.truncate(first.len() - 3);
    fs::write(&packed, &damaged).unwrap();
    let trunc = nwf(&[
        "decompress",
        p(&packed),
        "--model",
        p(&model),
        "--out",
        p(&d.join("x.ppm")),
    ]);
    assert_eq!(trunc.status.code(), Some(8));
}

#[test]
fn upsample_analyze_and_selftest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = trained_model(d);
    let input = d.join("in.ppm");
    write_pnm(&input, &smooth_images(1, 16, 16, 3, 9)[0]).unwrap();

    let (a, b) = (d.join("a.ppm"), d.join("b.ppm"));
    for out in [&a, &b] {
        ok(&[
            "upsample",
            p(&input),
            "--model",
            p(&model),
            "--factor",
            "4",
            "--seed",
            "7",
            "--out",
            p(out),
        ]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let big = nwf_core::dataio::read_pnm(&a).unwrap();
    assert_eq!((big.width, big.height), (64, 64));

    let out_dir = d.join("analysis");
    ok(&[
        "analyze",
        "--model",
        p(&model),
        "--image",
        p(&a),
        "--out-dir",
        p(&out_dir),
    ]);
    for f in ["filters.csv", "response.csv", "mosaic.ppm"] {
        assert!(out_dir.join(f).metadata().unwrap().len() > 0, "{f} missing");
    }

    let st = ok(&["selftest"]);
    let text = String::from_utf8(st.stdout).unwrap();
    assert!(
        text.lines().count() >= 4 && !text.contains("FAIL"),
        "{text}"
    );
}

#[test]
fn training_is_reproducible() {
    let (x, y) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = fs::read(trained_model(x.path())).unwrap();
    let b = fs::read(trained_model(y.path())).unwrap();
    assert_eq!(a, b);
}
