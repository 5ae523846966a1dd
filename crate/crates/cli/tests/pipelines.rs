use mpcc_cli::image::{psnr, GrayImage, Rect};
use mpcc_cli::meter::SyntheticMeter;
use mpcc_cli::pipeline::demo_master_key;
use mpcc_cli::pipeline::image::{run_image, ImageConfig};
use mpcc_cli::pipeline::smartmeter::{run_smartmeter, SmartMeterConfig};
use mpcc_cli::{scene, Config};
use mpcc_core::dct_basis;

fn image_config(dir: &std::path::Path, rates: &str, sensitive: &str) -> ImageConfig {
    let mut cfg = Config::default();
    cfg.set("out", dir.display().to_string());
    cfg.set("blocksize", "8");
    cfg.set("rates", rates);
    cfg.set("sensitive", sensitive);
    ImageConfig::from_config(&cfg).unwrap()
}

#[test]
fn full_rate_image_is_exact_for_the_superuser() {
    let dir = tempfile::tempdir().unwrap();
    let image = scene::test_scene(64);
    let rect = Rect {
        x: 20,
        y: 36,
        w: 10,
        h: 12,
    };
    let cfg = image_config(dir.path(), "1.0", "20,36,10,12");
    let report = run_image(&image, &dct_basis(64).unwrap(), &demo_master_key(0), &cfg).unwrap();
    let out = &report.rates[0];
    assert_eq!(out.m, 64);
    let worst = image
        .pixels()
        .iter()
        .zip(out.superuser.pixels())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-9, "superuser off by {worst}");

    for br in 0..8 {
        for bc in 0..8 {
            let (a, b) = (out.semi.block(br, bc, 8), out.superuser.block(br, bc, 8));
            if rect.intersects(bc * 8, br * 8, 8, 8) {
                let (ta, tb) = (
                    GrayImage::new(8, 8, a).unwrap(),
                    GrayImage::new(8, 8, b).unwrap(),
                );
                // dark blocks lose less energy when scrambled
                assert!(psnr(&tb.quantized(), &ta.quantized()).unwrap() < 20.0);
            } else {
                assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-9));
            }
        }
    }
    assert_eq!(out.semi_block_psnr.len(), 4);
    let row = report.psnr.rows[0];
    assert_eq!(row.super_complete, f64::INFINITY);
    assert!(row.semi_sensitive < 15.0);
}

#[test]
fn image_artifacts_are_reproducible() {
    let image = scene::test_scene(64);
    let basis = dct_basis(64).unwrap();
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let cfg = image_config(dir.path(), "0.5,0.8", "20,36,10,12");
        let report = run_image(&image, &basis, &demo_master_key(0), &cfg).unwrap();
        let files = report.write_artifacts(dir.path()).unwrap();
        let contents: Vec<Vec<u8>> = files.iter().map(|p| std::fs::read(p).unwrap()).collect();
        (
            files
                .iter()
                .map(|p| p.file_name().unwrap().to_owned())
                .collect::<Vec<_>>(),
            contents,
        )
    };
    let (names, first) = run();
    let (_, second) = run();
    assert_eq!(names.len(), 2 * 3 + 2);
    assert_eq!(first, second);
}

#[test]
fn smartmeter_artifacts_are_reproducible() {
    let frames = SyntheticMeter::default().frames(6).unwrap();
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = Config::default();
        cfg.set("out", dir.path().display().to_string());
        let sm = SmartMeterConfig::from_config(&cfg).unwrap();
        let report = run_smartmeter(&frames, &demo_master_key(0), &sm).unwrap();
        assert_eq!(report.frames.len(), 6);
        assert!(report
            .frames
            .iter()
            .all(|f| f.super_rel_error < 1e-3 && f.histogram_match));
        assert!(report
            .frames
            .iter()
            .all(|f| (f.semi_mean - f.super_mean).abs() < 1e-6));
        let files = report.write_artifacts(dir.path()).unwrap();
        files
            .iter()
            .map(|p| std::fs::read(p).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn a_different_key_changes_the_ciphertext_view_only() {
    let frames = SyntheticMeter::default().frames(2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = Config::default();
    cfg.set("out", dir.path().display().to_string());
    let sm = SmartMeterConfig::from_config(&cfg).unwrap();
    let a = run_smartmeter(&frames, &demo_master_key(0), &sm).unwrap();
    let b = run_smartmeter(&frames, &demo_master_key(1), &sm).unwrap();
    let (ta, tb) = (a.traces.unwrap(), b.traces.unwrap());
    assert_ne!(ta.cloud, tb.cloud);
    assert_eq!(ta.original, tb.original);
    let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| (p - q).abs() < 1e-9);
    assert!(close(&ta.superuser, &tb.superuser));
}
