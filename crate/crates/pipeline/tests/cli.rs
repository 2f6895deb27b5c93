mod support;

use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vessel_core::coarse::{connected_components_3d, Connectivity3};
use vessel_core::losses::{BCE_CLAMP, DICE_SMOOTH};
use vessel_core::metrics::dice_coefficient;
use vessel_core::nifti::{load_nifti_mask, save_nifti, save_nifti_mask};
use vessel_core::projection::CropSidecar;
use vessel_core::volume::{apply_crop_mask, CropBox};
use vessel_core::{BinaryMask3, Dims3, Spacing, Volume3d};

fn vesselprep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vesselprep")).args(args).env("RUST_LOG", "info").output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn count_files(dir: &Path) -> usize {
    std::fs::read_dir(dir).map_or(0, |d| d.count())
}

fn preprocess(input: &Path, output: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["preprocess", "--input", p(input), "--output", p(output), "--threads", "2"];
    args.extend_from_slice(extra);
    vesselprep(&args)
}

#[test]
fn preprocess_outputs_and_collision_guard() {
    let tmp = tempfile::tempdir().unwrap();
    let (input, output) = (tmp.path().join("in"), tmp.path().join("out"));
    let phantoms = support::write_phantom_inputs(&input, 3);

    let first = preprocess(&input, &output, &[]);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    for kind in ["cropped", "vei", "cvs", "mip", "sidecar"] {
        assert_eq!(count_files(&output.join(kind)), 3, "{kind}");
    }
    assert!(!output.join("vei_scales").exists());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(output.join("run_report.json")).unwrap()).unwrap();
    assert_eq!(report["aggregate"]["subjects"], 3);
    assert_eq!(report["aggregate"]["failures"], 0);

    for (i, ph) in phantoms.iter().enumerate() {
        let id = format!("sub-0{i}");
        let sc: CropSidecar =
            serde_json::from_slice(&std::fs::read(output.join(format!("sidecar/{id}.json"))).unwrap()).unwrap();
        assert_eq!(sc.orig_dims, ph.volume.dims().as_array());
        assert!(sc.cr > 0.0 && sc.cr < 1.0);
        // the crop keeps the whole head and the coarse mask follows the tubes
        let head = apply_crop_mask(&ph.head, &sc.crop_box).unwrap();
        assert!(head.count() as f64 >= 0.95 * ph.head.count() as f64);
        let cvs = load_nifti_mask(output.join(format!("cvs/{id}.nii.gz"))).unwrap();
        assert_eq!(cvs.dims().as_array(), sc.cropped_dims);
        assert!(connected_components_3d(&cvs, Connectivity3::TwentySix).count() <= 4);
        let truth = apply_crop_mask(&ph.vessels, &sc.crop_box).unwrap();
        // tubes fill less than the retained 5%, so recall is the meaningful check
        let hit = cvs.bits().iter().zip(truth.bits()).filter(|(a, b)| **a && **b).count();
        let recall = hit as f64 / truth.count() as f64;
        assert!(recall > 0.95, "{id}: recall {recall}");
        assert!(dice_coefficient(&cvs, &truth).unwrap() > 0.3);
    }

    let again = preprocess(&input, &output, &[]);
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("already exist"));

    let forced = preprocess(&input, &output, &["--overwrite"]);
    assert_eq!(forced.status.code(), Some(0), "{}", String::from_utf8_lossy(&forced.stderr));
}

#[test]
fn corrupt_input_is_a_partial_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let (input, output) = (tmp.path().join("in"), tmp.path().join("out"));
    support::write_phantom_inputs(&input, 2);
    std::fs::write(input.join("broken.nii"), b"not a nifti header").unwrap();

    let out = preprocess(&input, &output, &["--no-mip"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!output.join("mip").exists());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(output.join("run_report.json")).unwrap()).unwrap();
    let records = report["records"].as_array().unwrap();
    let broken = records.iter().find(|r| r["subject_id"] == "broken").unwrap();
    assert_eq!(broken["status"], "failed");
    assert!(broken["error"].as_str().unwrap().contains("broken.nii"));
    assert_eq!(count_files(&output.join("cvs")), 2);
}

#[test]
fn config_file_with_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    support::write_phantom_inputs(&tmp.path().join("raw"), 1);
    let cfg = tmp.path().join("prep.toml");
    std::fs::write(
        &cfg,
        "input_dir = \"raw\"\noutput_dir = \"prep\"\nemit_per_scale = true\n\n[frangi]\nscales = [1.0, 2.0]\n\n[coarse]\nk = 3\n",
    )
    .unwrap();
    let out = vesselprep(&["preprocess", "--config", p(&cfg), "--components", "1", "--no-mip"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let prep = tmp.path().join("prep");
    assert_eq!(count_files(&prep.join("vei_scales")), 2);
    assert!(!prep.join("mip").exists());
    let cvs = load_nifti_mask(prep.join("cvs/sub-00.nii.gz")).unwrap();
    assert_eq!(connected_components_3d(&cvs, Connectivity3::TwentySix).count(), 1);

    std::fs::write(&cfg, "input_dir = \"raw\"\nunknown_key = 1\n").unwrap();
    let bad = vesselprep(&["preprocess", "--config", p(&cfg)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown_key"));
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

fn cube_mask(x_end: usize) -> BinaryMask3 {
    let sp = Spacing::new(0.5, 0.5, 1.0).unwrap();
    BinaryMask3::from_fn(Dims3::new(16, 16, 8), sp, |x, y, z| {
        (4..x_end).contains(&x) && (4..12).contains(&y) && (2..6).contains(&z)
    })
    .unwrap()
}

#[test]
fn metrics_against_itself_and_half_overlap() {
    let tmp = tempfile::tempdir().unwrap();
    let (pred, gt) = (tmp.path().join("pred"), tmp.path().join("gt"));
    save_nifti_mask(&cube_mask(12), pred.join("a.nii.gz")).unwrap();
    save_nifti_mask(&cube_mask(12), gt.join("a.nii.gz")).unwrap();
    save_nifti_mask(&cube_mask(8), pred.join("b.nii.gz")).unwrap();
    save_nifti_mask(&cube_mask(12), gt.join("b.nii.gz")).unwrap();

    let csv_path = tmp.path().join("m.csv");
    let out = vesselprep(&["metrics", "--pred", p(&pred), "--gt", p(&gt), "--out", p(&csv_path)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&csv_path);
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0], ["a", "1", "1", "0"]);
    assert_eq!(rows[1][0], "b");
    let dice: f64 = rows[1][1].parse().unwrap();
    assert!((dice - 2.0 / 3.0).abs() < 1e-12);
    // the half box is 2 mm short of the full one along x
    let hd: f64 = rows[1][3].parse().unwrap();
    assert!((hd - 2.0).abs() < 1e-12, "{hd}");
    assert_eq!(rows[2][0], "mean");
    assert!((rows[2][1].parse::<f64>().unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    assert_eq!(rows[3][0], "std");

    let vox = vesselprep(&["metrics", "--pred", p(&pred), "--gt", p(&gt), "--out", p(&csv_path), "--voxel-units"]);
    assert_eq!(vox.status.code(), Some(0));
    assert_eq!(read_csv(&csv_path)[1][3].parse::<f64>().unwrap(), 4.0);
}

#[test]
fn metrics_stem_mismatches() {
    let tmp = tempfile::tempdir().unwrap();
    let (pred, gt) = (tmp.path().join("pred"), tmp.path().join("gt"));
    save_nifti_mask(&cube_mask(12), pred.join("a.nii.gz")).unwrap();
    save_nifti_mask(&cube_mask(12), gt.join("z.nii.gz")).unwrap();
    let csv_path = tmp.path().join("m.csv");
    let none = vesselprep(&["metrics", "--pred", p(&pred), "--gt", p(&gt), "--out", p(&csv_path)]);
    assert_eq!(none.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&none.stderr).contains("no matching subject stems"));

    save_nifti_mask(&cube_mask(12), gt.join("a.nii.gz")).unwrap();
    let partial = vesselprep(&["metrics", "--pred", p(&pred), "--gt", p(&gt), "--out", p(&csv_path)]);
    assert_eq!(partial.status.code(), Some(2));
    assert_eq!(read_csv(&csv_path)[0][0], "a");
}

fn write_loss_inputs(dir: &Path, vols: [&Volume3d; 4], target: &BinaryMask3) -> Vec<String> {
    let names = ["pred_vei", "target_vei", "pred_seg", "input"];
    for (v, n) in vols.iter().zip(names) {
        save_nifti(*v, dir.join(format!("{n}.nii.gz"))).unwrap();
    }
    save_nifti_mask(target, dir.join("target_seg.nii.gz")).unwrap();
    let path = |n: &str| dir.join(format!("{n}.nii.gz")).to_str().unwrap().to_string();
    vec![
        "losses".into(),
        "--pred-vei".into(),
        path("pred_vei"),
        "--target-vei".into(),
        path("target_vei"),
        "--pred-seg".into(),
        path("pred_seg"),
        "--target-seg".into(),
        path("target_seg"),
        "--input".into(),
        path("input"),
    ]
}

fn run_losses_cli(args: &[String]) -> serde_json::Value {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = vesselprep(&refs);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn losses_fixtures() {
    let tmp = tempfile::tempdir().unwrap();
    let d = Dims3::new(4, 4, 4);
    let sp = Spacing::ISOTROPIC;

    // a hand-computable fixture
    let input = Volume3d::from_fn(d, sp, |x, y, z| ((x + y + z) % 3) as f64 / 2.0).unwrap();
    let target_vei = input.map(|v| v + 0.25);
    let half = Volume3d::filled(d, sp, 0.5).unwrap();
    let left = BinaryMask3::from_fn(d, sp, |x, _, _| x < 2).unwrap();
    let args = write_loss_inputs(tmp.path(), [&input, &target_vei, &half, &input], &left);
    let r = run_losses_cli(&args);
    let dice = 1.0 - (2.0 * 16.0 + DICE_SMOOTH) / (32.0 + 32.0 + DICE_SMOOTH);
    let want = 0.4 * 0.25 + 0.4 * (dice + std::f64::consts::LN_2);
    assert_eq!(r["rgn"].as_f64().unwrap(), 0.25);
    assert_eq!(r["consistency"].as_f64().unwrap(), 0.0);
    assert!((r["total"].as_f64().unwrap() - want).abs() < 1e-12);

    // identical volumes cost nothing but the segmentation term
    let args = write_loss_inputs(tmp.path(), [&input, &input, &half, &input], &left);
    let r = run_losses_cli(&args);
    assert_eq!(r["rgn"].as_f64().unwrap(), 0.0);
    assert_eq!(r["consistency"].as_f64().unwrap(), 0.0);

    // random fixture against a direct recomputation, written to a file
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut rv = || Volume3d::from_fn(d, sp, |_, _, _| rng.random_range(0.0..1.0)).unwrap();
    let (pv, tv, ps, inp) = (rv(), rv(), rv(), rv());
    let ts = BinaryMask3::from_fn(d, sp, |x, y, z| inp.get(x, y, z) > 0.5).unwrap();
    let mut args = write_loss_inputs(tmp.path(), [&pv, &tv, &ps, &inp], &ts);
    let json_path = tmp.path().join("loss.json");
    args.extend(["--g1".into(), "0.5".into(), "--g2".into(), "0.3".into(), "--g3".into(), "0.2".into()]);
    args.extend(["--out".into(), p(&json_path).to_string()]);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(vesselprep(&refs).status.code(), Some(0));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&json_path).unwrap()).unwrap();

    let n = d.len() as f64;
    let rgn = pv.data().iter().zip(tv.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let (mut inter, mut sp_, mut st, mut bce) = (0.0, 0.0, 0.0, 0.0);
    for (&q, &t) in ps.data().iter().zip(ts.bits()) {
        let qc = q.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let t = f64::from(u8::from(t));
        inter += q * t;
        sp_ += q;
        st += t;
        bce -= t * qc.ln() + (1.0 - t) * (1.0 - qc).ln();
    }
    let seg = 1.0 - (2.0 * inter + DICE_SMOOTH) / (sp_ + st + DICE_SMOOTH) + bce / n;
    let mut cons = 0.0;
    for y in 0..4 {
        for x in 0..4 {
            let a = (0..4).map(|z| ps.get(x, y, z) * pv.get(x, y, z)).fold(f64::MIN, f64::max);
            let b = (0..4).map(|z| ps.get(x, y, z) * inp.get(x, y, z)).fold(f64::MIN, f64::max);
            cons += (a - b).abs();
        }
    }
    cons /= 16.0;
    let total = 0.5 * rgn + 0.3 * seg + 0.2 * cons;
    for (key, want) in [("rgn", rgn), ("seg", seg), ("consistency", cons), ("total", total)] {
        let got = r[key].as_f64().unwrap();
        assert!((got - want).abs() < 1e-9, "{key}: {got} vs {want}");
    }

    let bad = vesselprep(&[&refs[..11], &["--g1=-1"]].concat());
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn report_from_sidecars() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("sidecar");
    std::fs::create_dir_all(&dir).unwrap();
    let orig = Dims3::new(100, 100, 4);
    let boxes = [
        CropBox::full(orig),
        CropBox { x1: 50, ..CropBox::full(orig) },
        CropBox { x0: 10, x1: 11, y0: 20, y1: 21, ..CropBox::full(orig) },
    ];
    for (i, b) in boxes.iter().enumerate() {
        let sc = CropSidecar::new(format!("s{i}"), orig, *b).unwrap();
        std::fs::write(dir.join(format!("s{i}.json")), serde_json::to_string(&sc).unwrap()).unwrap();
    }
    let out = vesselprep(&["report", "--dir", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let hist = read_csv(&tmp.path().join("cr_histogram.csv"));
    assert_eq!(hist.len(), 20);
    let counts: Vec<usize> = hist.iter().map(|r| r[2].parse().unwrap()).collect();
    assert_eq!(counts.iter().sum::<usize>(), 3);
    assert_eq!((counts[0], counts[10], counts[19]), (1, 1, 1));
    let summary = std::fs::read_to_string(tmp.path().join("cr_summary.txt")).unwrap();
    let mean = (0.0 + 0.5 + 0.9999) / 3.0;
    assert!(summary.contains(&format!("{mean:.4}")), "{summary}");

    let empty = tempfile::tempdir().unwrap();
    assert_eq!(vesselprep(&["report", "--dir", p(empty.path())]).status.code(), Some(1));
}
