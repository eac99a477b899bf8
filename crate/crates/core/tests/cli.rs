use std::path::Path;

use endogeo::cli::run;
use endogeo::io::{read_depth_pfm, write_depth_pfm, write_rgb_ppm};
use endogeo::types::{DepthMap, RgbImage};

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn endogeo(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("endogeo").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn value<'a>(stdout: &'a str, key: &str) -> &'a str {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key}= in {stdout:?}"))
}

fn ramp(w: usize, h: usize, base: f64) -> DepthMap {
    DepthMap::new(w, h, (0..w * h).map(|i| base + 0.01 * (i % w) as f64 + 0.02 * (i / w) as f64).collect()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn eval_of_identical_maps_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.pfm");
    write_depth_pfm(&ramp(6, 5, 1.0), &gt).unwrap();
    let o = endogeo(&["eval", "--pred", s(&gt), "--gt", s(&gt)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(value(&o.stdout, "rmse"), "0");
    assert_eq!(value(&o.stdout, "a1"), "1");
    assert_eq!(value(&o.stdout, "n_valid"), "30");
}

#[test]
fn eval_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let (gt, pred, json) = (dir.path().join("gt.pfm"), dir.path().join("p.pfm"), dir.path().join("m.json"));
    write_depth_pfm(&ramp(6, 5, 1.0), &gt).unwrap();
    write_depth_pfm(&ramp(6, 5, 2.0), &pred).unwrap();
    let o = endogeo(&["eval", "--pred", s(&pred), "--gt", s(&gt), "--median-scale", "--json", s(&json)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let rmse: f64 = value(&o.stdout, "rmse").parse().unwrap();
    assert_eq!(v["rmse"].as_f64().unwrap(), rmse);
}

#[test]
fn gradcheck_depth_passes() {
    let o = endogeo(&["gradcheck", "--loss", "depth", "--size", "8,8", "--seed", "1"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let err: f64 = value(&o.stdout, "max_rel_error").parse().unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn gradcheck_unknown_loss_is_a_domain_error() {
    let o = endogeo(&["gradcheck", "--loss", "chamfer"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.starts_with("InvalidConfig"), "{}", o.stderr);
}

#[test]
fn loss_shape_mismatch_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt, img) = (dir.path().join("p.pfm"), dir.path().join("g.pfm"), dir.path().join("i.ppm"));
    write_depth_pfm(&ramp(6, 6, 1.0), &pred).unwrap();
    write_depth_pfm(&ramp(5, 6, 1.0), &gt).unwrap();
    write_rgb_ppm(&RgbImage::filled(5, 6, 0.4).unwrap(), &img).unwrap();
    let o = endogeo(&["loss", "--pred", s(&pred), "--gt", s(&gt), "--image", s(&img)]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.starts_with("ShapeMismatch"), "{}", o.stderr);
    assert!(o.stdout.is_empty());
}

#[test]
fn loss_prints_every_term_and_the_weighted_total() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt, img) = (dir.path().join("p.pfm"), dir.path().join("g.pfm"), dir.path().join("i.ppm"));
    write_depth_pfm(&ramp(8, 8, 1.1), &pred).unwrap();
    write_depth_pfm(&ramp(8, 8, 1.0), &gt).unwrap();
    write_rgb_ppm(&RgbImage::filled(8, 8, 0.4).unwrap(), &img).unwrap();
    let o = endogeo(&["loss", "--pred", s(&pred), "--gt", s(&gt), "--image", s(&img), "--grid", "6,6,6"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let get = |k: &str| value(&o.stdout, k).parse::<f64>().unwrap();
    let expect = get("depth") + get("smooth") + 0.5 * (get("grad") + get("normal")) + 0.1 * get("sdf");
    assert!((get("total") - expect).abs() <= 1e-12 * expect.max(1.0));
    assert!((get("depth") - 0.1).abs() < 1e-6);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(endogeo(&["eval", "--bogus"]).code, 2);
    assert_eq!(endogeo(&[]).code, 2);
    assert_eq!(endogeo(&["gradcheck", "--loss", "depth", "--size", "8"]).code, 2);
    assert_eq!(endogeo(&["refine", "--gt", "a", "--image", "b", "--case", "7"]).code, 2);
    assert_eq!(endogeo(&["synth", "--out", "x", "--preset", "jejunum"]).code, 2);
}

#[test]
fn help_exits_zero() {
    let o = endogeo(&["--help"]);
    assert_eq!(o.code, 0);
    assert!(o.stdout.contains("gradcheck"));
}

#[test]
fn missing_input_is_an_io_failure() {
    let o = endogeo(&["cloud", "--depth", "/nonexistent/d.pfm", "--out", "/tmp/x.ply"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.starts_with("IoFailure"), "{}", o.stderr);
}

#[test]
fn repeated_runs_print_identical_bytes() {
    let a = endogeo(&["gradcheck", "--loss", "total", "--size", "6,7", "--seed", "3"]);
    let b = endogeo(&["gradcheck", "--loss", "total", "--size", "6,7", "--seed", "3"]);
    assert_eq!(a.code, 0, "{}", a.stderr);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn synth_accepts_preset_lists_and_regenerates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("set");
    let o = endogeo(&["synth", "--preset", "colon,duodenum", "--count", "2", "--seed", "5", "--size", "12,16", "--out", s(&out)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(value(&o.stdout, "frames"), "2");
    let manifest = endogeo::synth::Manifest::read(&out).unwrap();
    let presets: Vec<_> = manifest.frames.iter().map(|f| f.preset).collect();
    assert!(presets.iter().all(|p| matches!(p, endogeo::synth::Preset::Colon | endogeo::synth::Preset::Duodenum)));

    let again = dir.path().join("again");
    let o = endogeo(&["synth", "--from-manifest", s(&out), "--out", s(&again)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    for f in &manifest.frames {
        assert_eq!(std::fs::read(out.join(&f.depth_file)).unwrap(), std::fs::read(again.join(&f.depth_file)).unwrap());
        assert_eq!(std::fs::read(out.join(&f.rgb_file)).unwrap(), std::fs::read(again.join(&f.rgb_file)).unwrap());
    }
}

#[test]
fn synth_single_preset_and_default() {
    let dir = tempfile::tempdir().unwrap();
    let o = endogeo(&["synth", "--preset", "stomach", "--count", "1", "--size", "8,8", "--out", s(dir.path())]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let m = endogeo::synth::Manifest::read(dir.path()).unwrap();
    assert_eq!(m.frames[0].preset, endogeo::synth::Preset::Stomach);
}

#[test]
fn cloud_and_sdf_write_ply() {
    let dir = tempfile::tempdir().unwrap();
    let depth = dir.path().join("d.pfm");
    let mut mask = vec![true; 36];
    mask[7] = false;
    write_depth_pfm(&DepthMap::with_mask(6, 6, ramp(6, 6, 1.0).data().to_vec(), mask).unwrap(), &depth).unwrap();

    let ply = dir.path().join("c.ply");
    let o = endogeo(&["cloud", "--depth", s(&depth), "--out", s(&ply)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(value(&o.stdout, "points"), "35");
    assert!(std::fs::read_to_string(&ply).unwrap().contains("element vertex 35\n"));

    let sdf = dir.path().join("s.ply");
    let o = endogeo(&["sdf", "--depth", s(&depth), "--grid", "4,4,4", "--out", s(&sdf)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let samples: usize = value(&o.stdout, "samples").parse().unwrap();
    let included: usize = value(&o.stdout, "included").parse().unwrap();
    let excluded: usize = value(&o.stdout, "excluded").parse().unwrap();
    assert_eq!(samples, 64);
    assert_eq!(included + excluded, samples);
    let text = std::fs::read_to_string(&sdf).unwrap();
    assert!(text.contains(&format!("element vertex {included}\n")));
    assert!(text.contains("property float sdf\n"));
}

#[test]
fn refine_writes_trace_and_output() {
    let dir = tempfile::tempdir().unwrap();
    let (gt, img, trace, out) = (
        dir.path().join("g.pfm"),
        dir.path().join("i.ppm"),
        dir.path().join("t.csv"),
        dir.path().join("o.pfm"),
    );
    write_depth_pfm(&ramp(10, 10, 2.0), &gt).unwrap();
    write_rgb_ppm(&RgbImage::filled(10, 10, 0.5).unwrap(), &img).unwrap();
    let o = endogeo(&[
        "refine", "--gt", s(&gt), "--image", s(&img), "--case", "case1", "--iters", "30", "--seed", "2", "--trace", s(&trace), "--out", s(&out),
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(value(&o.stdout, "case"), "case1");
    let csv = std::fs::read_to_string(&trace).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(endogeo::refine::TRACE_HEADER));
    let its: Vec<usize> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(its, vec![0, 10, 20, 30]);
    assert_eq!(read_depth_pfm(&out).unwrap().width(), 10);
    let initial: f64 = value(&o.stdout, "initial_rmse").parse().unwrap();
    let last: f64 = value(&o.stdout, "final_rmse").parse().unwrap();
    assert!(last < initial);
}

#[test]
fn ablate_over_a_synth_directory() {
    let dir = tempfile::tempdir().unwrap();
    let o = endogeo(&["synth", "--preset", "colon", "--count", "1", "--size", "10,10", "--out", s(dir.path())]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let table = dir.path().join("t.csv");
    let o = endogeo(&["ablate", "--fixtures", s(dir.path()), "--seeds", "2", "--iters", "5", "--table", s(&table)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(value(&o.stdout, "case4_beats_case1").ends_with("/2"));
    let csv = std::fs::read_to_string(&table).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 8));
}
