//! Bundled fixtures under `fixtures/` and checks against their goldens.

use std::path::{Path, PathBuf};

use saliency3d::manifest::{AttributionManifest, ManifestLayer};
use saliency3d::pipeline::{attribute_to_dir, evaluate_dir, overlay_dir};
use saliency3d::viz::{encode_ppm, RgbImage};
use saliency3d::weakloc::{save_gt, BBox, EvalConfig, EvalMode, GtRecord};
use saliency3d::{read_container, write_container, Tensor, UpsampleSpec};

use super::{cam_oracle, color_oracle, noise, sum_relu_oracle};

pub const CLIP: &str = "fixture_0000";
pub const OTHER: &str = "fixture_0001";
pub const TARGET: [usize; 3] = [4, 8, 8];
pub const LAYERS: [&str; 2] = ["conv", "layer1"];
pub const ALPHA: f64 = 0.5;

pub fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn manifest_path() -> PathBuf {
    root().join("attribute/manifest.json")
}

pub fn gt_path() -> PathBuf {
    root().join("evaluate/boxes.jsonl")
}

/// Saliency inputs of the evaluate fixture.
pub fn eval_saliency_dir() -> PathBuf {
    root().join("evaluate/saliency")
}

pub fn frames_dir() -> PathBuf {
    root().join("overlay/frames")
}

pub fn golden_dir() -> PathBuf {
    root().join("golden")
}

pub fn eval_config(mode: EvalMode) -> EvalConfig {
    EvalConfig { mode, report_both_pointing: true, ..EvalConfig::video() }
}

pub fn report_name(mode: EvalMode) -> &'static str {
    match mode {
        EvalMode::BestIou => "report_best_iou",
        EvalMode::AllContours => "report_all_contours",
    }
}

fn records() -> Vec<(&'static str, Tensor, Tensor)> {
    let conv = [2, 2, 4, 4];
    let layer1 = [3, 1, 2, 2];
    let mut grad_conv = noise(11, 64, -0.4, 0.2);
    // a positive patch so the conv map has a compact blob
    for c in 0..2 {
        for t in 0..2 {
            for y in 1..3 {
                for x in 1..3 {
                    grad_conv[((c * 2 + t) * 4 + y) * 4 + x] += 0.9;
                }
            }
        }
    }
    vec![
        ("conv", Tensor::from_vec(&conv, noise(10, 64, 0.0, 2.0)).unwrap(), Tensor::from_vec(&conv, grad_conv).unwrap()),
        (
            "layer1",
            Tensor::from_vec(&layer1, noise(12, 12, 0.0, 1.0)).unwrap(),
            Tensor::from_vec(&layer1, noise(13, 12, -0.3, 0.6)).unwrap(),
        ),
    ]
}

fn other_saliency() -> Tensor {
    let mut v = vec![0f32; 4 * 8 * 8];
    for t in 0..4 {
        for y in 4..7 {
            for x in (1 + t / 2)..(4 + t / 2) {
                v[(t * 8 + y) * 8 + x] = 0.5 + 0.1 * (x + y) as f32;
            }
        }
    }
    v[(1 * 8) * 8 + 7] = 0.3;
    Tensor::from_vec(&TARGET, v).unwrap()
}

fn gt_records() -> Vec<GtRecord> {
    let b = |x0, y0, x1, y1| BBox { x0, y0, x1, y1 };
    let mut out = Vec::new();
    for f in 0..4 {
        let boxes = if f == 2 { vec![] } else { vec![b(1, 1, 4, 5)] };
        out.push(GtRecord { clip_id: CLIP.into(), frame: f, class: 1, boxes });
        let boxes = if f == 3 { vec![b(2, 4, 6, 7), b(0, 0, 2, 2)] } else { vec![b(1, 4, 5, 7)] };
        out.push(GtRecord { clip_id: OTHER.into(), frame: f, class: 2, boxes });
    }
    out
}

fn frames() -> Tensor {
    Tensor::from_vec(&TARGET, noise(14, 256, 0.0, 1.0)).unwrap()
}

/// Expected heatmap overlays, from the colormap and blend formulas.
fn overlay_oracle(sal: &Tensor, frames: &Tensor) -> Vec<RgbImage> {
    let m = sal.data().iter().copied().fold(0f32, f32::max) as f64;
    let byte = |v: f64| (v + 0.5).floor().clamp(0.0, 255.0) as u8;
    (0..TARGET[0])
        .map(|f| {
            let plane = TARGET[1] * TARGET[2];
            let mut px = Vec::with_capacity(3 * plane);
            for i in 0..plane {
                let s = ((sal.data()[f * plane + i] as f64 / m) as f32) as f64;
                let heat = color_oracle(s);
                let g = byte(frames.data()[f * plane + i] as f64 * 255.0) as f64;
                px.extend((0..3).map(|c| byte(ALPHA * heat[c] as f64 + (1.0 - ALPHA) * g)));
            }
            RgbImage::new(TARGET[2], TARGET[1], px).unwrap()
        })
        .collect()
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, bytes).unwrap();
}

/// Rebuilds every fixture and golden. Saliency and overlay goldens come from
/// the oracles; report goldens come from the engine on the fixed inputs.
pub fn regenerate() {
    let root = root();
    let attr = root.join("attribute");
    std::fs::create_dir_all(&attr).unwrap();
    let mut layers = Vec::new();
    let mut maps = Vec::new();
    for (id, a, g) in records() {
        write_container(&a, attr.join(format!("{id}_alpha.atc"))).unwrap();
        write_container(&g, attr.join(format!("{id}_grad.atc"))).unwrap();
        layers.push(ManifestLayer { id: id.into(), alpha: format!("{id}_alpha.atc"), grad: format!("{id}_grad.atc") });
        maps.push(cam_oracle(&a, &g, TARGET));
    }
    let manifest = AttributionManifest {
        clip_id: CLIP.into(),
        pred_class: 1,
        pred_score: 2.5,
        target_dims: TARGET.to_vec(),
        layers,
        counterfactual: false,
    };
    manifest.save(manifest_path()).unwrap();

    let golden = golden_dir();
    let sal = Tensor::from_f64(&TARGET, &sum_relu_oracle(&maps)).unwrap();
    std::fs::create_dir_all(golden.join("saliency")).unwrap();
    write_container(&sal, golden.join(format!("saliency/{CLIP}.atc"))).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    attribute_to_dir(&manifest_path(), &LAYERS.map(String::from), &UpsampleSpec::default(), tmp.path()).unwrap();
    std::fs::copy(tmp.path().join(format!("{CLIP}.json")), golden.join(format!("saliency/{CLIP}.json"))).unwrap();

    let eval = eval_saliency_dir();
    std::fs::create_dir_all(&eval).unwrap();
    write_container(&sal, eval.join(format!("{CLIP}.atc"))).unwrap();
    std::fs::copy(golden.join(format!("saliency/{CLIP}.json")), eval.join(format!("{CLIP}.json"))).unwrap();
    write_container(&other_saliency(), eval.join(format!("{OTHER}.atc"))).unwrap();
    let side = serde_json::json!({
        "clip_id": OTHER, "pred_class": 0, "pred_score": 1.25, "layers": ["conv"],
        "target_dims": TARGET, "gaussian_sigma": 0.0
    });
    write(&eval.join(format!("{OTHER}.json")), serde_json::to_string_pretty(&side).unwrap() + "\n");
    save_gt(&gt_records(), gt_path()).unwrap();
    for mode in [EvalMode::BestIou, EvalMode::AllContours] {
        let r = evaluate_dir(&eval, &gt_path(), &eval_config(mode)).unwrap();
        write(&golden.join(format!("{}.json", report_name(mode))), r.to_json() + "\n");
        write(&golden.join(format!("{}.csv", report_name(mode))), r.to_csv());
    }

    std::fs::create_dir_all(frames_dir()).unwrap();
    write_container(&frames(), frames_dir().join(format!("{CLIP}.atc"))).unwrap();
    for (f, img) in overlay_oracle(&sal, &frames()).iter().enumerate() {
        write(&golden.join(format!("overlay/{CLIP}_f{f}_overlay.ppm")), encode_ppm(img));
    }
}

/// Attribution of the bundled manifest against the golden volume.
pub fn check_attribute(out: &Path) -> Result<f64, String> {
    let path = attribute_to_dir(&manifest_path(), &LAYERS.map(String::from), &UpsampleSpec::default(), out)
        .map_err(|e| e.to_string())?;
    compare_saliency(&path)
}

pub fn compare_saliency(path: &Path) -> Result<f64, String> {
    let got = read_container(path).map_err(|e| e.to_string())?;
    let want = read_container(golden_dir().join(format!("saliency/{CLIP}.atc"))).map_err(|e| e.to_string())?;
    if got.dims() != want.dims() {
        return Err(format!("dims {:?} vs golden {:?}", got.dims(), want.dims()));
    }
    let err = got.data().iter().zip(want.data()).map(|(a, b)| (a - b).abs() as f64).fold(0.0, f64::max);
    if err > 1e-6 {
        return Err(format!("max deviation {err:.3e} from golden"));
    }
    let side = |p: PathBuf| std::fs::read_to_string(p).map_err(|e| e.to_string());
    if side(path.with_extension("json"))? != side(golden_dir().join(format!("saliency/{CLIP}.json")))? {
        return Err("sidecar differs from golden".into());
    }
    Ok(err)
}

/// Both evaluation modes against the golden report JSON and CSV.
pub fn check_reports() -> Result<(), String> {
    for mode in [EvalMode::BestIou, EvalMode::AllContours] {
        let r = evaluate_dir(&eval_saliency_dir(), &gt_path(), &eval_config(mode)).map_err(|e| e.to_string())?;
        compare_report(&r.to_json(), &r.to_csv(), mode)?;
    }
    Ok(())
}

pub fn compare_report(json: &str, csv: &str, mode: EvalMode) -> Result<(), String> {
    let name = report_name(mode);
    let want = std::fs::read_to_string(golden_dir().join(format!("{name}.json"))).map_err(|e| e.to_string())?;
    if json.trim_end() != want.trim_end() {
        return Err(format!("{name}.json differs from golden"));
    }
    let want = std::fs::read_to_string(golden_dir().join(format!("{name}.csv"))).map_err(|e| e.to_string())?;
    if csv != want {
        return Err(format!("{name}.csv differs from golden"));
    }
    Ok(())
}

pub fn check_overlays(out: &Path) -> Result<usize, String> {
    let written =
        overlay_dir(&golden_dir().join("saliency"), &frames_dir(), ALPHA, out).map_err(|e| e.to_string())?;
    compare_overlays(out)?;
    Ok(written.len())
}

pub fn compare_overlays(out: &Path) -> Result<(), String> {
    for f in 0..TARGET[0] {
        let name = format!("{CLIP}_f{f}_overlay.ppm");
        let got = std::fs::read(out.join(&name)).map_err(|e| format!("{name}: {e}"))?;
        let want = std::fs::read(golden_dir().join("overlay").join(&name)).map_err(|e| e.to_string())?;
        if got != want {
            return Err(format!("{name} differs from golden"));
        }
    }
    Ok(())
}
