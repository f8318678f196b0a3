use std::sync::OnceLock;

use vitactip::config::Config;
use vitactip::conversion::{disk_mask, image_similarity, Converter, MarkerSet, PSNR_CAP_DB};
use vitactip::frame::Frame;
use vitactip::mechanics::{solve_contact, DeformationState};
use vitactip::optics::{marker_disk, render, Background, RenderPass, SceneObject, VisualScene};
use vitactip::protocol::{SampleRng, Task};
use vitactip::sensor::{build_sensor, SensorMode, SensorModel, SensorSpec};
use vitactip::stimulus::Placement;
use vitactip::camera::FisheyeCamera;
use vitactip::Error;

fn config() -> &'static Config {
    static CONFIG: OnceLock<Config> = OnceLock::new();
    CONFIG.get_or_init(Config::default)
}

fn model() -> &'static SensorModel {
    static MODEL: OnceLock<SensorModel> = OnceLock::new();
    MODEL.get_or_init(|| build_sensor(&config().sensor).unwrap())
}

fn converter() -> &'static Converter {
    static CONVERTER: OnceLock<Converter> = OnceLock::new();
    CONVERTER.get_or_init(|| Converter::new(&config().sensor).unwrap())
}

fn spec(mode: SensorMode) -> SensorSpec {
    mode.apply_to(&config().sensor, config().sensor.transparency_alpha)
}

fn disk_frame(w: u32, h: u32, background: u8, disks: &[(f64, f64, f64)]) -> Frame {
    let mut f = Frame::filled(w, h, [background; 3]);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if disks.iter().any(|&(u, v, r)| (px - u).hypot(py - v) <= r) {
                f.set(x, y, [0, 0, 0]);
            }
        }
    }
    f
}

#[test]
fn uniform_white_frame_has_no_markers() {
    let f = Frame::filled(256, 256, [255; 3]);
    assert!(converter().detect_markers(&f).is_empty());
}

#[test]
fn hand_placed_disks_are_found() {
    let r = converter().marker_radius_px;
    let placed = [(60.3, 70.6, r), (128.0, 128.0, r), (190.7, 150.2, r)];
    let f = disk_frame(256, 256, 200, &placed);
    let found = converter().detect_markers(&f);
    assert_eq!(found.len(), 3);
    for &(u, v, _) in &placed {
        let d = found.centroids.iter().map(|c| (c.0 - u).hypot(c.1 - v)).fold(f64::INFINITY, f64::min);
        assert!(d <= 0.5, "disk at ({u}, {v}) found {d} px away");
    }
}

#[test]
fn removing_no_markers_is_identity() {
    let frame = render(model(), &DeformationState::rest(model()), &VisualScene::default(), &spec(SensorMode::ViTac)).unwrap();
    assert_eq!(converter().remove_markers(&frame, &MarkerSet::default()), frame);
}

#[test]
fn removing_a_disk_restores_a_constant_background() {
    let r = converter().marker_radius_px;
    let f = disk_frame(64, 64, 150, &[(31.2, 33.7, r)]);
    let markers = converter().detect_markers(&f);
    assert_eq!(markers.len(), 1);
    let out = converter().remove_markers(&f, &markers);
    assert!(out.pixels.iter().all(|&v| (v as i32 - 150).abs() <= 2));
}

#[test]
fn removal_only_touches_dilated_masks() {
    let sp = spec(SensorMode::ViTacTip);
    let frame = render(model(), &DeformationState::rest(model()), &VisualScene::default(), &sp).unwrap();
    let markers = converter().detect_markers(&frame);
    let out = converter().remove_markers(&frame, &markers);
    let mask = disk_mask(256, 256, &markers, 1.5);
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            assert_eq!(out.pixels[3 * i..3 * i + 3], frame.pixels[3 * i..3 * i + 3]);
        }
    }
    assert_ne!(out, frame);
}

#[test]
fn identical_frames_are_perfectly_similar() {
    let f = disk_frame(64, 64, 180, &[(20.0, 20.0, 3.0)]);
    let (ssim, psnr) = image_similarity(&f, &f).unwrap();
    assert_eq!(ssim, 1.0);
    assert_eq!(psnr, PSNR_CAP_DB);
}

#[test]
fn inverted_frame_is_dissimilar() {
    let frame = render(model(), &DeformationState::rest(model()), &VisualScene::default(), &spec(SensorMode::ViTacTip)).unwrap();
    let mut inv = frame.clone();
    inv.pixels.iter_mut().for_each(|v| *v = 255 - *v);
    let (ssim, _) = image_similarity(&frame, &inv).unwrap();
    assert!(ssim < 0.2, "ssim {ssim}");
}

#[test]
fn unit_perturbation_psnr_matches_closed_form() {
    let a = Frame::filled(64, 64, [100; 3]);
    let mut b = a.clone();
    for (i, v) in b.pixels.iter_mut().enumerate() {
        *v = if i % 2 == 0 { 101 } else { 99 };
    }
    let (_, psnr) = image_similarity(&a, &b).unwrap();
    let expected = 20.0 * 255f64.log10();
    assert!((psnr - expected).abs() < 1e-9, "{psnr} vs {expected}");
    assert!((psnr - 48.0).abs() < 0.2);
}

#[test]
fn similarity_of_mismatched_sizes_is_a_contract_error() {
    let err = image_similarity(&Frame::new(32, 32), &Frame::new(32, 48)).unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "{err}");
}

#[test]
fn tactile_extraction_ignores_background_color() {
    let state = solve_contact(
        model(),
        &vitactip::stimulus::Stimulus::Sphere { radius_mm: 25.0 },
        &vitactip::stimulus::StimulusPose { z_mm: 1.0, x_mm: 1.0, ..Default::default() },
        &config().solver,
    )
    .unwrap()
    .0;
    let sp = spec(SensorMode::ViTacTip);
    let frames: Vec<Frame> = [[0.9, 0.2, 0.2], [0.1, 0.3, 0.9], [0.5, 0.5, 0.5]]
        .iter()
        .map(|&rgb| {
            let s = VisualScene {
                background: Background::SolidColor(rgb),
                ..VisualScene::default()
            };
            converter().extract_tactile(&render(model(), &state, &s, &sp).unwrap())
        })
        .collect();
    for f in &frames[1..] {
        let (ssim, _) = image_similarity(&frames[0], f).unwrap();
        assert!(ssim >= 0.9, "ssim {ssim}");
    }
}

#[test]
fn conversions_are_deterministic() {
    let frame = render(model(), &DeformationState::rest(model()), &VisualScene::default(), &spec(SensorMode::ViTacTip)).unwrap();
    assert_eq!(converter().extract_tactile(&frame), converter().extract_tactile(&frame));
    let m = converter().detect_markers(&frame);
    assert_eq!(m, converter().detect_markers(&frame));
    assert_eq!(converter().remove_markers(&frame, &m), converter().remove_markers(&frame, &m));
}

/// Precision and recall of detection on a frame against the projected pin tips.
fn detection_scores(frame: &Frame, state: &DeformationState, sp: &SensorSpec) -> (usize, usize, usize) {
    let camera = FisheyeCamera::from_spec(sp);
    let truth: Vec<(f64, f64)> = state
        .pin_tips
        .iter()
        .filter_map(|t| marker_disk(&camera, t, sp.marker_radius_mm).map(|(u, v, _)| (u, v)))
        .collect();
    let found = converter().detect_markers(frame);
    let near = |a: &(f64, f64), b: &(f64, f64)| (a.0 - b.0).hypot(a.1 - b.1) <= 1.5;
    let hits = truth.iter().filter(|t| found.centroids.iter().any(|c| near(t, c))).count();
    let correct = found.centroids.iter().filter(|c| truth.iter().any(|t| near(t, c))).count();
    (hits, correct, truth.len().max(found.len()))
}

#[test]
fn detection_precision_and_recall_over_random_contacts() {
    let cfg = config();
    let sp = spec(SensorMode::ViTacTip);
    let (mut hits, mut truth, mut correct, mut found) = (0, 0, 0, 0);
    for i in 0..200 {
        let task = [Task::Grating, Task::Pose, Task::Force][i % 3];
        let mut rng = SampleRng::for_sample(77, i, 0);
        let draw = cfg.protocol.draw(task, i, &mut rng, cfg.render.ambient_light);
        let (state, _) = solve_contact(model(), &draw.stimulus, &draw.pose, &cfg.solver).unwrap();
        let mut scene = cfg.render.scene(draw.ambient_light).unwrap();
        scene.object = Some(SceneObject {
            placement: Placement::at_pose(model(), draw.stimulus, &draw.pose),
            albedo: cfg.render.object_albedo,
        });
        let frame = RenderPass::new(model(), &state, &scene, &cfg.sensor).unwrap().frame(&sp).unwrap();
        let detected = converter().detect_markers(&frame);
        let (h, c, _) = detection_scores(&frame, &state, &sp);
        hits += h;
        correct += c;
        truth += state.pin_tips.len();
        found += detected.len();
    }
    let recall = hits as f64 / truth as f64;
    let precision = correct as f64 / found as f64;
    assert!(recall >= 0.99 && precision >= 0.99, "recall {recall:.4} precision {precision:.4}");
}
