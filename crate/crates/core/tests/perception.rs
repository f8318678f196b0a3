use std::sync::OnceLock;

use proptest::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};

use vitactip::conversion::MarkerSet;
use vitactip::mechanics::{solve_contact, DeformationState, SolverParams};
use vitactip::optics::{render, SceneObject, VisualScene};
use vitactip::perception::{
    hungarian, track_markers, FeatureConfig, FeatureExtractor, KnnClassifier, RidgeRegressor, GRID,
};
use vitactip::protocol::SampleRng;
use vitactip::sensor::{build_sensor, vitactip_preset, SensorMode, SensorModel};
use vitactip::stimulus::{Placement, Stimulus, StimulusPose};
use vitactip::Error;

fn model() -> &'static SensorModel {
    static MODEL: OnceLock<SensorModel> = OnceLock::new();
    MODEL.get_or_init(|| build_sensor(&vitactip_preset()).unwrap())
}

fn markers(points: &[(f64, f64)]) -> MarkerSet {
    MarkerSet {
        centroids: points.to_vec(),
        radii: vec![2.5; points.len()],
    }
}

fn lattice() -> Vec<(f64, f64)> {
    (0..6)
        .flat_map(|i| (0..6).map(move |j| (20.0 + 12.0 * i as f64 + 6.0 * (j % 2) as f64, 20.0 + 10.0 * j as f64)))
        .collect()
}

#[test]
fn identical_sets_match_with_zero_displacement() {
    let set = markers(&lattice());
    let field = track_markers(&set, &set, 15.0);
    assert_eq!(field.matches.len(), set.len());
    assert_eq!((field.unmatched_rest, field.unmatched_deformed), (0, 0));
    assert!(field.matches.iter().all(|m| m.du == 0.0 && m.dv == 0.0 && m.rest_index == m.deformed_index));
}

#[test]
fn shifted_set_matches_with_the_shift() {
    let rest = lattice();
    let moved: Vec<_> = rest.iter().map(|&(u, v)| (u + 2.0, v)).collect();
    let field = track_markers(&markers(&rest), &markers(&moved), 10.0);
    assert_eq!(field.matches.len(), rest.len());
    for m in &field.matches {
        assert!((m.du - 2.0).abs() < 1e-12 && m.dv.abs() < 1e-12, "{m:?}");
    }
}

#[test]
fn marker_beyond_the_gate_is_unmatched_on_both_sides() {
    let rest = lattice();
    let mut moved = rest.clone();
    moved[7] = (300.0, 300.0);
    let field = track_markers(&markers(&rest), &markers(&moved), 10.0);
    assert_eq!(field.matches.len(), rest.len() - 1);
    assert_eq!((field.unmatched_rest, field.unmatched_deformed), (1, 1));
}

#[test]
fn empty_sets_leave_everything_unmatched() {
    let set = markers(&lattice());
    let field = track_markers(&set, &MarkerSet::default(), 15.0);
    assert!(field.matches.is_empty());
    assert_eq!((field.unmatched_rest, field.unmatched_deformed), (set.len(), 0));
}

/// Exhaustive minimum over all permutations.
fn brute_assignment(cost: &[f64], n: usize) -> f64 {
    fn go(cost: &[f64], n: usize, row: usize, used: &mut Vec<bool>) -> f64 {
        if row == n {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                best = best.min(cost[row * n + j] + go(cost, n, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    go(cost, n, 0, &mut vec![false; n])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hungarian_is_optimal(n in 1usize..7, seed in any::<u64>()) {
        let mut rng = SampleRng::new(seed, 0);
        let cost: Vec<f64> = (0..n * n).map(|_| rng.uniform(0.0, 10.0)).collect();
        let assign = hungarian(&cost, n);
        let mut seen = vec![false; n];
        for &j in &assign {
            prop_assert!(!seen[j]);
            seen[j] = true;
        }
        let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
        prop_assert!((total - brute_assignment(&cost, n)).abs() < 1e-9);
    }

    #[test]
    fn tracking_is_symmetric(seed in any::<u64>(), jitter in 0.5f64..6.0) {
        let mut rng = SampleRng::new(seed, 1);
        let rest = lattice();
        let moved: Vec<_> = rest
            .iter()
            .map(|&(u, v)| (u + rng.uniform(-jitter, jitter), v + rng.uniform(-jitter, jitter)))
            .collect();
        let (a, b) = (markers(&rest), markers(&moved));
        let fwd = track_markers(&a, &b, 8.0);
        let back = track_markers(&b, &a, 8.0);
        prop_assert_eq!(fwd.matches.len(), back.matches.len());
        prop_assert_eq!(fwd.unmatched_rest, back.unmatched_deformed);
        for m in &fwd.matches {
            prop_assert!(m.du.hypot(m.dv) <= 8.0);
            let r = back.matches.iter().find(|r| r.rest_index == m.deformed_index);
            prop_assert!(r.is_some());
            let r = r.unwrap();
            prop_assert_eq!(r.deformed_index, m.rest_index);
            prop_assert!((r.du + m.du).abs() < 1e-12 && (r.dv + m.dv).abs() < 1e-12);
        }
    }

    #[test]
    fn classification_ignores_affine_rescaling(seed in any::<u64>()) {
        let mut rng = SampleRng::new(seed, 2);
        let train: Vec<(Vec<f64>, usize)> = (0..60)
            .map(|i| ((0..4).map(|_| rng.uniform(-1.0, 1.0) + (i % 3) as f64 * 0.4).collect(), i % 3))
            .collect();
        let a: Vec<f64> = (0..4).map(|_| rng.uniform(0.1, 50.0)).collect();
        let b: Vec<f64> = (0..4).map(|_| rng.uniform(-100.0, 100.0)).collect();
        let rescale = |f: &[f64]| f.iter().zip(&a).zip(&b).map(|((v, s), o)| v * s + o).collect::<Vec<_>>();
        let scaled: Vec<_> = train.iter().map(|(f, c)| (rescale(f), *c)).collect();
        let plain = KnnClassifier::fit(&train, 3, 5).unwrap();
        let moved = KnnClassifier::fit(&scaled, 3, 5).unwrap();
        for _ in 0..40 {
            let q: Vec<f64> = (0..4).map(|_| rng.uniform(-1.5, 2.0)).collect();
            prop_assert_eq!(plain.classify(&q), moved.classify(&rescale(&q)));
        }
    }
}

fn cluster(rng: &mut SampleRng, centre: f64, n: usize, class: usize) -> Vec<(Vec<f64>, usize)> {
    (0..n)
        .map(|_| ((0..3).map(|_| centre + rng.uniform(-1.0, 1.0)).collect(), class))
        .collect()
}

#[test]
fn separable_clusters_are_classified_perfectly() {
    let mut rng = SampleRng::new(5, 0);
    let mut train = cluster(&mut rng, -5.0, 30, 0);
    train.extend(cluster(&mut rng, 5.0, 30, 1));
    let mut test = cluster(&mut rng, -5.0, 20, 0);
    test.extend(cluster(&mut rng, 5.0, 20, 1));
    let knn = KnnClassifier::fit(&train, 2, 5).unwrap();
    assert!(test.iter().all(|(f, c)| knn.classify(f) == *c));
}

#[test]
fn single_neighbour_returns_the_matching_point() {
    let mut rng = SampleRng::new(6, 0);
    let train: Vec<(Vec<f64>, usize)> = (0..40)
        .map(|i| ((0..5).map(|_| rng.uniform(-1.0, 1.0)).collect(), i % 4))
        .collect();
    let knn = KnnClassifier::fit(&train, 4, 1).unwrap();
    for (f, c) in &train {
        assert_eq!(knn.classify(f), *c);
    }
}

#[test]
fn empty_class_is_a_configuration_error() {
    let train = vec![(vec![0.0], 0), (vec![1.0], 2)];
    let err = KnnClassifier::fit(&train, 3, 1).unwrap_err();
    assert!(matches!(err, Error::Config { .. }), "{err}");
}

#[test]
fn vote_ties_go_to_the_nearer_class() {
    let train = vec![(vec![0.0], 0), (vec![3.0], 0), (vec![1.0], 1), (vec![1.2], 1)];
    let knn = KnnClassifier::fit(&train, 2, 4).unwrap();
    // two votes each; class 1 is closer on average
    assert_eq!(knn.classify(&[1.1]), 1);
}

const TRUE_W: [f64; 4] = [1.5, -2.0, 0.25, 3.0];
const TRUE_B: f64 = 0.7;

fn linear_data(rng: &mut SampleRng, n: usize, noise: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
    (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..4).map(|j| rng.uniform(-2.0, 2.0) * (j + 1) as f64).collect();
            let y = TRUE_B + x.iter().zip(TRUE_W).map(|(a, w)| a * w).sum::<f64>() + rng.uniform(-noise, noise);
            (x, vec![y, -y])
        })
        .collect()
}

#[test]
fn exact_linear_data_recovers_the_coefficients() {
    let data = linear_data(&mut SampleRng::new(8, 0), 50, 0.0);
    let r = RidgeRegressor::fit(&data, 0.0).unwrap();
    let s = &r.standardizer;
    for (j, w) in TRUE_W.iter().enumerate() {
        let raw = r.weights[0][j] / s.scale[j];
        assert!((raw - w).abs() <= 1e-6 * w.abs(), "w{j} {raw} vs {w}");
        assert!((-r.weights[1][j] / s.scale[j] - w).abs() <= 1e-6 * w.abs());
    }
    let intercept = r.bias[0] - (0..4).map(|j| r.weights[0][j] * s.mean[j] / s.scale[j]).sum::<f64>();
    assert!((intercept - TRUE_B).abs() <= 1e-6 * TRUE_B);
}

#[test]
fn huge_lambda_predicts_the_target_mean() {
    let data = linear_data(&mut SampleRng::new(9, 0), 40, 0.1);
    let mean = data.iter().map(|d| d.1[0]).sum::<f64>() / data.len() as f64;
    let r = RidgeRegressor::fit(&data, 1e15).unwrap();
    for (x, _) in &data {
        assert!((r.predict(x)[0] - mean).abs() < 1e-6);
    }
}

#[test]
fn training_error_does_not_exceed_held_out_error() {
    let mut rng = SampleRng::new(10, 0);
    let train = linear_data(&mut rng, 30, 1.0);
    let test = linear_data(&mut rng, 200, 1.0);
    let r = RidgeRegressor::fit(&train, 0.0).unwrap();
    let mae = |set: &[(Vec<f64>, Vec<f64>)]| set.iter().map(|(x, y)| (r.predict(x)[0] - y[0]).abs()).sum::<f64>() / set.len() as f64;
    assert!(mae(&train) <= mae(&test), "{} > {}", mae(&train), mae(&test));
}

#[test]
fn collinear_features_at_zero_lambda_are_rank_deficient() {
    let data: Vec<(Vec<f64>, Vec<f64>)> = linear_data(&mut SampleRng::new(11, 0), 30, 0.0)
        .into_iter()
        .map(|(mut x, y)| {
            x.push(2.0 * x[0] - x[1]);
            (x, y)
        })
        .collect();
    assert!(matches!(RidgeRegressor::fit(&data, 0.0), Err(Error::RankDeficient)));
    assert!(RidgeRegressor::fit(&data, 1e-3).is_ok());
    let wide: Vec<_> = data.iter().take(3).cloned().collect();
    assert!(matches!(RidgeRegressor::fit(&wide, 0.0), Err(Error::RankDeficient)));
}

#[test]
fn fits_are_deterministic() {
    let data = linear_data(&mut SampleRng::new(12, 0), 40, 0.5);
    assert_eq!(RidgeRegressor::fit(&data, 0.1).unwrap(), RidgeRegressor::fit(&data, 0.1).unwrap());
}

#[test]
fn rest_frame_against_itself_gives_zero_features() {
    let spec = vitactip_preset();
    let rest = DeformationState::rest(model());
    for mode in SensorMode::ALL {
        let fx = FeatureExtractor::new(&spec, mode, &FeatureConfig::default()).unwrap();
        let frame = render(model(), &rest, &VisualScene::default(), &mode.apply_to(&spec, spec.transparency_alpha)).unwrap();
        let f = fx.extract(&frame, &frame).unwrap();
        assert_eq!(f.values.len(), fx.len());
        assert!(!f.degraded);
        for (i, v) in f.values.iter().enumerate() {
            // presence flags are the only non-zero pin entries
            let flag = i < fx.pin_block_len() && i % 3 == 2;
            assert_eq!(*v, if flag { 1.0 } else { 0.0 }, "{mode} entry {i}");
        }
    }
}

#[test]
fn block_layout_follows_the_mode() {
    let spec = vitactip_preset();
    let pins = model().pin_count();
    let cfg = FeatureConfig::default();
    let vitac = FeatureExtractor::new(&spec, SensorMode::ViTac, &cfg).unwrap();
    let tactip = FeatureExtractor::new(&spec, SensorMode::TacTip, &cfg).unwrap();
    let fused = FeatureExtractor::new(&spec, SensorMode::ViTacTip, &cfg).unwrap();
    assert_eq!((vitac.pin_block_len(), vitac.visual_block_len()), (0, 3 * GRID * GRID));
    assert_eq!((tactip.pin_block_len(), tactip.visual_block_len()), (3 * pins, 0));
    assert_eq!(fused.len(), 3 * pins + 3 * GRID * GRID);
}

#[test]
fn blank_frame_is_flagged_as_degraded() {
    let spec = vitactip_preset();
    let fx = FeatureExtractor::new(&spec, SensorMode::TacTip, &FeatureConfig::default()).unwrap();
    let sp = SensorMode::TacTip.apply_to(&spec, spec.transparency_alpha);
    let rest = render(model(), &DeformationState::rest(model()), &VisualScene::default(), &sp).unwrap();
    let blank = vitactip::frame::Frame::filled(rest.width, rest.height, [255; 3]);
    let f = fx.extract(&blank, &rest).unwrap();
    assert!(f.degraded);
    assert!(f.values.iter().all(|v| v.is_finite() && *v == 0.0));
}

#[test]
fn grating_period_shows_in_the_visual_grid() {
    let spec = vitactip_preset();
    let (groove, ridge) = (4.25, 1.0);
    let stimulus = Stimulus::GratingBoard {
        line_spacing_mm: groove,
        ridge_width_mm: ridge,
        groove_depth_mm: 1.0,
    };
    let pose = StimulusPose::press(1.0);
    let (state, _) = solve_contact(model(), &stimulus, &pose, &SolverParams::default()).unwrap();
    let scene = VisualScene {
        object: Some(SceneObject {
            placement: Placement::at_pose(model(), stimulus, &pose),
            albedo: [0.9, 0.9, 0.9],
        }),
        ..VisualScene::default()
    };
    let sp = SensorMode::ViTacTip.apply_to(&spec, spec.transparency_alpha);
    let rest = render(model(), &DeformationState::rest(model()), &VisualScene::default(), &sp).unwrap();
    let frame = render(model(), &state, &scene, &sp).unwrap();
    let fx = FeatureExtractor::new(&spec, SensorMode::ViTacTip, &FeatureConfig::default()).unwrap();
    let f = fx.extract(&frame, &rest).unwrap();
    let visual = &f.values[fx.pin_block_len()..];

    // ridges run along y, so the profile varies across columns
    let mut profile = vec![Complex::new(0.0, 0.0); GRID];
    for gy in 0..GRID {
        for gx in 0..GRID {
            let g = gy * GRID + gx;
            profile[gx].re += (visual[3 * g] + visual[3 * g + 1] + visual[3 * g + 2]) / GRID as f64;
        }
    }
    let mean = profile.iter().map(|c| c.re).sum::<f64>() / GRID as f64;
    profile.iter_mut().for_each(|c| c.re -= mean);
    FftPlanner::new().plan_fft_forward(GRID).process(&mut profile);
    let peak = (1..=GRID / 2).max_by(|&a, &b| profile[a].norm().total_cmp(&profile[b].norm())).unwrap();
    let measured = GRID as f64 / peak as f64;

    // paraxial scale of the equidistant camera on a board at the apex
    let half_fov = spec.camera_fov_deg.to_radians() / 2.0;
    let focal = (spec.image_size_px.0.min(spec.image_size_px.1) as f64 / 2.0) / half_fov;
    let skin_radius = focal * spec.cap_half_angle_rad().min(half_fov);
    let cell_px = 2.0 * skin_radius * FeatureConfig::default().grid_extent / GRID as f64;
    let expected = (groove + ridge) * focal / spec.dome_radius_mm / cell_px;
    assert!((measured - expected).abs() <= 1.0, "period {measured} cells, expected {expected:.2}");
}
