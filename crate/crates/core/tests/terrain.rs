use std::f64::consts::PI;

use proptest::prelude::*;
use roverplan::terrain::{
    canny_edges, render_crater_scene, render_scene, CannyParams, Crater, GrayImage,
};

fn centred(radius: f64) -> Crater {
    Crater {
        row: 32.0,
        col: 32.0,
        radius,
    }
}

#[test]
fn disk_pixel_count_is_bounded_by_neighbouring_radii() {
    let scene = render_scene(4, 64, 64, &[centred(5.0)]).unwrap();
    let n = scene.mask.obstacle_count() as f64;
    assert!(
        (PI * 4.5 * 4.5..=PI * 5.5 * 5.5).contains(&n),
        "{n} obstacle pixels"
    );
}

fn mean_distance(edges: &GrayImage, centre: (f64, f64)) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in 0..edges.height() {
        for c in 0..edges.width() {
            if edges.get(r, c) > 0.5 {
                sum += ((r as f64 - centre.0).powi(2) + (c as f64 - centre.1).powi(2)).sqrt();
                n += 1;
            }
        }
    }
    assert!(n > 0, "no edge pixels");
    sum / n as f64
}

/// Reference edge set: pixels whose central-difference gradient magnitude
/// of the raw image exceeds half its maximum.
fn thresholded_gradient(image: &GrayImage) -> GrayImage {
    let (h, w) = (image.height(), image.width());
    let mut mag = vec![0.0f64; h * w];
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let gx = f64::from(image.get(r, c + 1) - image.get(r, c - 1)) / 2.0;
            let gy = f64::from(image.get(r + 1, c) - image.get(r - 1, c)) / 2.0;
            mag[r * w + c] = gx.hypot(gy);
        }
    }
    let max = mag.iter().copied().fold(0.0, f64::max);
    let data = mag
        .iter()
        .map(|&m| if m > 0.5 * max { 1.0 } else { 0.0 })
        .collect();
    GrayImage::from_vec(h, w, data).unwrap()
}

#[test]
fn crater_edges_form_a_ring_at_the_radius() {
    let scene = render_scene(9, 64, 64, &[centred(10.0)]).unwrap();
    let canny = mean_distance(&scene.edges, (32.0, 32.0));
    let reference = mean_distance(&thresholded_gradient(&scene.image), (32.0, 32.0));
    assert!((canny - 10.0).abs() <= 1.5, "canny ring at {canny}");
    assert!(
        (reference - 10.0).abs() <= 1.5,
        "reference ring at {reference}"
    );
    assert!((canny - reference).abs() <= 1.5);
}

#[test]
fn edges_are_binary() {
    let scene = render_crater_scene(2, 48, 48, 5, (3.0, 8.0)).unwrap();
    assert!(scene.edges.data().iter().all(|&v| v == 0.0 || v == 1.0));
    assert_eq!(
        scene,
        render_crater_scene(2, 48, 48, 5, (3.0, 8.0)).unwrap()
    );
}

#[test]
fn every_crater_interior_pixel_is_an_obstacle() {
    let scene = render_crater_scene(6, 40, 40, 6, (2.0, 6.0)).unwrap();
    for r in 0..40 {
        for c in 0..40 {
            let inside = scene.craters.iter().any(|k| k.covers(r, c));
            assert_eq!(
                inside,
                scene.mask.is_obstacle(roverplan::gridworld::Pos::new(r, c))
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn edges_ignore_a_global_offset(
        (h, w, data) in (6usize..20, 6usize..20).prop_flat_map(|(h, w)| {
            (Just(h), Just(w), prop::collection::vec(0.0f32..0.5, h * w))
        }),
        offset in 0.0f32..0.5,
    ) {
        let base = GrayImage::from_vec(h, w, data.clone()).unwrap();
        let shifted = GrayImage::from_vec(h, w, data.iter().map(|v| v + offset).collect()).unwrap();
        let p = CannyParams::default();
        prop_assert_eq!(canny_edges(&base, p), canny_edges(&shifted, p));
    }
}
