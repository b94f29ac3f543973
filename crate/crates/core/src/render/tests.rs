use super::*;
use crate::fixtures;

#[test]
fn no_energy_renders_black() {
    let mut scene = fixtures::lit_box(32, 24);
    scene.lights.clear();
    scene.environment = Vec3::ZERO;
    let img = render(&scene, &scene.cameras[0], &fixtures::settings(32, 24, 4)).unwrap();
    assert!(img.pixels.iter().all(|p| *p == Vec3::ZERO));
}

#[test]
fn furnace_is_uniform() {
    let scene = fixtures::furnace(40, 30);
    let img = render(&scene, &scene.cameras[0], &fixtures::settings(40, 30, 16)).unwrap();
    let mean = img.mean();
    assert!((mean.x - 1.0).abs() < 0.02, "mean {mean:?}");
    let worst = img.pixels.iter().map(|p| (p.x - 1.0).abs()).fold(0.0, f64::max);
    assert!(worst < 0.05, "max deviation {worst}");
}

#[test]
fn direct_lighting_is_linear_in_power() {
    let mut scene = fixtures::lit_box(32, 24);
    scene.environment = Vec3::ZERO;
    let mut settings = fixtures::settings(32, 24, 4);
    settings.max_bounces = 1;
    let a = render(&scene, &scene.cameras[0], &settings).unwrap();
    scene.lights[0].power *= 2.0;
    let b = render(&scene, &scene.cameras[0], &settings).unwrap();
    assert!(a.count_nonzero() > 100);
    for (pa, pb) in a.pixels.iter().zip(&b.pixels) {
        assert_eq!(*pa * 2.0, *pb);
    }
}

#[test]
fn point_light_direct_lighting_matches_inverse_square() {
    // diffuse floor under an isotropic point light, one bounce:
    // L = albedo / pi * I * cos / d^2 with I = power / (4 pi)
    let mut scene = fixtures::flat_plate(0.05, true, 33, 33);
    scene.parts[0].defects.clear();
    scene.lights[0].pose = crate::scene::light_pose(Vec3::new(0.0, 0.0, 1.0), Vec3::ZERO);
    let mut settings = fixtures::settings(33, 33, 1);
    settings.max_bounces = 1;
    let img = render(&scene, &scene.cameras[0], &settings).unwrap();
    let center = img.get(16, 16);
    let d = 1.0 - fixtures::PLATE_TOP;
    let expected = 0.5 / PI * (20.0 / (4.0 * PI)) / (d * d);
    assert!((center.x - expected).abs() < 1e-3 * expected, "{} vs {expected}", center.x);
}

#[test]
fn thread_count_does_not_change_pixels() {
    let scene = fixtures::lit_box(40, 30);
    let settings = fixtures::settings(40, 30, 4);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| render(&scene, &scene.cameras[0], &settings).unwrap());
    let b = many.install(|| render(&scene, &scene.cameras[0], &settings).unwrap());
    assert_eq!(a, b);
    assert!(a.is_valid());
    let mut other = settings.clone();
    other.tile_size = 7;
    assert_eq!(render(&scene, &scene.cameras[0], &other).unwrap(), a);
}

#[test]
fn degenerate_camera_rejected() {
    let scene = fixtures::lit_box(32, 24);
    let mut cam = scene.cameras[0];
    cam.focus_distance = cam.near_clip;
    assert!(matches!(render(&scene, &cam, &fixtures::settings(32, 24, 1)), Err(RenderError::Camera(_))));
}

#[test]
fn defect_pass_matches_disk_projection() {
    let (w, h) = (200, 160);
    let scale = 0.1;
    let scene = fixtures::flat_plate(scale, true, w, h);
    let cam = &scene.cameras[0];
    let pass = render_defect_pass(&scene, cam, 1, &fixtures::settings(w, h, 1)).unwrap();
    let count = pass.count_nonzero() as f64;
    let expected = fixtures::projected_disk_area(cam, scale, fixtures::PLATE_CAMERA_HEIGHT);
    assert!((count / expected - 1.0).abs() < 0.05, "{count} vs {expected}");
    assert!(pass.pixels.iter().all(|p| *p == Vec3::ZERO || *p == Vec3::ONE));
}

#[test]
fn defect_pass_back_face_is_empty() {
    let scene = fixtures::flat_plate(0.1, false, 64, 48);
    let pass = render_defect_pass(&scene, &scene.cameras[0], 1, &fixtures::settings(64, 48, 1)).unwrap();
    assert_eq!(pass.count_nonzero(), 0);
    assert!(matches!(
        render_defect_pass(&scene, &scene.cameras[0], 99, &fixtures::settings(64, 48, 1)),
        Err(RenderError::UnknownDefect(99))
    ));
}

#[test]
fn holes_cut_through_thin_parts() {
    // black plate against a white background: only the hole shows white
    let (w, h) = (400, 400);
    let mut scene = fixtures::flat_plate(0.1, true, w, h);
    scene.environment = Vec3::ONE;
    scene.lights.clear();
    scene.parts[0].material = PbrMaterial::diffuse(Vec3::ZERO);
    let settings = fixtures::settings(w, h, 1);
    let with = render(&scene, &scene.cameras[0], &settings).unwrap();
    assert_eq!(with.get(w / 2, h / 2), Vec3::ONE);
    let inside_plate = |img: &ImageBuffer| {
        (140..260).flat_map(|y| (140..260).map(move |x| (x, y))).filter(|&(x, y)| img.get(x, y) != Vec3::ZERO).count()
    };
    assert!(inside_plate(&with) > 10);
    scene.parts[0].defects.clear();
    let without = render(&scene, &scene.cameras[0], &settings).unwrap();
    assert_eq!(inside_plate(&without), 0);
}
