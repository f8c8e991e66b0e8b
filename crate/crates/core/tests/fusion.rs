mod oracles;

use sparsect_core::fusion::{
    backproject, build_condition, extract, fuse, BandPassExtractor, FeatureExtractor, FeatureImage, FeatureVolume,
    IdentityExtractor, View,
};
use sparsect_core::image::Image2D;
use sparsect_core::projector::{render_drr, ProjectionGeometry, DEFAULT_ANGLES};
use sparsect_core::rng::{gaussian_vec, stream};
use sparsect_core::volume::{make_phantom, GridSpec, Phantom};

fn noise_image(rows: usize, cols: usize, seed: u64) -> Image2D {
    Image2D::new(rows, cols, 1.0, gaussian_vec(&mut stream(seed), rows * cols)).unwrap()
}

fn grid() -> GridSpec {
    GridSpec::new([6, 7, 8], [1.5, 1.0, 1.25], [-4.0, -3.5, -5.0]).unwrap()
}

#[test]
fn backprojection_matches_projection_oracle() {
    let g = ProjectionGeometry::cone(24, 20, 400.0, 600.0).with_angle(37.0);
    let img = noise_image(24, 20, 4);
    let f = FeatureImage::new(vec![img.clone()], g.clone()).unwrap();
    let grid = grid();
    let vol = backproject(&f, &grid).unwrap();
    for idx in 0..grid.len() {
        let [i, j, k] = grid.unravel(idx);
        let (r, c) = oracles::project(&g, grid.world_xyz(i, j, k));
        let want = oracles::bilinear_zero(&img, r, c);
        assert!((vol.data()[idx] - want).abs() <= 1e-6, "{idx}: {} vs {want}", vol.data()[idx]);
    }
}

#[test]
fn backprojection_is_linear() {
    let g = ProjectionGeometry::parallel(16, 16).with_angle(112.5);
    let (a, b) = (noise_image(16, 16, 1), noise_image(16, 16, 2));
    let combo = Image2D::new(
        16,
        16,
        1.0,
        a.data().iter().zip(b.data()).map(|(x, y)| 3.0 * x + 0.25 * y).collect(),
    )
    .unwrap();
    let bp = |img: &Image2D| backproject(&FeatureImage::new(vec![img.clone()], g.clone()).unwrap(), &grid()).unwrap();
    let (va, vb, vc) = (bp(&a), bp(&b), bp(&combo));
    for ((x, y), z) in va.data().iter().zip(vb.data()).zip(vc.data()) {
        assert!((3.0 * x + 0.25 * y - z).abs() <= 1e-9);
    }
}

#[test]
fn points_off_the_detector_read_zero() {
    let g = ProjectionGeometry::parallel(4, 4);
    let f = FeatureImage::new(vec![Image2D::filled(4, 4, 1.0, 1.0).unwrap()], g).unwrap();
    let wide = GridSpec::cube(12, 1.0).unwrap();
    let vol = backproject(&f, &wide).unwrap();
    assert_eq!(vol.data()[0], 0.0);
    assert!(vol.data().contains(&1.0));
}

#[test]
fn fusion_is_order_free_and_idempotent() {
    let g = grid();
    let vols: Vec<FeatureVolume> = (0..5)
        .map(|s| FeatureVolume::new(2, g, gaussian_vec(&mut stream(s), 2 * g.len())).unwrap())
        .collect();
    let a = fuse(&vols).unwrap();
    let mut rev = vols.clone();
    rev.reverse();
    rev.swap(0, 2);
    assert_eq!(a, fuse(&rev).unwrap());
    let same = vec![vols[1].clone(); 7];
    assert_eq!(fuse(&same).unwrap(), vols[1]);
    // arithmetic mean oracle
    for (idx, x) in a.data().iter().enumerate() {
        let want = vols.iter().map(|v| v.data()[idx]).sum::<f64>() / 5.0;
        assert!((x - want).abs() <= 1e-12);
    }
}

#[test]
fn fusion_rejects_mismatched_layouts() {
    let a = FeatureVolume::zeros(1, grid());
    let b = FeatureVolume::zeros(2, grid());
    assert!(fuse(&[a, b]).is_err());
    assert!(fuse(&[]).is_err());
}

#[test]
fn identity_condition_is_bounded_by_the_views() {
    let v = make_phantom(&Phantom::library("lung", 8.0).unwrap(), 16, 1.0).unwrap();
    let base = ProjectionGeometry::cone(24, 24, 1000.0, 1500.0);
    let views: Vec<View> = DEFAULT_ANGLES
        .iter()
        .map(|a| {
            let geometry = base.with_angle(*a);
            View {
                image: render_drr(&v, &geometry).unwrap(),
                geometry,
            }
        })
        .collect();
    let cond = build_condition(&views, &IdentityExtractor, &GridSpec::cube(8, 2.0).unwrap()).unwrap();
    let hi = views.iter().map(|w| w.image.max()).fold(f64::MIN, f64::max);
    let lo = views.iter().map(|w| w.image.data().iter().cloned().fold(f64::MAX, f64::min)).fold(f64::MAX, f64::min);
    assert!(cond.data().iter().all(|x| *x >= lo - 1e-12 && *x <= hi + 1e-12));
    assert_eq!(cond.channels(), 1);
}

#[test]
fn constant_parallel_views_give_constant_volume() {
    let views: Vec<View> = [0.0, 45.0, 90.0]
        .iter()
        .map(|a| View {
            image: Image2D::filled(30, 30, 1.0, 1.75).unwrap(),
            geometry: ProjectionGeometry::parallel(30, 30).with_angle(*a),
        })
        .collect();
    let cond = build_condition(&views, &IdentityExtractor, &GridSpec::cube(10, 1.0).unwrap()).unwrap();
    assert!(cond.data().iter().all(|x| (x - 1.75).abs() <= 1e-12));
}

#[test]
fn band_pass_features_have_declared_channels() {
    let view = View {
        image: noise_image(20, 20, 9),
        geometry: ProjectionGeometry::parallel(20, 20),
    };
    let f = extract(&BandPassExtractor, &view).unwrap();
    assert_eq!(f.n_channels(), BandPassExtractor.channels());
    // difference of Gaussians kills constants
    let flat = View {
        image: Image2D::filled(20, 20, 1.0, 3.0).unwrap(),
        geometry: ProjectionGeometry::parallel(20, 20),
    };
    let f = extract(&BandPassExtractor, &flat).unwrap();
    assert!(f.channels().iter().all(|c| c.data().iter().all(|x| x.abs() <= 1e-9)));
}

#[test]
fn feature_volume_round_trips_through_volc() {
    let g = grid();
    // stored as f32
    let data = gaussian_vec(&mut stream(3), 3 * g.len()).iter().map(|x| *x as f32 as f64).collect();
    let v = FeatureVolume::new(3, g, data).unwrap();
    let mut buf = Vec::new();
    v.write_volc(&mut buf).unwrap();
    assert_eq!(FeatureVolume::read_volc(&mut buf.as_slice()).unwrap(), v);
}
