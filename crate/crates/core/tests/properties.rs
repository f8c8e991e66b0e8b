use proptest::collection::vec;
use proptest::prelude::*;
use sparsect_core::diffusion::{cfg_combine, linear_schedule};
use sparsect_core::fusion::{fuse, FeatureVolume};
use sparsect_core::latent::{hinge_disc_loss, quantize, vqvae_loss, weighted_objectives, Codebook, LossWeights};
use sparsect_core::diffusion::LatentCode;
use sparsect_core::metrics::{dvh_v_gray, psnr, psnr_from_mse, ssim3d, SsimParams};
use sparsect_core::uncertainty::voxel_stats;
use sparsect_core::volume::{
    crop_resize_cube, denormalize, make_phantom, normalize, resample_isotropic, Ellipsoid, GridSpec, Phantom,
    ValueUnit, Volume3D,
};

fn volume(dims: [usize; 3], data: Vec<f64>) -> Volume3D {
    Volume3D::new(GridSpec::centered(dims, [1.0; 3]).unwrap(), ValueUnit::Hu, data).unwrap()
}

fn cube_values(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    vec(lo..hi, n * n * n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn quantize_never_increases_distance(
        entries in vec(-2.0f64..2.0, 12 * 3),
        z in vec(-3.0f64..3.0, 3 * 5),
    ) {
        let Ok(cb) = Codebook::new(12, 3, entries) else { return Ok(()) };
        let q = quantize(&LatentCode::new(vec![3, 5], z.clone(), 0).unwrap(), &cb).unwrap();
        for p in 0..5 {
            let v: Vec<f64> = (0..3).map(|c| z[c * 5 + p]).collect();
            let dist = |e: &[f64]| e.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let chosen = dist(cb.entry(q.indices[p]));
            for e in 0..12 {
                prop_assert!(chosen <= dist(cb.entry(e)));
            }
        }
    }

    #[test]
    fn vqvae_loss_is_nonnegative_and_zero_when_perfect(
        x in vec(-1.0f64..1.0, 8),
        noise in vec(-1.0f64..1.0, 8),
        ze in vec(-1.0f64..1.0, 4),
        beta in 0.0f64..2.0,
    ) {
        let grid = GridSpec::cube(2, 1.0).unwrap();
        let xv = Volume3D::new(grid, ValueUnit::Hu, x.clone()).unwrap();
        let xh = Volume3D::new(grid, ValueUnit::Hu, x.iter().zip(&noise).map(|(a, b)| a + b).collect()).unwrap();
        let z = LatentCode::new(vec![4], ze.clone(), 0).unwrap();
        let zq = LatentCode::new(vec![4], ze.iter().map(|v| v * 0.5).collect(), 0).unwrap();
        prop_assert!(vqvae_loss(&xv, &xh, &z, &zq, beta).unwrap() >= 0.0);
        prop_assert_eq!(vqvae_loss(&xv, &xv, &z, &z, beta).unwrap(), 0.0);
    }

    #[test]
    fn hinge_is_monotone(
        real in vec(-3.0f64..3.0, 1..6),
        fake in vec(-3.0f64..3.0, 1..6),
        bump in 0.0f64..1.0,
    ) {
        let base = hinge_disc_loss(&real, &fake);
        prop_assert!(base >= 0.0);
        let more_real: Vec<f64> = real.iter().map(|v| v + bump).collect();
        let more_fake: Vec<f64> = fake.iter().map(|v| v + bump).collect();
        prop_assert!(hinge_disc_loss(&more_real, &fake) <= base);
        prop_assert!(hinge_disc_loss(&real, &more_fake) >= base);
    }

    #[test]
    fn objectives_are_linear_in_each_weight(
        losses in vec(0.0f64..5.0, 4),
        w in vec(0.0f64..3.0, 3),
        k in 0.0f64..4.0,
    ) {
        let (d3, d2, vq, p) = (losses[0], losses[1], losses[2], losses[3]);
        let lw = LossWeights::new(w[0], w[1], w[2]).unwrap();
        let (ld, lg) = weighted_objectives(d3, d2, vq, p, &lw);
        prop_assert_eq!(ld, w[0] * (d3 + d2));
        prop_assert_eq!(lg, w[1] * vq + w[2] * p);
        let scaled = LossWeights::new(k * w[0], w[1], w[2]).unwrap();
        let (ld2, _) = weighted_objectives(d3, d2, vq, p, &scaled);
        prop_assert!((ld2 - k * ld).abs() <= 1e-12 * (1.0 + ld2.abs()));
    }

    #[test]
    fn voxel_stats_identity_permutation_and_translation(
        raw in vec(vec(-10.0f64..10.0, 8), 2..7),
        gt in vec(-10.0f64..10.0, 8),
        shift in -10.0f64..10.0,
    ) {
        let samples: Vec<Volume3D> = raw.iter().map(|d| volume([2, 2, 2], d.clone())).collect();
        let y = volume([2, 2, 2], gt);
        let maps = voxel_stats(&samples, Some(&y)).unwrap();
        let (b2, var, mse) = (maps.squared_bias.as_ref().unwrap(), &maps.variance, maps.mse.as_ref().unwrap());
        for v in 0..8 {
            let m = mse.data()[v];
            prop_assert!((m - b2.data()[v] - var.data()[v]).abs() <= 1e-10 * m.max(1.0));
        }
        let mut rev = samples.clone();
        rev.reverse();
        prop_assert_eq!(&voxel_stats(&rev, Some(&y)).unwrap(), &maps);
        let moved: Vec<Volume3D> = samples.iter().map(|s| s.map(|x| x + shift).unwrap()).collect();
        let mv = voxel_stats(&moved, None).unwrap();
        for (a, b) in mv.variance.data().iter().zip(var.data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn psnr_symmetric_and_decreasing(
        a in cube_values(3, 0.0, 100.0),
        b in cube_values(3, 0.0, 100.0),
        m in 1e-3f64..1e3,
        dm in 1e-3f64..10.0,
    ) {
        let (va, vb) = (volume([3; 3], a), volume([3; 3], b));
        prop_assert_eq!(psnr(&va, &vb, 100.0).unwrap(), psnr(&vb, &va, 100.0).unwrap());
        prop_assert!(psnr_from_mse(m + dm, 100.0) < psnr_from_mse(m, 100.0));
    }

    #[test]
    fn ssim_symmetric_and_scale_invariant(
        a in cube_values(5, 0.0, 50.0),
        b in cube_values(5, 0.0, 50.0),
        s in 0.01f64..100.0,
    ) {
        let (va, vb) = (volume([5; 3], a), volume([5; 3], b));
        let mut p = SsimParams::new(50.0);
        p.window = 3;
        let ab = ssim3d(&va, &vb, &p).unwrap();
        prop_assert!((ab - ssim3d(&vb, &va, &p).unwrap()).abs() <= 1e-12);
        prop_assert_eq!(ssim3d(&va, &va, &p).unwrap(), 1.0);
        let (sa, sb) = (va.map(|x| x * s).unwrap(), vb.map(|x| x * s).unwrap());
        let mut ps = p;
        ps.dynamic_range = 50.0 * s;
        prop_assert!((ssim3d(&sa, &sb, &ps).unwrap() - ab).abs() <= 1e-9);
    }

    #[test]
    fn dvh_is_monotone_in_threshold(
        dose in cube_values(3, 0.0, 60.0),
        bits in vec(any::<bool>(), 27),
        t in 0.0f64..60.0,
        dt in 0.0f64..20.0,
    ) {
        prop_assume!(bits.iter().any(|b| *b));
        let d = volume([3; 3], dose);
        let m = volume([3; 3], bits.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect());
        prop_assert!(dvh_v_gray(&d, &m, t + dt).unwrap() <= dvh_v_gray(&d, &m, t).unwrap());
    }

    #[test]
    fn cfg_is_affine(
        c in vec(-10.0f64..10.0, 6),
        u in vec(-10.0f64..10.0, 6),
        delta in -10.0f64..10.0,
        w in 0.0f64..10.0,
    ) {
        let base = cfg_combine(&c, &u, w).unwrap();
        let cs: Vec<f64> = c.iter().map(|x| x + delta).collect();
        let us: Vec<f64> = u.iter().map(|x| x + delta).collect();
        for (a, b) in cfg_combine(&cs, &us, w).unwrap().iter().zip(&base) {
            prop_assert!((a - (b + delta)).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        prop_assert_eq!(cfg_combine(&c, &u, 0.0).unwrap(), c.clone());
        prop_assert_eq!(cfg_combine(&c, &c, w).unwrap(), c);
    }

    #[test]
    fn fuse_is_permutation_invariant(
        vals in vec(vec(-5.0f64..5.0, 8), 1..6),
        rot in 0usize..6,
    ) {
        let grid = GridSpec::cube(2, 1.0).unwrap();
        let vols: Vec<FeatureVolume> = vals.iter().map(|d| FeatureVolume::new(1, grid, d.clone()).unwrap()).collect();
        let mut turned = vols.clone();
        let k = rot % turned.len();
        turned.rotate_left(k);
        prop_assert_eq!(fuse(&vols).unwrap(), fuse(&turned).unwrap());
    }

    #[test]
    fn schedule_is_monotone_and_multiplicative(
        steps in 2usize..400,
        start in 1e-5f64..1e-3,
        span in 1e-3f64..0.05,
    ) {
        let s = linear_schedule(steps, start, start + span).unwrap();
        for t in 1..=steps {
            prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            prop_assert!((s.alpha_bar(t) - s.alpha_bar(t - 1) * s.alpha(t)).abs() <= 1e-12);
        }
    }

    #[test]
    fn normalize_round_trips(
        raw in cube_values(3, -1000.0, 1000.0),
    ) {
        let v = volume([3; 3], raw);
        let back = denormalize(&normalize(&v, -1000.0, 1000.0).unwrap(), -1000.0, 1000.0).unwrap();
        for (a, b) in v.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn same_spacing_resample_and_cube_crop_are_identities(
        raw in cube_values(4, -100.0, 100.0),
        sp in 0.5f64..3.0,
    ) {
        let grid = GridSpec::centered([4; 3], [sp; 3]).unwrap();
        let v = Volume3D::new(grid, ValueUnit::Hu, raw).unwrap();
        prop_assert_eq!(&resample_isotropic(&v, sp).unwrap(), &v);
        prop_assert_eq!(&crop_resize_cube(&v, 4).unwrap(), &v);
        let once = crop_resize_cube(&v, 3).unwrap();
        prop_assert_eq!(&crop_resize_cube(&once, 3).unwrap(), &once);
    }

    #[test]
    fn phantom_ignores_ellipsoid_order(
        spheres in vec((vec(-6.0f64..6.0, 3), 1.0f64..6.0, -1.0f64..1.0), 1..5),
        rot in 0usize..5,
    ) {
        let list: Vec<Ellipsoid> = spheres
            .iter()
            .map(|(c, r, a)| Ellipsoid::sphere([c[0], c[1], c[2]], *r, *a))
            .collect();
        let mut turned = list.clone();
        let k = rot % turned.len();
        turned.rotate_left(k);
        let a = make_phantom(&Phantom { ellipsoids: list, blobs: vec![] }, 8, 1.5).unwrap();
        let b = make_phantom(&Phantom { ellipsoids: turned, blobs: vec![] }, 8, 1.5).unwrap();
        prop_assert_eq!(a, b);
    }
}
