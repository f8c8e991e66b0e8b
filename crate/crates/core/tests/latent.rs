mod oracles;

use sparsect_core::diffusion::LatentCode;
use sparsect_core::latent::{quantize, AutoencoderPair, Codebook, ToyAutoencoder, DEFAULT_CODEBOOK_SIZE, DEFAULT_CODE_DIM};
use sparsect_core::metrics::psnr;
use sparsect_core::rng::{gaussian_vec, stream};
use sparsect_core::volume::{clip_values, make_phantom, normalize, GridSpec, Phantom, ValueUnit, Volume3D};
use rand::Rng;

/// 2×2×2 block means, then edge-clamped trilinear upsampling at the
/// latent-index positions `(i − 0.5) / 2` of every output voxel.
fn down_up(v: &Volume3D) -> Vec<f64> {
    let [d, h, w] = v.dims();
    let (ld, lh, lw) = (d / 2, h / 2, w / 2);
    let mut pooled = vec![0.0; ld * lh * lw];
    for i in 0..d {
        for j in 0..h {
            for k in 0..w {
                pooled[((i / 2) * lh + j / 2) * lw + k / 2] += v.get(i, j, k) / 8.0;
            }
        }
    }
    let axis = |x: usize, n: usize| -> (usize, usize, f64) {
        let c = ((x as f64 - 0.5) / 2.0).clamp(0.0, (n - 1) as f64);
        let lo = c.floor() as usize;
        (lo, (lo + 1).min(n - 1), c - lo as f64)
    };
    let mut out = Vec::with_capacity(v.len());
    for i in 0..d {
        let (i0, i1, fi) = axis(i, ld);
        for j in 0..h {
            let (j0, j1, fj) = axis(j, lh);
            for k in 0..w {
                let (k0, k1, fk) = axis(k, lw);
                let at = |a: usize, b: usize, c: usize| pooled[(a * lh + b) * lw + c];
                let mut acc = 0.0;
                for (ii, wi) in [(i0, 1.0 - fi), (i1, fi)] {
                    for (jj, wj) in [(j0, 1.0 - fj), (j1, fj)] {
                        for (kk, wk) in [(k0, 1.0 - fk), (k1, fk)] {
                            acc += wi * wj * wk * at(ii, jj, kk);
                        }
                    }
                }
                out.push(acc.clamp(0.0, 1.0));
            }
        }
    }
    out
}

#[test]
fn toy_round_trip_is_downsample_then_upsample() {
    let grid = GridSpec::new([12, 10, 8], [1.0, 1.5, 2.0], [3.0, -1.0, 0.5]).unwrap();
    let mut rng = stream(17);
    let data: Vec<f64> = (0..grid.len()).map(|_| rng.random::<f64>()).collect();
    let v = Volume3D::new(grid, ValueUnit::Normalized, data).unwrap();
    let ae = ToyAutoencoder::default();
    let z = ae.encode(&v).unwrap();
    assert_eq!(z.shape(), &[DEFAULT_CODE_DIM, 6, 5, 4]);
    let r = ae.decode(&z, &grid).unwrap();
    for (a, b) in r.data().iter().zip(down_up(&v)) {
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }
}

#[test]
fn full_size_shapes_and_smooth_round_trip() {
    let n = 128;
    let hu = make_phantom(&Phantom::library("smooth", n as f64 / 2.0).unwrap(), n, 1.0).unwrap();
    let v = normalize(&clip_values(&hu, 0.0, 1.0).unwrap(), 0.0, 1.0).unwrap();
    let ae = ToyAutoencoder::default();
    let z = ae.encode(&v).unwrap();
    assert_eq!(z.shape(), &[8, 64, 64, 64]);
    let r = ae.decode(&z, v.grid()).unwrap();
    assert_eq!(r.dims(), [n; 3]);
    let db = psnr(&v, &r, 1.0).unwrap();
    assert!(db >= 35.0, "round trip {db} dB");
}

#[test]
fn constant_volume_survives_round_trip() {
    let grid = GridSpec::cube(8, 1.0).unwrap();
    let v = Volume3D::new(grid, ValueUnit::Normalized, vec![0.375; grid.len()]).unwrap();
    let ae = ToyAutoencoder::default();
    let r = ae.decode(&ae.encode(&v).unwrap(), &grid).unwrap();
    assert!(r.data().iter().all(|x| (x - 0.375).abs() <= 1e-12));
}

#[test]
fn quantize_matches_exhaustive_scan() {
    let cb = Codebook::random(DEFAULT_CODEBOOK_SIZE, DEFAULT_CODE_DIM, 3).unwrap();
    let positions = 10_000;
    let data = gaussian_vec(&mut stream(4), DEFAULT_CODE_DIM * positions);
    let z = LatentCode::new(vec![DEFAULT_CODE_DIM, positions], data.clone(), 0).unwrap();
    let q = quantize(&z, &cb).unwrap();
    for p in 0..positions {
        let v: Vec<f64> = (0..DEFAULT_CODE_DIM).map(|c| data[c * positions + p]).collect();
        assert_eq!(q.indices[p], oracles::nearest_brute(cb.entries(), DEFAULT_CODE_DIM, &v), "position {p}");
    }
}

#[test]
fn ties_break_to_lowest_index() {
    let cb = Codebook::new(3, 1, vec![1.0, -1.0, 3.0]).unwrap();
    let z = LatentCode::new(vec![1, 2], vec![0.0, 2.0], 0).unwrap();
    assert_eq!(quantize(&z, &cb).unwrap().indices, vec![0, 0]);
}

#[test]
fn codebook_file_round_trip() {
    let dir = std::env::temp_dir().join(format!("cbk1-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("book.cbk");
    let cb = Codebook::random(64, 8, 9).unwrap();
    cb.write_file(&path).unwrap();
    assert_eq!(Codebook::read_file(&path).unwrap(), cb);
    std::fs::remove_dir_all(&dir).unwrap();
}
