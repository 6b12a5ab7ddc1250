mod common;

use common::{naive_pearson, naive_psnr, naive_ssim, random_raster, rel_err, rng};
use deepntl::raster::Raster;
use deepntl::train::{evaluate_pair, pearson_r, psnr, ssim_global};
use proptest::prelude::*;

#[test]
fn agree_with_naive_oracle() {
    let mut g = rng(1);
    for _ in 0..100 {
        let a = random_raster(&mut g, 32, 32, 496.0);
        let b = random_raster(&mut g, 32, 32, 496.0);
        assert!(rel_err(pearson_r(&a, &b).unwrap(), naive_pearson(&a, &b)) < 1e-9);
        assert!(rel_err(psnr(&a, &b, 496.0).unwrap(), naive_psnr(&a, &b, 496.0)) < 1e-9);
        assert!(rel_err(ssim_global(&a, &b, 496.0).unwrap(), naive_ssim(&a, &b, 496.0)) < 1e-9);
    }
}

#[test]
fn hand_evaluated_cases() {
    let r = |v: &[f32]| Raster::new(1, v.len(), v.to_vec()).unwrap();
    assert!((pearson_r(&r(&[0., 1., 2., 3.]), &r(&[1., 1., 3., 3.])).unwrap() - 0.894427).abs() < 1e-6);
    assert!((psnr(&r(&[0., 63.]), &r(&[0., 0.]), 63.0).unwrap() - 3.0103).abs() < 1e-4);
    let s = ssim_global(&Raster::filled(4, 4, 0.0).unwrap(), &Raster::filled(4, 4, 496.0).unwrap(), 496.0).unwrap();
    assert!((s - 1e-4 / (1.0 + 1e-4)).abs() < 1e-12);
    let rep = evaluate_pair(&r(&[1., 5., 2.]), &r(&[1., 5., 2.]), 496.0).unwrap();
    assert_eq!((rep.r, rep.psnr, rep.ssim), (1.0, f64::INFINITY, 1.0));
}

proptest! {
    #[test]
    fn constant_error_psnr_closed_form(quarters in 1u32..200, base in proptest::collection::vec(0u32..400, 4..50)) {
        // integer pixels plus multiples of 1/4 are exact in f32
        let e = quarters as f32 / 4.0;
        let a = Raster::new(1, base.len(), base.iter().map(|&v| v as f32).collect()).unwrap();
        let b = a.map_valid(|v| v + e).unwrap();
        prop_assert!((psnr(&a, &b, 496.0).unwrap() - 20.0 * (496.0 / e as f64).log10()).abs() < 1e-9);
    }

    #[test]
    fn ssim_is_symmetric(seed in 0u64..1000) {
        let mut g = rng(seed);
        let a = random_raster(&mut g, 6, 7, 100.0);
        let b = random_raster(&mut g, 6, 7, 100.0);
        prop_assert_eq!(ssim_global(&a, &b, 496.0).unwrap(), ssim_global(&b, &a, 496.0).unwrap());
    }
}

#[test]
fn pearson_ignores_positive_affine_maps() {
    use rand::Rng;
    let mut g = rng(2);
    // integer pixels keep every transformed value exact in f32
    let int_raster = |g: &mut rand_chacha::ChaCha8Rng| Raster::new(9, 11, (0..99).map(|_| g.random_range(0..64) as f32).collect()).unwrap();
    for _ in 0..20 {
        let a = int_raster(&mut g);
        let b = int_raster(&mut g);
        let r = pearson_r(&a, &b).unwrap();
        for (alpha, beta) in [(2.0f32, 0.0f32), (0.5, 3.0), (3.0, 7.0), (1.0, 100.0)] {
            let t = b.map_valid(|v| alpha * v + beta).unwrap();
            assert!((pearson_r(&a, &t).unwrap() - r).abs() < 1e-12, "alpha {alpha} beta {beta}");
        }
    }
}

#[test]
fn psnr_falls_as_noise_grows() {
    use rand::Rng;
    for seed in 0..3 {
        let mut g = rng(50 + seed);
        let a = random_raster(&mut g, 32, 32, 100.0);
        let unit: Vec<f32> = (0..1024).map(|_| g.random_range(-1.0..1.0)).collect();
        let mut last = f64::INFINITY;
        for amp in [0.1f32, 1.0, 5.0, 20.0] {
            let b = Raster::new(32, 32, a.data().iter().zip(&unit).map(|(v, n)| v + amp * n).collect()).unwrap();
            let p = psnr(&a, &b, 496.0).unwrap();
            assert!(p < last, "seed {seed} amp {amp}");
            last = p;
        }
    }
}

#[test]
fn ssim_of_self_is_exactly_one() {
    let mut g = rng(3);
    for _ in 0..50 {
        let a = random_raster(&mut g, 8, 8, 496.0);
        assert_eq!(ssim_global(&a, &a, 496.0).unwrap(), 1.0);
    }
}
