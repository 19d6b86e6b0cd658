use pan::export::{dequantize, export_pa_png, import_pa_png, quantize, sidecar_path, MapRange};
use pan::synth::SynthSpec;
use pan_core::pa::{init_pa_weights, PaConfig};
use pan_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn png_round_trip_within_half_a_step() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale: f32 = rng.gen_range(0.01..100.0);
        let map = Tensor::from_fn(&[1, 13, 17], |_| rng.gen::<f32>() * scale - 3.0);
        let path = dir.path().join(format!("m{seed}.png"));
        let range = export_pa_png(&map, &path).unwrap();
        assert!(sidecar_path(&path).exists());
        let back = import_pa_png(&path).unwrap();
        assert_eq!(back.shape(), map.shape());
        let tol = (range.max - range.min) / 255.0 / 2.0 * 1.0001;
        for (a, b) in map.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= tol, "{a} vs {b}, tol {tol}");
        }
    }
}

#[test]
fn degenerate_map_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.png");
    let r = export_pa_png(&Tensor::full(&[1, 4, 4], 2.5), &path).unwrap();
    assert_eq!(r, MapRange { min: 2.5, max: 2.5, degenerate: true });
    assert!(import_pa_png(&path).unwrap().data().iter().all(|&v| v == 2.5));
    let (img, _) = quantize(&Tensor::full(&[4, 4], 2.5)).unwrap();
    assert_eq!(dequantize(&img, &r).shape(), &[1, 4, 4]);
}

#[test]
fn moving_square_export_lights_only_the_boundary_band() {
    let spec = SynthSpec {
        noise_sigma: 0.0,
        ..SynthSpec::default()
    };
    let clip = spec.clip(0).unwrap();
    let (a, b) = (clip.frame::<f32>(10), clip.frame::<f32>(11));
    let (module, params) = init_pa_weights(PaConfig::default(), 4).unwrap();
    let map = module.pair(&params, &a, &b).unwrap();
    let (img, range) = quantize(&map).unwrap();
    assert!(!range.degenerate);

    let n = spec.size;
    let changed: Vec<(usize, usize)> = (0..n * n)
        .map(|p| (p / n, p % n))
        .filter(|&(y, x)| (0..3).any(|c| a.at(&[c, y, x]) != b.at(&[c, y, x])))
        .collect();
    let reach = module.config().padding();
    let near = |y: usize, x: usize| changed.iter().any(|&(cy, cx)| cy.abs_diff(y) <= reach && cx.abs_diff(x) <= reach);
    let mut lit = 0;
    for y in 0..n {
        for x in 0..n {
            let p = img.get_pixel(x as u32, y as u32).0[0];
            if near(y, x) {
                lit += usize::from(p > 0);
            } else {
                assert_eq!(p, 0, "pixel ({y}, {x}) lit outside the band");
            }
        }
    }
    assert!(lit > 0);
    // The square's interior, away from both moving edges, stays dark too.
    let (y0, x0) = spec.trajectory(0)[11];
    let centre = (y0 + spec.square / 2, x0 + spec.square / 2);
    assert!(!near(centre.0, centre.1));
}
