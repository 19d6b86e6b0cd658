use pan::checkpoint::{load_model, model_to_checkpoint, params_to_checkpoint, save_model, Checkpoint, VERSION};
use pan::Error;
use pan_core::model::{BranchInput, HeadKind, NetworkSpec, PanModel, Predictor};
use pan_core::sampler::VideoClip;
use pan_core::{ParamSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_params(seed: u64) -> ParamSet<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    for i in 0..rng.gen_range(1..6) {
        let rank = rng.gen_range(1..5);
        let shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..5)).collect();
        let n: usize = shape.iter().product();
        // Raw bit patterns cover subnormals, infinities and NaN payloads.
        let data = (0..n).map(|_| f32::from_bits(rng.gen())).collect();
        p.register(format!("layer{i}.w"), Tensor::new(&shape, data).unwrap()).unwrap();
    }
    p
}

fn bits(ck: &Checkpoint) -> Vec<(String, Vec<usize>, Vec<u32>)> {
    ck.entries
        .iter()
        .map(|(n, t)| (n.clone(), t.shape().to_vec(), t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn random_param_sets_round_trip_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..100 {
        let ck = params_to_checkpoint(&random_params(seed));
        let path = dir.path().join("p.panw");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(bits(&ck), bits(&back), "seed {seed}");
        assert_eq!(back.to_bytes(), ck.to_bytes());
    }
}

fn clip() -> VideoClip {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frames = (0..16).map(|_| (0..3 * 16 * 16).map(|_| rng.gen()).collect()).collect();
    VideoClip::new(16, 16, frames, 1).unwrap()
}

fn small_spec(input: BranchInput) -> NetworkSpec {
    NetworkSpec {
        segments: 4,
        stack: 2,
        widths: vec![4, 6],
        ..NetworkSpec::new(input, 3)
    }
}

#[test]
fn models_round_trip_with_identical_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let mut avg = small_spec(BranchInput::RgbMotion);
    avg.head = HeadKind::Average;
    let models = [
        PanModel::lite(small_spec(BranchInput::RgbMotion), 1).unwrap(),
        PanModel::lite(avg, 2).unwrap(),
        PanModel::full(small_spec(BranchInput::RgbMotion), 3).unwrap(),
    ];
    for (i, m) in models.iter().enumerate() {
        let path = dir.path().join(format!("m{i}.panw"));
        save_model(m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(&back, m);
        assert_eq!(model_to_checkpoint(&back).to_bytes(), std::fs::read(&path).unwrap());
        assert_eq!(back.predict(&clip()).unwrap(), m.predict(&clip()).unwrap());
    }
}

#[test]
fn unknown_version_and_foreign_files_rejected() {
    let mut bytes = Checkpoint::default().to_bytes();
    bytes[4..8].copy_from_slice(&(VERSION + 1).to_le_bytes());
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::UnsupportedVersion { .. })));
    let weights_only = params_to_checkpoint(&random_params(0));
    assert!(matches!(
        pan::checkpoint::model_from_checkpoint(&weights_only),
        Err(Error::Checkpoint(_))
    ));
}
