use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use s3vc::{
    load_tokens, save_tokens, train_scheme, DiscretizationScheme, Error, FeatureMatrix,
    SchemeConfig, TokenSequence,
};

fn gaussian(seed: u64, rows: usize, dim: usize) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..rows * dim)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    FeatureMatrix::from_f64(rows, dim, &values).unwrap()
}

fn sq(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum()
}

#[test]
fn pq_with_one_partition_is_single() {
    let data = gaussian(1, 400, 6);
    for seed in [0, 9, u64::MAX] {
        let single = train_scheme(&data, &SchemeConfig::single(12), seed).unwrap();
        let pq = train_scheme(&data, &SchemeConfig::pq(12, 1), seed).unwrap();
        assert_eq!(
            single.codebooks()[0].centroids().to_bytes(),
            pq.codebooks()[0].centroids().to_bytes()
        );
        assert_eq!(single.tokenize(&data).unwrap(), pq.tokenize(&data).unwrap());
        assert_eq!(
            single
                .reconstruct(&single.tokenize(&data).unwrap())
                .unwrap(),
            pq.reconstruct(&pq.tokenize(&data).unwrap()).unwrap()
        );
    }
}

#[test]
fn one_member_ensemble_is_single() {
    let data = gaussian(2, 300, 4);
    let single = train_scheme(&data, &SchemeConfig::single(10), 5).unwrap();
    let ens = train_scheme(&data, &SchemeConfig::ensemble(&[10]), 5).unwrap();
    assert_eq!(single.codebooks(), ens.codebooks());
    let t = single.tokenize(&data).unwrap();
    assert_eq!(t, ens.tokenize(&data).unwrap());
    assert_eq!(
        single.reconstruct(&t).unwrap(),
        ens.reconstruct(&t).unwrap()
    );
}

#[test]
fn appending_an_ensemble_member_keeps_existing_streams() {
    let data = gaussian(3, 500, 4);
    let two = train_scheme(&data, &SchemeConfig::ensemble(&[8, 16]), 11).unwrap();
    let three = train_scheme(&data, &SchemeConfig::ensemble(&[8, 16, 32]), 11).unwrap();
    assert_eq!(two.codebooks(), &three.codebooks()[..2]);
    let (t2, t3) = (two.tokenize(&data).unwrap(), three.tokenize(&data).unwrap());
    for f in 0..data.rows() {
        assert_eq!(t2.frame(f), &t3.frame(f)[..2]);
    }
}

#[test]
fn ensemble_members_have_requested_sizes() {
    let data = gaussian(4, 400, 4);
    let s = train_scheme(&data, &SchemeConfig::ensemble(&[50, 100, 200]), 0).unwrap();
    assert_eq!(s.stream_sizes(), vec![50, 100, 200]);
    assert_eq!(s.tokenize(&data).unwrap().streams(), 3);
}

#[test]
fn pq_error_decomposes_over_subspaces() {
    let data = gaussian(5, 600, 8);
    for partitions in [1, 2, 4, 8] {
        let s = train_scheme(&data, &SchemeConfig::pq(16, partitions), 3).unwrap();
        let total = s.quantization_error(&data).unwrap() * data.rows() as f64;
        let tokens = s.tokenize(&data).unwrap();
        let width = 8 / partitions;
        let mut parts = 0.0;
        for (n, cb) in s.codebooks().iter().enumerate() {
            let block = data.column_block(n * width, width).unwrap();
            for (f, x) in block.iter_rows().enumerate() {
                parts += sq(x, cb.centroid(tokens.get(f, n) as usize));
            }
        }
        assert!(
            (total - parts).abs() <= 1e-9 * total,
            "N={partitions}: {total} vs {parts}"
        );
    }
}

#[test]
fn pq_rejects_non_dividing_partitions() {
    let data = gaussian(6, 50, 16);
    let err = train_scheme(&data, &SchemeConfig::pq(4, 3), 0).unwrap_err();
    assert!(
        matches!(err, Error::InvalidConfig(ref m) if m.contains("divisible")),
        "{err}"
    );
}

#[test]
fn scheme_and_token_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = gaussian(7, 200, 6);
    let s = train_scheme(&data, &SchemeConfig::pq(8, 3), 1).unwrap();
    let path = dir.path().join("s.s3cb");
    s.save(&path).unwrap();
    let loaded = DiscretizationScheme::load(&path).unwrap();
    let tokens = s.tokenize(&data).unwrap();
    assert_eq!(loaded.tokenize(&data).unwrap(), tokens);
    for name in ["t.csv", "t.s3tk"] {
        let p = dir.path().join(name);
        save_tokens(&tokens, &p).unwrap();
        assert_eq!(load_tokens(&p).unwrap(), tokens);
    }
}

#[test]
fn single_token_zero_reconstructs_first_centroid() {
    let data = gaussian(8, 100, 3);
    let s = train_scheme(&data, &SchemeConfig::single(4), 0).unwrap();
    let tokens = TokenSequence::new(3, 1, vec![0, 0, 0]).unwrap();
    let out = s.reconstruct(&tokens).unwrap();
    for row in out.iter_rows() {
        assert_eq!(row, s.codebooks()[0].centroid(0));
    }
}

fn scheme_strategy() -> impl Strategy<Value = SchemeConfig> {
    prop_oneof![
        (1usize..12).prop_map(SchemeConfig::single),
        (1usize..12, prop::sample::select(vec![1usize, 2, 3, 6]))
            .prop_map(|(k, n)| SchemeConfig::pq(k, n)),
        prop::collection::btree_set(1usize..12, 1..4)
            .prop_map(|s| SchemeConfig::ensemble(&s.into_iter().collect::<Vec<_>>())),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn quantizer_fixed_point(seed in any::<u64>(), cfg in scheme_strategy()) {
        let data = gaussian(seed, 60, 6);
        let s = train_scheme(&data, &cfg, seed).unwrap();
        let t = s.tokenize(&data).unwrap();
        prop_assert_eq!(t.frames(), 60);
        prop_assert_eq!(t.streams(), cfg.n_streams());
        let recon = s.reconstruct(&t).unwrap();
        prop_assert_eq!(recon.cols(), 6);
        if cfg.mode != s3vc::Mode::Ensemble {
            prop_assert_eq!(s.tokenize(&recon).unwrap(), t);
        }
        let back = DiscretizationScheme::from_bytes(&s.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), s.to_bytes());
    }

    #[test]
    fn token_csv_round_trip(frames in 1usize..20, streams in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx: Vec<u32> = (0..frames * streams).map(|_| rng.random()).collect();
        let t = TokenSequence::new(frames, streams, idx).unwrap();
        prop_assert_eq!(TokenSequence::from_csv_reader(t.to_csv().as_bytes()).unwrap(), t.clone());
        prop_assert_eq!(TokenSequence::from_bytes(&t.to_bytes()).unwrap(), t);
    }

    #[test]
    fn feature_file_round_trip(rows in 1usize..12, cols in 1usize..6, seed in any::<u64>()) {
        let m = gaussian(seed, rows, cols);
        let bytes = m.to_bytes();
        prop_assert_eq!(bytes.len(), 16 + 4 * rows * cols);
        prop_assert_eq!(FeatureMatrix::from_bytes(&bytes).unwrap(), m);
    }
}
