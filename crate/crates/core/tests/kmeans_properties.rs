use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use s3vc::kmeans::{assign, kmeanspp_init, lloyd_train, train, TrainParams};
use s3vc::FeatureMatrix;

/// Isotropic Gaussian blobs around well-separated random centres.
fn mixture(seed: u64, rows: usize, dim: usize, blobs: usize) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..blobs)
        .map(|_| (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect())
        .collect();
    let mut values = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        let c = &centres[rng.random_range(0..blobs)];
        for &m in c {
            let z: f64 = rng.sample(StandardNormal);
            values.push(m + z);
        }
    }
    FeatureMatrix::from_f64(rows, dim, &values).unwrap()
}

fn brute_force_mean_distortion(points: &[f64], k: usize) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    let total = k.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = c % k;
            c /= k;
        }
        let mut cost = 0.0;
        for cluster in 0..k {
            let members: Vec<f64> = (0..n)
                .filter(|&i| labels[i] == cluster)
                .map(|i| points[i])
                .collect();
            if members.is_empty() {
                continue;
            }
            let mean = members.iter().sum::<f64>() / members.len() as f64;
            cost += members.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
        }
        best = best.min(cost);
    }
    best / n as f64
}

#[test]
fn distortion_trace_non_increasing_on_100_seeds() {
    for seed in 0..100u64 {
        let data = mixture(seed, 300, 3, 5);
        let (_, report) = train(&data, 6, seed, TrainParams::default()).unwrap();
        for w in report.distortion_trace.windows(2) {
            assert!(w[1] <= w[0], "seed {seed}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn small_1d_problem_reaches_brute_force_optimum() {
    let points = [0.0, 1.0, 8.0, 9.0];
    let optimum = brute_force_mean_distortion(&points, 2);
    assert!((optimum - 0.25).abs() < 1e-12);
    let data = FeatureMatrix::from_f64(4, 1, &points).unwrap();
    for seed in 0..20 {
        let (cb, _) = lloyd_train(&data, 2, seed, 300, 1e-6).unwrap();
        let mut c: Vec<f32> = cb.centroids().as_slice().to_vec();
        c.sort_by(f32::total_cmp);
        assert_eq!(c, vec![0.5, 8.5], "seed {seed}");
        assert_eq!(assign(&cb, &data).unwrap().distortion, optimum);
    }
}

#[test]
fn training_is_bit_identical_across_thread_counts() {
    // Several chunks' worth of rows so the parallel reduction actually splits.
    let data = mixture(42, 5000, 8, 12);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(&data, 32, 7, TrainParams::default()).unwrap())
    };
    let (a, ra) = run(1);
    for threads in [2, 4, 7] {
        let (b, rb) = run(threads);
        assert_eq!(
            a.centroids().to_bytes(),
            b.centroids().to_bytes(),
            "{threads} threads"
        );
        assert_eq!(
            ra.distortion_trace
                .iter()
                .map(|d| d.to_bits())
                .collect::<Vec<_>>(),
            rb.distortion_trace
                .iter()
                .map(|d| d.to_bits())
                .collect::<Vec<_>>()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn assignment_is_consistent(seed in any::<u64>(), rows in 8usize..120, dim in 1usize..5, k in 1usize..8) {
        let data = mixture(seed, rows, dim, 3);
        let (cb, report) = train(&data, k, seed, TrainParams::default()).unwrap();
        let a = assign(&cb, &data).unwrap();
        prop_assert!(a.indices.iter().all(|&i| (i as usize) < k));
        let recomputed = data
            .iter_rows()
            .zip(&a.indices)
            .map(|(x, &i)| {
                x.iter()
                    .zip(cb.centroid(i as usize))
                    .map(|(&p, &q)| (p as f64 - q as f64).powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / rows as f64;
        prop_assert!((recomputed - a.distortion).abs() <= 1e-9 * recomputed.max(1.0));
        // No frame is strictly closer to another centroid.
        for (x, &i) in data.iter_rows().zip(&a.indices) {
            let d = |c: &[f32]| x.iter().zip(c).map(|(&p, &q)| (p as f64 - q as f64).powi(2)).sum::<f64>();
            let own = d(cb.centroid(i as usize));
            for j in 0..k {
                prop_assert!(own <= d(cb.centroid(j)));
            }
        }
        if let Some(&last) = report.distortion_trace.last() {
            prop_assert_eq!(last, a.distortion);
        }
    }

    #[test]
    fn seeding_picks_data_rows(seed in any::<u64>(), rows in 4usize..60, k in 1usize..4) {
        let data = mixture(seed ^ 0xabc, rows, 2, 2);
        let cb = kmeanspp_init(&data, k, seed).unwrap();
        for c in cb.centroids().iter_rows() {
            prop_assert!(data.iter_rows().any(|r| r == c));
        }
        prop_assert_eq!(cb, kmeanspp_init(&data, k, seed).unwrap());
    }
}
