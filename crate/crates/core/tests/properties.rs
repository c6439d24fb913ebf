use modgap::collapse::{fit_centralize, fit_delete};
use modgap::contrastive::{
    infonce_from_similarity, infonce_loss, EncoderArch, EncoderParams, Pair, PairBatch,
};
use modgap::corrupt::{corrupt_bank_keyed, cosine_noise_values, gaussian_noise_values, row_stream};
use modgap::diagnostics::{
    gap_vector, matched_pair_similarity_matrix, pca_project_2d, retrieval_topk_accuracy,
};
use modgap::embedding::{cosine, l2_norm};
use modgap::io::encode_binary;
use modgap::nn::Activation;
use modgap::{
    cosine_similarity, load_bank, normalize, save_bank, BankFormat, CorruptConfig, Embedding,
    EmbeddingBank, Modality,
};
use proptest::prelude::*;

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, dim).prop_filter("nonzero", |v| l2_norm(v) > 1e-3)
}

fn bank(
    modality: Modality,
    tasks: usize,
    rows: usize,
    dim: usize,
) -> impl Strategy<Value = EmbeddingBank> {
    prop::collection::vec(vector(dim), rows).prop_map(move |rows| {
        let mut b = EmbeddingBank::new(modality, dim).unwrap();
        for (i, r) in rows.iter().enumerate() {
            b.push(format!("t{}", i % tasks), r).unwrap();
        }
        b
    })
}

/// Visual and text banks over the same task ids.
fn bank_pair() -> impl Strategy<Value = (EmbeddingBank, EmbeddingBank)> {
    (2usize..6, 2usize..6, 1usize..3).prop_flat_map(|(dim, tasks, per)| {
        (
            bank(Modality::Visual, tasks, tasks * per, dim),
            bank(Modality::Text, tasks, tasks * (per + 1), dim),
        )
    })
}

fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cosine_is_symmetric_and_scale_invariant((a, b) in (2usize..8).prop_flat_map(|d| (vector(d), vector(d))), c in 1e-3f64..1e3) {
        let ea = Embedding::new(a.clone(), Modality::Visual).unwrap();
        let eb = Embedding::new(b.clone(), Modality::Text).unwrap();
        prop_assert_eq!(cosine_similarity(&ea, &eb).unwrap(), cosine_similarity(&eb, &ea).unwrap());
        prop_assert!((cosine_similarity(&ea, &eb).unwrap() - naive_cosine(&a, &b)).abs() < 1e-12);
        let scaled = Embedding::new(a.iter().map(|x| x * c).collect(), Modality::Text).unwrap();
        prop_assert!((cosine_similarity(&ea, &scaled).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn normalize_is_idempotent(v in (1usize..10).prop_flat_map(vector)) {
        let once = normalize(&Embedding::new(v, Modality::Visual).unwrap()).unwrap();
        let twice = normalize(&once).unwrap();
        prop_assert!((l2_norm(once.values()) - 1.0).abs() < 1e-12);
        for (x, y) in once.values().iter().zip(twice.values()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn binary_round_trip_is_bit_exact(
        rows in prop::collection::vec(prop::collection::vec(-1e6f32..1e6, 3), 0..12),
        text in any::<bool>(),
    ) {
        let modality = if text { Modality::Text } else { Modality::Visual };
        let mut b = EmbeddingBank::new(modality, 3).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let r: Vec<f64> = r.iter().map(|&x| x as f64).collect();
            b.push(format!("task-{i}-é"), &r).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.bin");
        save_bank(&b, &path, BankFormat::Binary).unwrap();
        let back = load_bank(&path, BankFormat::Binary).unwrap();
        prop_assert_eq!(&back, &b);
        prop_assert_eq!(encode_binary(&back).unwrap(), std::fs::read(&path).unwrap());
    }

    #[test]
    fn gap_vector_is_antisymmetric((v, l) in bank_pair()) {
        let g = gap_vector(&v, &l).unwrap();
        let h = gap_vector(&l, &v).unwrap();
        for (a, b) in g.iter().zip(&h) {
            prop_assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn similarity_diagonal_matches_brute_force((v, l) in bank_pair()) {
        let m = matched_pair_similarity_matrix(&v, &l).unwrap();
        for (i, task) in m.task_ids.iter().enumerate() {
            let mean = |b: &EmbeddingBank| {
                let mut acc = vec![0.0; b.dim()];
                let mut n = 0.0;
                for (id, r) in b.rows() {
                    if id == task {
                        for (a, x) in acc.iter_mut().zip(r) {
                            *a += x;
                        }
                        n += 1.0;
                    }
                }
                acc.into_iter().map(|a| a / n).collect::<Vec<_>>()
            };
            let (mv, ml) = (mean(&v), mean(&l));
            if l2_norm(&mv) > 1e-9 && l2_norm(&ml) > 1e-9 {
                prop_assert!((m.values[i][i] - naive_cosine(&mv, &ml)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn retrieval_is_monotone_in_k((v, l) in bank_pair()) {
        let mut prev = 0.0;
        for k in 1..=l.len() {
            let acc = retrieval_topk_accuracy(&v, &l, k).unwrap();
            prop_assert!(acc >= prev);
            prev = acc;
        }
        prop_assert_eq!(prev, 1.0);
    }

    #[test]
    fn pca_is_permutation_invariant(((v, l), seed) in (bank_pair(), any::<u64>())) {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.shuffle(&mut modgap::rng::substream(seed, &[]));
        let base = pca_project_2d(&[&v, &l]).unwrap();
        let moved = pca_project_2d(&[&v.permuted(&order).unwrap(), &l]).unwrap();
        for (i, &o) in order.iter().enumerate() {
            prop_assert!((moved[i].x - base[o].x).abs() < 1e-9);
            prop_assert!((moved[i].y - base[o].y).abs() < 1e-9);
        }
        for i in v.len()..base.len() {
            prop_assert!((moved[i].x - base[i].x).abs() < 1e-9);
        }
    }

    #[test]
    fn centralize_zeroes_means_and_keeps_differences((v, l) in bank_pair()) {
        let t = fit_centralize(&v, &l).unwrap();
        let cv = t.apply_bank(&v).unwrap();
        let cl = t.apply_bank(&l).unwrap();
        for m in [cv.mean().unwrap(), cl.mean().unwrap()] {
            prop_assert!(m.iter().all(|x| x.abs() < 1e-9));
        }
        prop_assert!(l2_norm(&gap_vector(&cv, &cl).unwrap()) < 1e-9);
        for i in 0..v.len() {
            for j in 0..v.len() {
                for k in 0..v.dim() {
                    let before = v.row(i)[k] - v.row(j)[k];
                    let after = cv.row(i)[k] - cv.row(j)[k];
                    prop_assert!((before - after).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn delete_commutes_with_permutation(((v, l), order_seed) in (bank_pair(), any::<u64>())) {
        use rand::seq::SliceRandom;
        prop_assume!(v.dim() >= 2);
        let t = fit_delete(&v, &l, 1).unwrap();
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.shuffle(&mut modgap::rng::substream(order_seed, &[]));
        let a = t.apply_bank(&v.permuted(&order).unwrap()).unwrap();
        let b = t.apply_bank(&v).unwrap().permuted(&order).unwrap();
        prop_assert_eq!(&a, &b);
        let tl = t.apply_bank(&l).unwrap();
        prop_assert_eq!(tl.dim(), a.dim());
        let modgap::CollapseTransform::Delete { deleted_dims, .. } = &t else { unreachable!() };
        for i in 0..l.len() {
            let kept: Vec<f64> = (0..l.dim()).filter(|d| !deleted_dims.contains(d)).map(|d| l.row(i)[d]).collect();
            prop_assert_eq!(tl.row(i), &kept[..]);
        }
    }

    #[test]
    fn cosine_noise_stays_in_the_cone(v in (2usize..10).prop_flat_map(vector), alpha in 0.0f64..=1.0, seed in any::<u64>()) {
        let out = cosine_noise_values(&v, alpha, &mut row_stream(seed, 0)).unwrap();
        let c = naive_cosine(&out, &v);
        prop_assert!(c >= alpha - 1e-9 && c <= 1.0 + 1e-9, "cos {} alpha {}", c, alpha);
        prop_assert!((l2_norm(&out) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn corrupt_is_permutation_equivariant(((v, _), seed, alpha) in (bank_pair(), any::<u64>(), 0.0f64..1.0)) {
        use rand::seq::SliceRandom;
        let cfg = CorruptConfig::cosine(alpha, seed);
        let keys: Vec<u64> = (0..v.len() as u64).collect();
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.shuffle(&mut modgap::rng::substream(seed, &[7]));
        let permuted_keys: Vec<u64> = order.iter().map(|&i| keys[i]).collect();
        let a = corrupt_bank_keyed(&v.permuted(&order).unwrap(), &cfg, &permuted_keys).unwrap();
        let b = corrupt_bank_keyed(&v, &cfg, &keys).unwrap().permuted(&order).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn infonce_is_nonnegative_and_row_permutation_invariant(seed in 0u64..1000, b in 1usize..6) {
        let (params, batch) = tiny_problem(seed, b);
        let loss = infonce_loss(&params, &batch).unwrap();
        prop_assert!(loss >= 0.0);
        let mut rows = batch.rows.clone();
        rows.reverse();
        rows.rotate_left(seed as usize % b);
        let other = infonce_loss(&params, &PairBatch { rows }).unwrap();
        prop_assert!((loss - other).abs() < 1e-12);
    }

    #[test]
    fn infonce_ignores_visual_row_scale(
        (u, w) in (2usize..5, 2usize..6).prop_flat_map(|(b, d)| (
            prop::collection::vec(vector(d), b),
            prop::collection::vec(vector(d), b),
        )),
        row in any::<prop::sample::Index>(),
        c in 1e-3f64..1e3,
        tau in 0.05f64..2.0,
    ) {
        let sim = |u: &[Vec<f64>]| -> Vec<Vec<f64>> {
            u.iter().map(|uj| w.iter().map(|wi| cosine(uj, wi).unwrap()).collect()).collect()
        };
        let base = infonce_from_similarity(&sim(&u), tau);
        let mut scaled = u.clone();
        let r = row.index(u.len());
        scaled[r].iter_mut().for_each(|x| *x *= c);
        prop_assert!((infonce_from_similarity(&sim(&scaled), tau) - base).abs() < 1e-9);
    }

    #[test]
    fn small_loss_implies_diagonal_margin(seed in 0u64..500) {
        let b = 4;
        let mut rng = modgap::rng::substream(seed, &[1]);
        let sim: Vec<Vec<f64>> = (0..b)
            .map(|j| (0..b).map(|i| if i == j { 1.0 } else { rand::Rng::random_range(&mut rng, -1.0..1.0) }).collect())
            .collect();
        let loss = infonce_from_similarity(&sim, 0.01);
        if loss < 1e-6 {
            for i in 0..b {
                for j in 0..b {
                    if i != j {
                        prop_assert!(sim[i][i] > sim[j][i]);
                    }
                }
            }
        }
    }
}

pub fn tiny_problem(seed: u64, b: usize) -> (EncoderParams, PairBatch) {
    use rand::Rng as _;
    let arch = EncoderArch {
        visual_input: 5,
        visual_hidden: vec![6],
        vocab_size: 7,
        token_dim: 3,
        text_hidden: vec![5],
        dim: 4,
        temperature: 1.0,
        activation: Activation::Tanh,
    };
    let params = EncoderParams::init(&arch, seed).unwrap();
    let mut rng = modgap::rng::substream(seed, &[1_000]);
    let rows = (0..b)
        .map(|_| Pair {
            o_start: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
            o_end: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
            tokens: (0..3).map(|_| rng.random_range(0..7)).collect(),
        })
        .collect();
    (params, PairBatch { rows })
}

#[test]
fn cosine_noise_alpha_one_normalizes() {
    let v = [3.0, 4.0, 0.0];
    let out = cosine_noise_values(&v, 1.0, &mut row_stream(1, 2)).unwrap();
    for (a, b) in out.iter().zip([0.6, 0.8, 0.0]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn cosine_noise_scale_is_uniform() {
    // Kolmogorov-Smirnov against U[alpha, 1]; 1% critical value 1.628 / sqrt(n).
    let alpha = 0.2;
    let n = 10_000;
    let v = [0.3, -1.2, 0.5, 2.0, 0.1];
    let mut s: Vec<f64> = (0..n)
        .map(|i| {
            naive_cosine(
                &cosine_noise_values(&v, alpha, &mut row_stream(42, i)).unwrap(),
                &v,
            )
        })
        .collect();
    s.sort_by(f64::total_cmp);
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = ((x - alpha) / (1.0 - alpha)).clamp(0.0, 1.0);
            (f - i as f64 / n as f64)
                .abs()
                .max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(d < 1.628 / (n as f64).sqrt(), "KS statistic {d}");
}

#[test]
fn cosine_noise_is_isotropic_around_the_anchor() {
    let n = 20_000;
    let v = [1.0, 2.0, -1.0, 0.5];
    let anchor: Vec<f64> = {
        let norm = l2_norm(&v);
        v.iter().map(|x| x / norm).collect()
    };
    let mut sum = [0.0; 4];
    let mut sq = [0.0; 4];
    for i in 0..n {
        let out = cosine_noise_values(&v, 0.2, &mut row_stream(9, i)).unwrap();
        let along: f64 = out.iter().zip(&anchor).map(|(a, b)| a * b).sum();
        for k in 0..4 {
            let perp = out[k] - along * anchor[k];
            sum[k] += perp;
            sq[k] += perp * perp;
        }
    }
    for k in 0..4 {
        let mean = sum[k] / n as f64;
        let se = ((sq[k] / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            mean.abs() < 3.0 * se,
            "coordinate {k}: mean {mean}, se {se}"
        );
    }
}

#[test]
fn gaussian_noise_statistics() {
    let v = vec![0.5; 8];
    let n = 5_000;
    for std in [1e-6, 1e-3, 0.1] {
        let bound = 5.0 * std * (v.len() as f64).sqrt();
        let mut within = 0;
        let mut sq = 0.0;
        for i in 0..n {
            let out = gaussian_noise_values(&v, std, &mut row_stream(3, i)).unwrap();
            let d: Vec<f64> = out.iter().zip(&v).map(|(a, b)| a - b).collect();
            if l2_norm(&d) <= bound {
                within += 1;
            }
            sq += d.iter().map(|x| x * x).sum::<f64>();
        }
        assert!(within as f64 >= 0.99 * n as f64);
        let realized = (sq / (n as usize * v.len()) as f64).sqrt();
        assert!(
            (realized / std - 1.0).abs() < 0.05,
            "std {std}: realized {realized}"
        );
    }
    // unlike cosine noise, large Gaussian noise can reverse the direction
    let reversed = (0..2_000)
        .filter(|&i| {
            naive_cosine(
                &gaussian_noise_values(&v, 1.0, &mut row_stream(4, i)).unwrap(),
                &v,
            ) < 0.0
        })
        .count();
    assert!(reversed > 0);
}
