use clx_core::nn::{
    cosine_similarity, ntxent, Adam, Backbone, Classifier, Encoder, EncoderConfig, Head, Params,
};
use clx_core::Window;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy() -> EncoderConfig {
    EncoderConfig::with_dims(16, 4, 3, 3, 4)
}

fn random_bits(n: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0..2u8)).collect()
}

/// Nudges every parameter so that no ReLU input sits exactly at zero.
fn jitter<P: Params<f64>>(p: &mut P, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central differences over every parameter of `p`.
fn check_gradient<P: Params<f64> + Clone>(p: &P, analytic: &P, loss: impl Fn(&P) -> f64) -> f64 {
    let eps = 1e-4;
    let mut worst: f64 = 0.0;
    let n_tensors = p.tensors().len();
    for ti in 0..n_tensors {
        for i in 0..p.tensors()[ti].len() {
            let mut plus = p.clone();
            plus.tensors_mut()[ti][i] += eps;
            let mut minus = p.clone();
            minus.tensors_mut()[ti][i] -= eps;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            worst = worst.max(rel_err(analytic.tensors()[ti][i], fd));
        }
    }
    worst
}

#[test]
fn ntxent_gradient_matches_finite_differences() {
    let mut enc = Encoder::<f64>::init(&toy(), 3).unwrap();
    jitter(&mut enc, 4);
    let bits = random_bits(6 * 16, 5);
    let (loss, g) = enc.ntxent_gradients(&bits, 0.5).unwrap();
    let recompute = |e: &Encoder<f64>| {
        let z = e.embed(&bits).unwrap();
        ntxent(&z, 4, 0.5).unwrap().0
    };
    assert!((loss - recompute(&enc)).abs() < 1e-12);
    let worst = check_gradient(&enc, &g, recompute);
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn bce_gradient_matches_finite_differences_and_respects_freeze() {
    let mut clf = Classifier::<f64>::new(Encoder::init(&toy(), 8).unwrap(), 5, 8).unwrap();
    jitter(&mut clf.head, 9);
    let bits = random_bits(7 * 16, 10);
    let labels = [1, 0, 0, 1, 1, 0, 1];
    let (loss, g) = clf.gradients(&bits, &labels).unwrap();
    let pooled = clf.encoder.backbone.pooled(&bits).unwrap();
    let recompute = |h: &Head<f64>| h.bce_gradients(&pooled, &labels).unwrap().0;
    assert!((loss - recompute(&clf.head)).abs() < 1e-12);
    let worst = check_gradient(&clf.head, &g.head, recompute);
    assert!(worst < 1e-4, "max relative error {worst}");
    assert!(g.backbone.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
}

#[test]
fn f32_gradients_agree_with_f64() {
    let enc = Encoder::<f32>::init(&EncoderConfig::with_dims(40, 8, 10, 3, 8), 11).unwrap();
    let bits = random_bits(8 * 40, 12);
    let (l32, g32) = enc.ntxent_gradients(&bits, 0.5).unwrap();
    let (l64, g64) = enc.cast::<f64>().ntxent_gradients(&bits, 0.5).unwrap();
    assert!((l32 as f64 - l64).abs() < 1e-4);
    let num: f64 = g32.tensors().iter().zip(g64.tensors()).flat_map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).powi(2))).sum();
    let den: f64 = g64.tensors().iter().flat_map(|t| t.iter().map(|y| y * y)).sum();
    assert!((num / den).sqrt() < 1e-3);
}

#[test]
fn zero_weights_give_output_bias() {
    let mut enc = Encoder::<f64>::init(&toy(), 1).unwrap();
    for t in enc.tensors_mut() {
        t.fill(0.0);
    }
    enc.b_out = vec![0.5, -1.0, 2.0, 3.5];
    let z = enc.forward(&Window::from_stream(&[0xA7, 0x3C], 0, 16)).unwrap();
    assert_eq!(z, enc.b_out);
}

#[test]
fn single_position_chain_by_hand() {
    let cfg = EncoderConfig::with_dims(1, 1, 2, 1, 1);
    let mut enc = Encoder::<f64>::init(&cfg, 0).unwrap();
    enc.backbone.w_in = vec![1.5];
    enc.backbone.b_in = vec![-0.25];
    enc.backbone.conv_w = vec![vec![0.5], vec![-3.0]];
    enc.backbone.conv_b = vec![vec![0.1], vec![0.2]];
    enc.w_out = vec![2.0];
    enc.b_out = vec![0.3];
    let relu = |x: f64| x.max(0.0);
    let h0: f64 = 1.0 * 1.5 - 0.25;
    let h1 = relu(h0 + 0.5 * h0 + 0.1);
    let h2 = relu(h1 - 3.0 * h1 + 0.2);
    let want = h2 * 2.0 + 0.3;
    let z = enc.forward(&Window { bits: vec![1], origin: None }).unwrap();
    assert_eq!(z, vec![want]);
    let z0 = enc.forward(&Window { bits: vec![0], origin: None }).unwrap();
    let g0 = relu(-0.25 + 0.5 * -0.25 + 0.1);
    let g1 = relu(g0 - 3.0 * g0 + 0.2);
    assert_eq!(z0, vec![g1 * 2.0 + 0.3]);
}

#[test]
fn forward_is_deterministic_and_finite() {
    let cfg = EncoderConfig::new(96);
    let enc = Encoder::<f32>::init(&cfg, 42).unwrap();
    let bits = random_bits(40 * 96, 1);
    let a = enc.embed(&bits).unwrap();
    let b = Encoder::<f32>::init(&cfg, 42).unwrap().embed(&bits).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|v| v.is_finite()));
    // Batched and one-at-a-time evaluation agree exactly.
    let single = enc.forward(&Window { bits: bits[17 * 96..18 * 96].to_vec(), origin: None }).unwrap();
    assert_eq!(single, a[17 * 64..18 * 64]);
    let (_, g) = enc.ntxent_gradients(&bits[..32 * 96], 0.5).unwrap();
    assert!(g.all_finite());
}

#[test]
fn shape_mismatch_is_an_error() {
    let enc = Encoder::<f32>::init(&toy(), 1).unwrap();
    assert!(enc.forward(&Window { bits: vec![0; 15], origin: None }).is_err());
    assert!(enc.embed(&[0; 17]).is_err());
    let mut bad = toy();
    bad.dilations.pop();
    assert!(Backbone::<f32>::init(&bad, 0).is_err());
}

#[test]
fn permuting_positions_with_unit_kernels_keeps_the_pooled_output() {
    let cfg = EncoderConfig::with_dims(12, 3, 4, 1, 2);
    let enc = Encoder::<f64>::init(&cfg, 6).unwrap();
    let bits = random_bits(12, 7);
    let mut perm = bits.clone();
    perm.reverse();
    perm.swap(0, 5);
    let a = enc.embed(&bits).unwrap();
    let b = enc.embed(&perm).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn classifier_head_contracts() {
    let enc = Encoder::<f64>::init(&toy(), 2).unwrap();
    let mut clf = Classifier::new(enc, 8, 2).unwrap();
    let w = Window { bits: random_bits(16, 3), origin: None };
    let p = clf.forward(&w).unwrap();
    clf.head.b2[0] += 0.7;
    assert!(clf.forward(&w).unwrap() > p);
    for t in clf.head.tensors_mut() {
        t.fill(0.0);
    }
    assert_eq!(clf.forward(&w).unwrap(), 0.5);
}

#[test]
fn toy_classifier_separates_constant_windows() {
    let enc = Encoder::<f32>::init(&toy(), 5).unwrap();
    let mut clf = Classifier::new(enc, 16, 5).unwrap();
    let mut bits = vec![0u8; 16];
    bits.extend(vec![1u8; 16]);
    let labels = [0u8, 1];
    let mut opt = Adam::new(&clf.head, 0.01);
    for _ in 0..100 {
        let (_, g) = clf.gradients(&bits, &labels).unwrap();
        opt.step(&mut clf.head, &g.head).unwrap();
    }
    let p = clf.predict(&bits).unwrap();
    assert!(p[0] < 0.1 && p[1] > 0.9, "{p:?}");
}

fn brute_force_ntxent(z: &[Vec<f64>], tau: f64) -> f64 {
    let m = z.len();
    let s = |i: usize, j: usize| cosine_similarity(&z[i], &z[j]);
    let ell = |i: usize, j: usize| {
        let num = (s(i, j) / tau).exp();
        let den: f64 = (0..m).filter(|&k| k != i).map(|k| (s(i, k) / tau).exp()).sum();
        -(num / den).ln()
    };
    let n = m / 2;
    (0..n).map(|k| ell(2 * k, 2 * k + 1) + ell(2 * k + 1, 2 * k)).sum::<f64>() / (2 * n) as f64
}

#[test]
fn ntxent_orthonormal_pairs_match_enumeration() {
    let e1 = vec![1.0, 0.0];
    let e2 = vec![0.0, 1.0];
    let z = vec![e1.clone(), e1, e2.clone(), e2];
    let flat: Vec<f64> = z.concat();
    let (l, _) = ntxent(&flat, 2, 1.0).unwrap();
    let want = brute_force_ntxent(&z, 1.0);
    assert!((l - want).abs() < 1e-9);
    // Closed form: each anchor sees e^1 against e^1 + 2·e^0.
    let closed = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
    assert!((l - closed).abs() < 1e-12);
}

#[test]
fn ntxent_random_batches_match_enumeration_and_invariances() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for n in 1..6 {
        let z: Vec<Vec<f64>> = (0..2 * n).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let flat = z.concat();
        let (l, _) = ntxent(&flat, 5, 0.3).unwrap();
        assert!(l >= 0.0);
        assert!((l - brute_force_ntxent(&z, 0.3)).abs() < 1e-9);
        let mut scaled = z.clone();
        scaled[0].iter_mut().for_each(|v| *v *= 7.5);
        assert!((ntxent(&scaled.concat(), 5, 0.3).unwrap().0 - l).abs() < 1e-12);
        let mut swapped = z.clone();
        swapped.swap(0, 1);
        assert!((ntxent(&swapped.concat(), 5, 0.3).unwrap().0 - l).abs() < 1e-12);
    }
}

#[test]
fn adam_runs_are_reproducible() {
    let run = || {
        let mut enc = Encoder::<f32>::init(&toy(), 21).unwrap();
        let mut opt = Adam::new(&enc, 1e-3);
        let bits = random_bits(8 * 16, 22);
        for _ in 0..5 {
            let (_, g) = enc.ntxent_gradients(&bits, 0.5).unwrap();
            opt.step(&mut enc, &g).unwrap();
        }
        enc
    };
    assert_eq!(run(), run());
}
