use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spatiotag_core::active::{random_utility, reweight};
use spatiotag_core::corpus::Sentence;
use spatiotag_core::ensemble::{draw_subset, SampleWeights};

#[test]
fn bernoulli_inclusion_matches_weights() {
    let weights = vec![0.2, 0.5, 0.8, 1.0, 0.35, 0.65, 0.9, 0.5, 0.75, 0.55];
    let w = SampleWeights::new(weights.clone()).unwrap();
    let draws = 10_000;
    let mut counts = vec![0usize; weights.len()];
    for seed in 0..draws {
        for i in draw_subset(&w, 0, seed) {
            counts[i] += 1;
        }
    }
    for (i, (&c, &want)) in counts.iter().zip(&weights).enumerate() {
        let freq = c as f64 / draws as f64;
        assert!((freq - want).abs() <= 0.02, "example {i}: {freq} vs {want}");
    }
}

#[test]
fn weights_stay_in_range_over_many_rounds() {
    for r in [0.5, 0.8] {
        for literal in [false, true] {
            let mut w: Vec<f64> = vec![1.0; 5];
            for t in 1..=100 {
                w = reweight(&w, 1 + t % 3, t, r, literal);
                assert!(w.iter().all(|&x| (r..=1.0).contains(&x)), "r {r} round {t}");
                assert_eq!(*w.last().unwrap(), 1.0);
            }
        }
    }
}

#[test]
fn settled_weights_give_uniform_expectation() {
    for r in [0.5, 0.8] {
        let mut w = vec![1.0; 40];
        for t in 2..200 {
            w = reweight(&w, 0, t, r, false);
        }
        assert!(w.iter().all(|&x| x == r));
        let sw = SampleWeights::new(w.clone()).unwrap();
        let draws = 10_000u64;
        let total: usize = (0..draws).map(|s| draw_subset(&sw, 1, s).len()).sum();
        let mean = total as f64 / draws as f64;
        let want = r * w.len() as f64;
        assert!((mean - want).abs() <= 0.02 * want, "r {r}: {mean} vs {want}");
    }
}

#[test]
fn random_utility_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let s = Sentence::from_words("s", &["x"]);
    let n = 100_000;
    let mut v: Vec<f64> = (0..n).map(|_| random_utility(&mut rng, &s)).collect();
    assert!(v.iter().all(|&x| (0.0..1.0).contains(&x)));
    v.sort_by(f64::total_cmp);
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let lo = x - i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64 - x;
            lo.max(hi)
        })
        .fold(0.0, f64::max);
    // 5% critical value of the one-sample KS statistic
    assert!(d < 1.358 / (n as f64).sqrt(), "KS statistic {d}");

    let mut a = ChaCha8Rng::seed_from_u64(1);
    let mut b = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        assert_eq!(random_utility(&mut a, &s), random_utility(&mut b, &s));
    }
}
