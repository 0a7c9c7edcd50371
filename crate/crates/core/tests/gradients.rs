//! Analytic gradients of loss-after-encoder against central differences.

use pcr_core::encoder::{EncoderConfig, EncoderParams, Gradients, Slot};
use pcr_core::objective::{quadruplet_kink_distance, quadruplet_loss, quadruplet_loss_and_grad, LossConfig};

const TEXTS: [&str; 4] = [
    "graph parsing with neural models [TS] dependency parsing",
    "neural dependency parsing of graphs",
    "transition based parsing",
    "machine translation of speech",
];

fn loss_of(p: &EncoderParams, cfg: &LossConfig) -> f64 {
    let e: Vec<_> = TEXTS.iter().map(|t| p.encode(t).unwrap()).collect();
    quadruplet_loss(e[0].as_slice(), e[1].as_slice(), e[2].as_slice(), e[3].as_slice(), cfg).unwrap()
}

fn analytic(p: &EncoderParams, cfg: &LossConfig) -> (Gradients, f64) {
    let acts: Vec<_> = TEXTS.iter().map(|t| p.forward(t).unwrap()).collect();
    let o: Vec<&[f64]> = acts.iter().map(|a| a.output.as_slice()).collect();
    let kink = quadruplet_kink_distance(o[0], o[1], o[2], o[3], cfg);
    let (_, g) = quadruplet_loss_and_grad(o[0], o[1], o[2], o[3], cfg).unwrap();
    let mut grads = Gradients::zeros_like(p);
    for (a, ga) in acts.iter().zip([&g.query, &g.pos1, &g.pos2, &g.neg]) {
        p.backward(a, ga, &mut grads);
    }
    (grads, kink)
}

#[test]
fn encoder_gradients_match_central_differences() {
    let mut checked = 0;
    for seed in 0..20u64 {
        let mut p = EncoderParams::init(EncoderConfig {
            hash_buckets: 64,
            embed_dim: 6,
            hidden_dim: 5,
            out_dim: 4,
            seed,
        })
        .unwrap();
        p.frozen.embeddings = false;
        // large margin keeps every hinge active and away from its kink
        let cfg = LossConfig::with_margin(0.3);
        let (grads, kink) = analytic(&p, &cfg);
        if kink < 1e-2 {
            continue;
        }
        checked += 1;
        let touched: Vec<usize> = TEXTS.iter().flat_map(|t| p.buckets(t)).collect();
        for slot in pcr_core::encoder::Slot::ALL {
            let t = p.tensor(slot).clone();
            let entries: Vec<usize> = match slot {
                Slot::Embeddings => touched.iter().flat_map(|&b| (0..t.cols).map(move |k| b * t.cols + k)).collect(),
                _ => (0..t.data.len()).collect(),
            };
            for i in entries {
                let orig = t.data[i];
                let h = 1e-3f32;
                p.tensor_mut(slot).data[i] = orig + h;
                let up_delta = f64::from(p.tensor(slot).data[i]) - f64::from(orig);
                let up = loss_of(&p, &cfg);
                p.tensor_mut(slot).data[i] = orig - h;
                let dn_delta = f64::from(orig) - f64::from(p.tensor(slot).data[i]);
                let dn = loss_of(&p, &cfg);
                p.tensor_mut(slot).data[i] = orig;
                let fd = (up - dn) / (up_delta + dn_delta);
                let an = grads.value(slot, t.cols, i);
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
                assert!(err < 1e-3, "seed {seed} {} entry {i}: fd {fd} analytic {an}", slot.name());
            }
        }
    }
    assert!(checked >= 5, "only {checked} instances clear of kinks");
}

mod objective {
    use pcr_core::objective::{
        quadruplet_grad, quadruplet_kink_distance, quadruplet_loss, triplet_loss, LossConfig,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    fn random_point(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Four random embeddings whose hinge arguments sit at least 1e-3
    /// from zero and whose pairwise distances are not tiny.
    fn instance(rng: &mut ChaCha8Rng, d: usize, cfg: &LossConfig) -> [Vec<f64>; 4] {
        loop {
            let pts = [0, 1, 2, 3].map(|_| random_point(rng, d));
            let far = (0..4).all(|i| (i + 1..4).all(|j| dist(&pts[i], &pts[j]) > 1e-2));
            if far && quadruplet_kink_distance(&pts[0], &pts[1], &pts[2], &pts[3], cfg) >= 1e-3 {
                return pts;
            }
        }
    }

    #[test]
    fn matches_central_differences() {
        let cfg = LossConfig::default();
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in [2, 8, 64] {
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let mut pts = instance(&mut rng, d, &cfg);
                let g = quadruplet_grad(&pts[0], &pts[1], &pts[2], &pts[3], &cfg).unwrap();
                let analytic = [g.query, g.pos1, g.pos2, g.neg];
                for which in 0..4 {
                    for k in 0..d {
                        let orig = pts[which][k];
                        pts[which][k] = orig + h;
                        let up = quadruplet_loss(&pts[0], &pts[1], &pts[2], &pts[3], &cfg).unwrap();
                        pts[which][k] = orig - h;
                        let dn = quadruplet_loss(&pts[0], &pts[1], &pts[2], &pts[3], &cfg).unwrap();
                        pts[which][k] = orig;
                        let fd = (up - dn) / (2.0 * h);
                        let an = analytic[which][k];
                        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                        worst = worst.max(rel);
                    }
                }
            }
            assert!(worst <= 1e-4, "d={d}: max relative error {worst}");
        }
    }

    #[test]
    fn translation_invariance() {
        let cfg = LossConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in [2, 8, 64] {
            for _ in 0..100 {
                let pts = [0, 1, 2, 3].map(|_| random_point(&mut rng, d));
                let shift = random_point(&mut rng, d);
                let moved = pts.clone().map(|p| p.iter().zip(&shift).map(|(a, b)| a + b).collect::<Vec<_>>());
                let lq = quadruplet_loss(&pts[0], &pts[1], &pts[2], &pts[3], &cfg).unwrap();
                let lq2 = quadruplet_loss(&moved[0], &moved[1], &moved[2], &moved[3], &cfg).unwrap();
                assert!((lq - lq2).abs() <= 1e-9);
                let lt = triplet_loss(&pts[0], &pts[1], &pts[3], &cfg).unwrap();
                let lt2 = triplet_loss(&moved[0], &moved[1], &moved[3], &cfg).unwrap();
                assert!((lt - lt2).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn positive_swap_is_exact() {
        let cfg = LossConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let d = rng.random_range(1..32);
            let pts = [0, 1, 2, 3].map(|_| random_point(&mut rng, d));
            let a = quadruplet_loss(&pts[0], &pts[1], &pts[2], &pts[3], &cfg).unwrap();
            let b = quadruplet_loss(&pts[0], &pts[2], &pts[1], &pts[3], &cfg).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bounded_by_pairwise_distances() {
        let cfg = LossConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let pts = [0, 1, 2, 3].map(|_| random_point(&mut rng, 8));
            let max_d = (0..4)
                .flat_map(|i| (0..4).map(move |j| (i, j)))
                .map(|(i, j)| dist(&pts[i], &pts[j]))
                .fold(0.0, f64::max);
            let l = quadruplet_loss(&pts[0], &pts[1], &pts[2], &pts[3], &cfg).unwrap();
            assert!(l >= 0.0 && l <= 4.0 * (max_d + cfg.margin));
        }
    }
}
