use efllm::autodiff::Tensor;
use efllm::config::RunConfig;
use efllm::diagnostics::{anova, classify, cosine, similarity};
use efllm::forecast::{format_value, render_answer, BinningScheme};
use efllm::ini::Ini;
use efllm::pipeline::{build_vocab, parse_spans};
use efllm::text::EmbeddingTable;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn groups() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 2..8), 2..6)
}

proptest! {
    #[test]
    fn anova_decomposes_and_bounds_p(g in groups()) {
        let r = anova(&g).unwrap();
        prop_assert!((r.sst - r.ssb - r.ssw).abs() <= 1e-9 * r.sst.max(1.0));
        prop_assert!((0.0..=1.0).contains(&r.p));
        prop_assert!(r.f >= 0.0);
        prop_assert_eq!(r.n, g.iter().map(Vec::len).sum::<usize>());
    }

    #[test]
    fn anova_ignores_affine_maps(g in groups(), shift in -1e3f64..1e3, scale in 0.01f64..100.0) {
        let r = anova(&g).unwrap();
        let moved: Vec<Vec<f64>> = g.iter().map(|v| v.iter().map(|x| x * scale + shift).collect()).collect();
        let m = anova(&moved).unwrap();
        prop_assert!((r.f - m.f).abs() <= 1e-6 * r.f.max(1.0), "{} vs {}", r.f, m.f);
        prop_assert!((r.p - m.p).abs() <= 1e-6);
    }

    #[test]
    fn cosine_is_symmetric_and_bounded(a in prop::collection::vec(-5.0f64..5.0, 6), b in prop::collection::vec(-5.0f64..5.0, 6)) {
        if let Some(s) = cosine(&a, &b) {
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert_eq!(Some(s), cosine(&b, &a));
        }
        if a.iter().any(|&x| x != 0.0) {
            prop_assert_eq!(cosine(&a, &a), Some(1.0));
        }
    }

    #[test]
    fn classify_is_monotone_in_threshold(s in -1.0f64..1.0, t1 in -1.0f64..1.0, t2 in -1.0f64..1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(!classify(s, lo) || classify(s, hi));
    }

    #[test]
    fn binning_decodes_within_half_width(e_r in 1.0f64..5000.0, n in 1usize..200, u in 0.0f64..=1.0) {
        let b = BinningScheme::new(e_r, n).unwrap();
        let p = u * e_r;
        let c = b.bin_power(p).unwrap();
        prop_assert!(c <= n);
        prop_assert_eq!(c == 0, p == 0.0);
        if c > 0 {
            let mid = b.decode_class(c).unwrap();
            prop_assert!((mid - p).abs() <= b.half_width() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn binning_is_monotone(e_r in 1.0f64..5000.0, n in 1usize..200, u in 0.0f64..=1.0, v in 0.0f64..=1.0) {
        let b = BinningScheme::new(e_r, n).unwrap();
        let (lo, hi) = if u <= v { (u, v) } else { (v, u) };
        prop_assert!(b.bin_power(lo * e_r).unwrap() <= b.bin_power(hi * e_r).unwrap());
    }

    #[test]
    fn rendered_answers_parse_back(class in 0usize..1000, value in -1e5f64..1e5, unit in "[A-Za-z]{1,3}") {
        let text = render_answer(class, value, &unit);
        let (c, v) = parse_spans(&text);
        prop_assert_eq!(c, Some(class));
        prop_assert_eq!(v.map(format_value), Some(format_value(value)));
    }

    #[test]
    fn ini_roundtrips(entries in prop::collection::btree_map(
        ("[a-z]{1,6}", "[a-z_]{1,8}"),
        "[A-Za-z0-9.,/ _-]{0,12}",
        0..20,
    )) {
        let mut ini = Ini::new();
        for ((s, k), v) in &entries {
            ini.set(s, k, v.trim());
        }
        prop_assert_eq!(Ini::parse(&ini.render()).unwrap(), ini);
    }

    #[test]
    fn run_config_roundtrips(
        seed in any::<u64>(),
        days in 2usize..400,
        lr in 1e-5f32..1e-1,
        rank in 1usize..16,
        weights in prop::collection::vec(0.0f64..=1.0, 1..5),
    ) {
        let mut c = RunConfig::default();
        c.seed = seed;
        c.data.days = days;
        c.train.lr = lr;
        c.continual.rank = rank;
        c.sweep.weights = weights;
        let back = RunConfig::from_ini(&Ini::parse(&c.to_ini().render()).unwrap()).unwrap();
        prop_assert_eq!(back.to_ini(), c.to_ini());
    }
}

#[test]
fn similarity_is_symmetric_with_unit_self_score() {
    let vocab = build_vocab(&[], 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let table = EmbeddingTable::new(Tensor::randn(&[vocab.len(), 16], 1.0, &mut rng)).unwrap();
    let texts = [
        "interval: 12 ; value: 95.40 kW",
        "interval: 13 ; value: 101.00 kW",
        "capacity utilization is 50.00%",
        "cloudy turning to heavy rain",
    ];
    for a in texts {
        let s = similarity(a, a, &table, &vocab, 0.9).unwrap();
        assert!((s.score - 1.0).abs() < 1e-12, "{a}: {}", s.score);
        assert!(!s.is_hallucination);
        for b in texts {
            let ab = similarity(a, b, &table, &vocab, 0.9).unwrap().score;
            let ba = similarity(b, a, &table, &vocab, 0.9).unwrap().score;
            assert!((ab - ba).abs() < 1e-12);
            assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
