use malclust::features::count_ngrams;
use malclust::synth::{generate_corpus, make_pair, parse_generator_spec, reference_generators, total_variation, FamilyGenerator, GENERATOR_SPEC_FILE};
use malclust::MalwareType;

/// Empirical distribution over the generator's own gram alphabet.
fn empirical(g: &FamilyGenerator, bytes: &[u8]) -> Vec<(u16, f64)> {
    let counts = count_ngrams(bytes, 2).unwrap();
    let on_alphabet: Vec<(u16, u64)> = g.gram_weights.iter().map(|&(gram, _)| (gram, counts.get(gram as u32))).collect();
    let total: u64 = on_alphabet.iter().map(|&(_, c)| c).sum();
    on_alphabet.into_iter().map(|(gram, c)| (gram, c as f64 / total as f64)).collect()
}

#[test]
fn long_samples_match_their_gram_weights() {
    for g in reference_generators(6, 3).unwrap() {
        let mean_tv: f64 = (0..10)
            .map(|i| total_variation(&empirical(&g, &g.sample_with_len(i, 100_000)), &g.gram_weights))
            .sum::<f64>()
            / 10.0;
        assert!(mean_tv <= 0.02, "{}: mean tv {mean_tv}", g.name);
    }
}

#[test]
fn concentrated_weights_dominate_the_counts() {
    let g = FamilyGenerator {
        name: "Hot".into(),
        malware_type: MalwareType::Adware,
        gram_weights: vec![(0x0001, 0.5), (0x0100, 0.5)],
        sample_len_range: (100_000, 100_000),
        seed: 1,
    };
    let counts = count_ngrams(&g.sample(0), 2).unwrap();
    assert!(counts.top_k(1) == vec![0x0001] || counts.top_k(1) == vec![0x0100]);
    assert!(counts.top_k(2).contains(&0x0001));
}

#[test]
fn corpus_is_reproducible_and_recorded() {
    let (a, b) = make_pair(0.5, 12).unwrap();
    let gens: Vec<FamilyGenerator> = [a, b].into_iter().map(|g| g.with_len_range(100, 400)).collect();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m1 = generate_corpus(&gens, 100, d1.path(), &["seed: 12".into()]).unwrap();
    let m2 = generate_corpus(&gens, 100, d2.path(), &["seed: 12".into()]).unwrap();
    assert_eq!(m1.len(), 200);
    assert_eq!(m1.families().len(), 2);
    for (x, y) in m1.entries().iter().zip(m2.entries()) {
        assert_eq!(x.relative, y.relative);
        assert_eq!(std::fs::read(&x.path).unwrap(), std::fs::read(&y.path).unwrap());
    }
    let spec = std::fs::read_to_string(d1.path().join(GENERATOR_SPEC_FILE)).unwrap();
    let (parsed, per_family) = parse_generator_spec(&spec).unwrap();
    assert_eq!(per_family, 100);
    assert_eq!(parsed, gens);
}

#[test]
fn pair_overlap_controls_total_variation() {
    for (overlap, tv) in [(0.0, 1.0), (0.5, 0.5), (1.0, 0.0), (0.25, 0.75)] {
        let (a, b) = make_pair(overlap, 3).unwrap();
        assert!((total_variation(&a.gram_weights, &b.gram_weights) - tv).abs() < 1e-12);
    }
    assert_eq!(make_pair(1.5, 0).unwrap_err().kind(), "InvalidOverlap");
}
