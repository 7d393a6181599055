use spatiotag_core::active::Decoder;
use spatiotag_core::corpus::{evaluate, Corpus};
use spatiotag_core::features::{FeatureConfig, Profile, TemplateKind};
use spatiotag_core::fhmm::write_model;
use spatiotag_core::perceptron::TrainerConfig;
use spatiotag_core::synthetic::cooccurrence_corpus;
use spatiotag_harness::config::RunConfig;
use spatiotag_harness::pipeline::{gold_ne_tags, train_ensemble, without_ne_templates, Decoding, FhmmG, TrainSettings};
use spatiotag_harness::tagger::{settings, Tagger};

fn excluded() -> Vec<String> {
    vec!["G".into(), "T".into()]
}

fn est_settings(k: usize, sample_rate: f64) -> TrainSettings {
    TrainSettings {
        features: FeatureConfig::for_profile(Profile::Est),
        trainer: TrainerConfig::default(),
        k,
        sample_rate,
        seed: 3,
    }
}

const VITERBI: Decoding = Decoding {
    decoder: Decoder::Viterbi,
    nbest: 3,
};

#[test]
fn stage2_sees_ne_features_exactly_where_stage1_found_entities() {
    let train = cooccurrence_corpus(60, 1);
    let test = cooccurrence_corpus(20, 2);
    let (g, stats) = FhmmG::train(&train, &est_settings(2, 0.8), &excluded(), VITERBI).unwrap();
    assert_eq!(stats.iter().filter(|(s, _)| s == "stage1").count(), 2);
    assert!(g.stage1.labels().get("G").is_none());
    assert!(g
        .stage1
        .feature_config()
        .templates()
        .iter()
        .all(|t| !matches!(t, TemplateKind::WindowNeTag(_))));

    let stage1 = VITERBI.decode(&g.stage1, &test.sentences);
    let annotated = g.annotate(&test.sentences, VITERBI);
    let config = g.stage2.feature_config();
    let mut fired = 0;
    for ((s, pred), orig) in annotated.iter().zip(&stage1).zip(&test.sentences) {
        for (t, &p) in s.tokens.iter().zip(pred) {
            let want = (p != g.stage1.labels().outside()).then(|| g.stage1.labels().name(p));
            assert_eq!(t.ne_tag.as_deref(), want);
        }
        assert!(orig.tokens.iter().all(|t| t.ne_tag.is_none()));
        for i in 0..s.len() {
            let mut got = Vec::new();
            config.visit(s, i, |tid, value| {
                if let TemplateKind::WindowNeTag(o) = config.templates()[tid] {
                    got.push((o, value.to_owned()));
                }
            });
            let mut want = Vec::new();
            for o in -2i8..=2 {
                let j = i as i64 + o as i64;
                if let Some(tag) = (j >= 0)
                    .then(|| s.tokens.get(j as usize))
                    .flatten()
                    .and_then(|t| t.ne_tag.clone())
                {
                    want.push((o, tag));
                }
            }
            fired += want.len();
            assert_eq!(got, want, "sentence {} position {i}", s.id);
        }
    }
    assert!(fired > 0);
}

fn f1(train: &Corpus, test: &Corpus, features: FeatureConfig) -> f64 {
    let s = TrainSettings {
        features,
        ..est_settings(1, 1.0)
    };
    let (e, _) = train_ensemble(train, &s).unwrap();
    evaluate(test, &VITERBI.decode(&e, &test.sentences)).unwrap().micro.f1
}

#[test]
fn perfect_stage1_does_not_hurt_stage2() {
    let full = FeatureConfig::for_profile(Profile::Est);
    let plain = without_ne_templates(&full).unwrap();
    let mut gains = Vec::new();
    for seed in 0..10u64 {
        let train = cooccurrence_corpus(80, 100 + seed);
        let test = cooccurrence_corpus(80, 200 + seed);
        let base = f1(&train, &test, plain.clone());
        let with_oracle = f1(
            &gold_ne_tags(&train, &excluded()).unwrap(),
            &gold_ne_tags(&test, &excluded()).unwrap(),
            full.clone(),
        );
        gains.push(with_oracle - base);
        assert!(with_oracle >= base, "seed {seed}: {with_oracle} < {base}");
    }
    println!("F1 gain from oracle entity tags per seed: {gains:?}");
}

#[test]
fn disabled_pipeline_is_single_stage() {
    let train = cooccurrence_corpus(40, 9);
    let mut config = RunConfig::from_toml("[features]\nprofile = \"est\"\n[ensemble]\nk = 2\n").unwrap();
    assert!(!config.pipeline.enabled);
    let (tagger, _) = Tagger::train(&train, &config).unwrap();
    let (direct, _) = train_ensemble(&train, &settings(&config).unwrap()).unwrap();
    let Tagger::Single(e) = &tagger else {
        panic!("expected a single-stage model")
    };
    assert_eq!(e, &direct);
    for (a, b) in e.members().iter().zip(direct.members()) {
        assert_eq!(write_model(a), write_model(b));
    }

    config.pipeline.enabled = true;
    let (piped, _) = Tagger::train(&train, &config).unwrap();
    assert!(matches!(piped, Tagger::Pipeline(_)));
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m/pipe.ens");
    piped.save(&path).unwrap();
    let (Tagger::Pipeline(a), Tagger::Pipeline(b)) = (Tagger::load(&path).unwrap(), piped) else {
        unreachable!()
    };
    assert_eq!(a.excluded, b.excluded);
    for (x, y) in [(&a.stage1, &b.stage1), (&a.stage2, &b.stage2)] {
        let text =
            |e: &spatiotag_core::ensemble::EnsembleModel| e.members().iter().map(write_model).collect::<Vec<_>>();
        assert_eq!(text(x), text(y));
    }
    let sentences = cooccurrence_corpus(10, 10).sentences;
    assert_eq!(a.tag(&sentences, VITERBI), b.tag(&sentences, VITERBI));
}
