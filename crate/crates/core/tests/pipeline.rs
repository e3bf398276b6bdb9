use std::collections::BTreeMap;

use lomatch::bayes::NaiveBayesClassifier;
use lomatch::eval::{confusion_matrix_binary, kfold_cv, prf_metrics};
use lomatch::features::{
    extract_batch, read_feature_matrix, write_feature_matrix, FeatureOptions, FeatureRow,
};
use lomatch::lom::{apply_gold, generate_candidate_pairs, MatchLabel, Ontology, PairStrategy};
use lomatch::matcher::{match_pipeline, MatchConfig, OmmClassifier};
use lomatch::recommender::{item_features_from_records, recommend_hybrid, HybridConfig};
use lomatch::synth::{pair_corpus, ratings_corpus, record_corpus, PairCorpusSpec};

fn record_rows(n: usize, seed: u64) -> Vec<FeatureRow> {
    let (s, t, gold) = record_corpus(n, seed).unwrap();
    let src = Ontology::from_records("alpha", s, BTreeMap::new()).unwrap();
    let tgt = Ontology::from_records("beta", t, BTreeMap::new()).unwrap();
    let mut pairs = generate_candidate_pairs(&src, &tgt, PairStrategy::FullCross).unwrap();
    apply_gold(&mut pairs, &gold, true);
    extract_batch(&pairs, &src, &tgt, FeatureOptions::default()).unwrap()
}

#[test]
fn records_to_decisions() {
    let rows = record_rows(25, 4);
    assert_eq!(rows.len(), 625);

    let mut buf = Vec::new();
    write_feature_matrix(&rows, &mut buf).unwrap();
    assert_eq!(read_feature_matrix(&buf[..]).unwrap(), rows);

    // every fifth pair of each class is labeled
    let mut seen = BTreeMap::new();
    let (labeled, unlabeled): (Vec<FeatureRow>, Vec<FeatureRow>) =
        rows.into_iter().partition(|r| {
            let k = seen.entry(r.label()).or_insert(0usize);
            *k += 1;
            *k % 5 == 0
        });
    // the type indicator is constant within MATCH, so its floored std needs headroom
    let config = MatchConfig {
        std_floor: 0.2,
        ..MatchConfig::default()
    };
    let out = match_pipeline(&labeled, &unlabeled, &config).unwrap();
    let gold: Vec<MatchLabel> = unlabeled.iter().map(|r| r.label().unwrap()).collect();
    let pred: Vec<MatchLabel> = out.decisions.iter().map(|d| d.match_label).collect();
    let report = prf_metrics(&confusion_matrix_binary(&gold, &pred).unwrap());
    assert!(report.positive.f_score >= 0.85, "{:?}", report.positive);

    let tight = match_pipeline(&labeled, &unlabeled, &MatchConfig::default()).unwrap();
    assert_eq!(tight.decisions.len(), unlabeled.len());
}

#[test]
fn cross_validated_classifiers() {
    let corpus = pair_corpus(&PairCorpusSpec::default(), 11).unwrap();
    let rows = corpus.all();
    let omm = kfold_cv(&rows, 10, 3, &OmmClassifier(MatchConfig::default())).unwrap();
    let nb = kfold_cv(&rows, 10, 3, &NaiveBayesClassifier::default()).unwrap();
    assert!(omm.positive.f_score >= 0.95);
    assert!(nb.positive.f_score >= 0.95);
    assert_eq!(omm.confusion.total(), 200);
    assert_eq!(
        omm,
        kfold_cv(&rows, 10, 3, &OmmClassifier(MatchConfig::default())).unwrap()
    );
}

#[test]
fn recommendations_follow_topic_preferences() {
    let (items, _, _) = record_corpus(12, 2).unwrap();
    let anchors = items[..3].to_vec();
    let features = item_features_from_records(
        &items,
        &anchors,
        &BTreeMap::new(),
        FeatureOptions::default(),
    )
    .unwrap();
    assert!(features.values().all(|v| v.len() == 12));

    let ratings = ratings_corpus(40, 12, 0.7, 9).unwrap();
    let cfg = HybridConfig {
        top_k: 3,
        alpha: 1.0,
        ..HybridConfig::default()
    };
    let (mut hits, mut total) = (0, 0);
    for u in ratings.users() {
        let recs = recommend_hybrid(&ratings, &features, u, &cfg, None).unwrap();
        let rated = ratings.ratings_of(u).unwrap();
        assert!(recs.iter().all(|r| !rated.contains_key(&r.item_id)));
        let group = u[1..].parse::<usize>().unwrap() % 2;
        if let Some(best) = recs.first() {
            let item: usize = best.item_id[1..].parse().unwrap();
            total += 1;
            hits += usize::from(item % 2 == group);
        }
    }
    assert!(hits * 10 >= total * 8, "{hits}/{total}");
}
