use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mmtopic::corpus::{Corpus, SyntheticSpec};
use mmtopic::descriptors::{top_images, top_keywords};
use mmtopic::harness::report::aggregate;
use mmtopic::harness::{CellStatus, RunManifest};
use mmtopic::metrics::{iec, ieps, irbo, npmi_from_counts, rbo, topic_diversity};
use mmtopic::models::{batch_loss, DocNoise, Objective, TopicParams};
use mmtopic::overlap::overlap_from_keywords;
use mmtopic::{generate_synthetic, DenseMatrix, ModelConfig, ModelKind, Vocabulary};

fn small_corpus(seed: u64) -> Corpus {
    generate_synthetic(&SyntheticSpec {
        num_topics_true: 3,
        vocab_size: 24,
        docs: 12,
        doc_length: 12.0,
        embed_dim_text: 5,
        embed_dim_image: 4,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap()
    .corpus
}

fn setup(kind: ModelKind, k: usize, seed: u64, lambda: f64) -> (Corpus, TopicParams, Objective, Vec<DocNoise>) {
    let corpus = small_corpus(seed);
    let mut cfg = ModelConfig::new(kind, k);
    cfg.lambda = lambda;
    cfg.hidden_width = 8;
    cfg.dropout_rate = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let params = TopicParams::init(
        kind,
        k,
        corpus.vocabulary().len(),
        corpus.text_dim(),
        corpus.image_dim(),
        8,
        0.0,
        &mut rng,
    );
    let noise = (0..corpus.len())
        .map(|_| DocNoise::sample(kind, k, &mut rng))
        .collect();
    (corpus, params, Objective::from_config(&cfg).unwrap(), noise)
}

fn words(prefix: &str, ids: &[usize]) -> Vec<String> {
    ids.iter().map(|i| format!("{prefix}{i}")).collect()
}

fn kind_strategy() -> impl Strategy<Value = ModelKind> {
    prop::sample::select(ModelKind::ALL.to_vec())
}

fn image_sets() -> impl Strategy<Value = Vec<Vec<Vec<f64>>>> {
    let vector = prop::collection::vec(-1.0f64..1.0, 4)
        .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3);
    (2usize..5, 2usize..5).prop_flat_map(move |(topics, per)| {
        prop::collection::vec(prop::collection::vec(vector.clone(), per), topics)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn loss_terms_are_finite_and_in_range(
        kind in kind_strategy(),
        seed in 0u64..1000,
        k in 2usize..6,
        lambda in 0.0f64..300.0,
    ) {
        let (corpus, params, obj, noise) = setup(kind, k, seed, lambda);
        let batch: Vec<_> = corpus.documents().iter().collect();
        let loss = batch_loss(&params, &obj, &batch, &noise).unwrap();
        let t = loss.terms;
        let n = batch.len() as f64;
        for v in [t.total, t.recon_nll, t.kl, t.kl_image, t.image, t.contrastive] {
            prop_assert!(v.is_finite());
        }
        prop_assert!(t.recon_nll >= 0.0);
        prop_assert!(t.kl >= -1e-12 * n && t.kl_image >= -1e-12 * n);
        prop_assert!(t.image >= 0.0 && t.image <= 2.0 * obj.lambda * n + 1e-9);
        let share: f64 = loss.per_document.iter().sum();
        prop_assert!((share - t.total).abs() <= 1e-9 * t.total.abs().max(1.0));
    }

    #[test]
    fn contrastive_loss_is_batch_order_equivariant(
        seed in 0u64..1000,
        perm in Just((0..12).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let (corpus, params, obj, noise) = setup(ModelKind::MultimodalContrast, 4, seed, 0.0);
        let docs = corpus.documents();
        let batch: Vec<_> = docs.iter().collect();
        let base = batch_loss(&params, &obj, &batch, &noise).unwrap();
        let pbatch: Vec<_> = perm.iter().map(|&i| &docs[i]).collect();
        let pnoise: Vec<_> = perm.iter().map(|&i| noise[i].clone()).collect();
        let permuted = batch_loss(&params, &obj, &pbatch, &pnoise).unwrap();
        prop_assert!((permuted.terms.total - base.terms.total).abs() <= 1e-10);
        for (pos, &i) in perm.iter().enumerate() {
            prop_assert!((permuted.per_document[pos] - base.per_document[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn top_keywords_ignore_positive_row_scaling(
        row in prop::collection::vec(-3.0f64..3.0, 12),
        scale in 1e-3f64..1e3,
        n in 1usize..12,
    ) {
        let vocab = Vocabulary::from_terms(words("t", &(0..12).collect::<Vec<_>>())).unwrap();
        let scaled: Vec<f64> = row.iter().map(|x| x * scale).collect();
        let a = DenseMatrix::from_rows(&[row]).unwrap();
        let b = DenseMatrix::from_rows(&[scaled]).unwrap();
        prop_assert_eq!(
            top_keywords(&a, &vocab, 0, n).unwrap(),
            top_keywords(&b, &vocab, 0, n).unwrap()
        );
    }

    #[test]
    fn top_images_read_only_their_column(
        theta in prop::collection::vec(0.0f64..1.0, 12 * 3),
        other in prop::collection::vec(0.0f64..1.0, 12 * 3),
        topic in 0usize..3,
        n in 1usize..12,
    ) {
        let corpus = small_corpus(7);
        let a = DenseMatrix::from_vec(12, 3, theta.clone()).unwrap();
        let mut mixed = other;
        for d in 0..12 {
            mixed[d * 3 + topic] = theta[d * 3 + topic];
        }
        let b = DenseMatrix::from_vec(12, 3, mixed).unwrap();
        let ids = |m: &DenseMatrix| {
            top_images(m, &corpus, topic, n).unwrap().into_iter().map(|d| d.doc_id).collect::<Vec<_>>()
        };
        prop_assert_eq!(ids(&a), ids(&b));
    }

    #[test]
    fn image_metrics_ignore_embedding_scale(
        sets in image_sets(),
        scales in prop::collection::vec(1e-3f64..1e3, 32),
    ) {
        let mut i = 0;
        let scaled: Vec<Vec<Vec<f64>>> = sets
            .iter()
            .map(|s| {
                s.iter()
                    .map(|v| {
                        i += 1;
                        v.iter().map(|x| x * scales[i % scales.len()]).collect()
                    })
                    .collect()
            })
            .collect();
        prop_assert!((iec(&sets).unwrap() - iec(&scaled).unwrap()).abs() <= 1e-12);
        prop_assert!((ieps(&sets).unwrap() - ieps(&scaled).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn image_metrics_are_bounded_and_ieps_is_topic_symmetric(sets in image_sets()) {
        let (c, s) = (iec(&sets).unwrap(), ieps(&sets).unwrap());
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
        let mut reversed = sets.clone();
        reversed.reverse();
        prop_assert!((ieps(&reversed).unwrap() - s).abs() <= 1e-12);

        let positive: Vec<Vec<Vec<f64>>> = sets
            .iter()
            .map(|t| t.iter().map(|v| v.iter().map(|x| x.abs() + 1e-3).collect()).collect())
            .collect();
        let (c, s) = (iec(&positive).unwrap(), ieps(&positive).unwrap());
        prop_assert!((0.0..=1.0 + 1e-12).contains(&c));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
    }

    #[test]
    fn rbo_is_symmetric_and_irbo_is_zero_only_for_identical_lists(
        a in Just((0..20).collect::<Vec<usize>>()).prop_shuffle(),
        b in Just((0..20).collect::<Vec<usize>>()).prop_shuffle(),
        len in 1usize..10,
        p in 0.05f64..0.95,
    ) {
        let (a, b) = (words("w", &a[..len]), words("w", &b[..len]));
        prop_assert!((rbo(&a, &b, p).unwrap() - rbo(&b, &a, p).unwrap()).abs() <= 1e-15);
        prop_assert!(irbo(&[a.clone(), a.clone(), a.clone()], p).unwrap().abs() <= 1e-12);
        let score = irbo(&[a.clone(), b.clone()], p).unwrap();
        if a == b {
            prop_assert!(score.abs() <= 1e-12);
        } else {
            prop_assert!(score > 1e-12);
        }
    }

    #[test]
    fn topic_diversity_ignores_order(
        topics in prop::collection::vec(
            Just((0..15).collect::<Vec<usize>>()).prop_shuffle().prop_map(|v| words("w", &v[..5])),
            1..6,
        ),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shuffled = topics.clone();
        shuffled.shuffle(&mut rng);
        for t in &mut shuffled {
            t.shuffle(&mut rng);
        }
        prop_assert_eq!(topic_diversity(&topics, 5).unwrap(), topic_diversity(&shuffled, 5).unwrap());
    }

    #[test]
    fn npmi_pair_values_stay_in_range(
        windows in 1u64..500,
        fi in 0.0f64..=1.0,
        fj in 0.0f64..=1.0,
        fij in 0.0f64..=1.0,
    ) {
        // both words occur somewhere; absent words never reach the pair score
        let c_i = ((fi * windows as f64) as u64).max(1);
        let c_j = ((fj * windows as f64) as u64).max(1);
        let c_ij = (fij * c_i.min(c_j) as f64) as u64;
        let v = npmi_from_counts(c_i, c_j, c_ij, windows);
        prop_assert!(v.is_finite());
        prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&v));
    }

    #[test]
    fn overlap_is_symmetric_and_beats_the_diagonal(
        a in prop::collection::vec(
            Just((0..12).collect::<Vec<usize>>()).prop_shuffle().prop_map(|v| words("w", &v[..6])),
            4,
        ),
        b in prop::collection::vec(
            Just((0..12).collect::<Vec<usize>>()).prop_shuffle().prop_map(|v| words("w", &v[..6])),
            4,
        ),
    ) {
        let ab = overlap_from_keywords("a", &a, "b", &b, 0.9).unwrap();
        let ba = overlap_from_keywords("b", &b, "a", &a, 0.9).unwrap();
        prop_assert!((ab.mean - ba.mean).abs() <= 1e-12);
        let diagonal = (0..4).map(|i| ab.similarity[i][i]).sum::<f64>() / 4.0;
        prop_assert!(ab.mean >= diagonal - 1e-12);
    }
}

fn manifest(k: usize, seed: u64, recon: f64) -> RunManifest {
    let mut m: RunManifest = serde_json::from_value(serde_json::json!({
        "cell_id": format!("d/zeroshot/k{k}/seed{seed}"),
        "dataset": "d",
        "kind": "zeroshot",
        "num_topics": k,
        "seed": seed,
        "lambda": null,
        "config": ModelConfig::new(ModelKind::ZeroShot, k),
        "corpus_fingerprint": "",
        "timings": {"train_secs": 0.0, "eval_secs": 0.0},
        "artifacts": {"checkpoint": "", "descriptors": "", "metrics": ""},
        "status": {"state": "completed"},
        "metrics": null,
        "image_recon_loss": null,
        "final_loss": null,
    }))
    .unwrap();
    m.image_recon_loss = Some(recon);
    m
}

#[test]
fn aggregation_averages_seeds_within_k_before_averaging_over_k() {
    // K=25 has three seeds, K=50 one; a flat mean would weight K=25 three times.
    let cells = vec![
        manifest(25, 0, 0.0),
        manifest(25, 1, 0.0),
        manifest(25, 2, 0.3),
        manifest(50, 0, 1.0),
    ];
    let rows = aggregate(&cells);
    assert_eq!(rows.len(), 1);
    assert!((rows[0].image_recon.unwrap() - (0.1 + 1.0) / 2.0).abs() < 1e-15);
    assert_eq!(rows[0].topic_counts, [25, 50]);

    let mut failed = cells.clone();
    failed[3].status = CellStatus::Failed { error: "boom".into() };
    let rows = aggregate(&failed);
    assert!((rows[0].image_recon.unwrap() - 0.1).abs() < 1e-15);
    assert_eq!((rows[0].completed, rows[0].failed), (3, 1));

    let by_id: BTreeMap<_, _> = cells.iter().map(|m| (m.cell_id.clone(), m.content_hash().unwrap())).collect();
    let reparsed: Vec<RunManifest> =
        serde_json::from_str(&serde_json::to_string(&cells).unwrap()).unwrap();
    for m in &reparsed {
        assert_eq!(by_id[&m.cell_id], m.content_hash().unwrap());
    }
}
