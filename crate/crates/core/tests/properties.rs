//! Randomized checks of the library's documented invariants. Each block
//! states the invariant it drives; case counts are trimmed on the tests
//! that touch the filesystem or run full generation.

use proptest::prelude::*;
use rand::seq::SliceRandom;

use synquery::corpus::{
    load_corpus, load_pairs, load_qrels, load_queries, save_corpus, save_pairs, save_qrels,
    save_queries, split_dev, tokenize, Document, Provenance, Qrels, Query, SyntheticPair,
};
use synquery::crop::{crop_span, CropConfig};
use synquery::encoder::io::{load_model, save_model};
use synquery::encoder::{cosine, dot, inbatch_loss, EncoderModel, EncoderParams, Similarity, Tower};
use synquery::eval::{aggregate, ndcg_at_k, recall_at_k, MethodScores};
use synquery::index::{read_run_file, write_run_file, DenseIndex, RunRanking};
use synquery::llm::{build_prompt, generate_corpus, GenerationConfig, PromptTemplate};
use synquery::pipeline::{analyze, STARTING_WORDS_TOP_N};
use synquery::rng::substream;

fn word() -> impl Strategy<Value = String> {
    "[a-z]{1,8}"
}

fn words(range: std::ops::Range<usize>) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(word(), range)
}

fn text(range: std::ops::Range<usize>) -> impl Strategy<Value = String> {
    words(range).prop_map(|w| w.join(" "))
}

fn finite_f64() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), -1e6..1e6f64]
}

fn crop_config() -> impl Strategy<Value = CropConfig> {
    (0.01..=1.0f64, 0.0..0.95f64, 1..4usize, any::<u64>()).prop_flat_map(
        |(ratio_min, deletion_prob, min_tokens, seed)| {
            (ratio_min..=1.0f64).prop_map(move |ratio_max| CropConfig {
                ratio_min,
                ratio_max,
                deletion_prob,
                min_tokens,
                seed,
            })
        },
    )
}

// --------------------------------------------------------------- corpus

proptest! {
    // tokenize output re-tokenizes to itself, and no token keeps whitespace.
    #[test]
    fn tokenize_is_idempotent(chars in prop::collection::vec(any::<char>(), 0..60)) {
        let raw: String = chars.into_iter().collect();
        let first = tokenize(&raw);
        for token in first.tokens() {
            prop_assert!(!token.is_empty());
            prop_assert!(!token.chars().any(char::is_whitespace), "token {token:?}");
        }
        let second = tokenize(&first.to_string());
        prop_assert_eq!(first, second);
    }

    // split_dev partitions its input: sizes add up, nothing is duplicated
    // or dropped.
    #[test]
    fn split_dev_partitions(
        items in prop::collection::vec(any::<u16>(), 0..50),
        dev_size in 0..60usize,
        seed in any::<u64>(),
    ) {
        let (rest, dev) = split_dev(items.clone(), dev_size, seed);
        prop_assert_eq!(dev.len(), dev_size.min(items.len()));
        prop_assert_eq!(rest.len() + dev.len(), items.len());
        let mut merged = [rest, dev].concat();
        merged.sort_unstable();
        let mut original = items;
        original.sort_unstable();
        prop_assert_eq!(merged, original);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // Saving a loaded corpus and reloading yields identical records; same
    // for queries, qrels, and pair files.
    #[test]
    fn corpus_files_round_trip(
        texts in prop::collection::vec(text(1..8), 1..12),
        titles in prop::collection::vec(prop_oneof![Just(String::new()), text(1..4)], 12),
        rels in prop::collection::vec((0..6usize, 0..6usize, 0..4u32), 0..20),
    ) {
        let dir = tempfile::tempdir().unwrap();

        let docs: Vec<Document> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document {
                id: format!("d{i}"),
                title: titles[i].clone(),
                text: t.clone(),
            })
            .collect();
        let path = dir.path().join("corpus.jsonl");
        save_corpus(&path, &docs).unwrap();
        let loaded = load_corpus(&path).unwrap();
        prop_assert_eq!(&loaded.documents, &docs);
        prop_assert!(loaded.skipped.is_empty());
        save_corpus(&path, &loaded.documents).unwrap();
        prop_assert_eq!(load_corpus(&path).unwrap().documents, docs);

        let queries: Vec<Query> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Query { id: format!("q{i}"), text: t.clone() })
            .collect();
        let qpath = dir.path().join("queries.jsonl");
        save_queries(&qpath, &queries).unwrap();
        prop_assert_eq!(load_queries(&qpath).unwrap().queries, queries);

        let mut qrels = Qrels::new();
        for (q, d, rel) in rels {
            // Duplicate (query, doc) keys are invalid input; skip them.
            let _ = qrels.insert(&format!("q{q}"), &format!("d{d}"), rel);
        }
        if qrels.query_count() > 0 {
            let rpath = dir.path().join("qrels.tsv");
            save_qrels(&rpath, &qrels).unwrap();
            prop_assert_eq!(&load_qrels(&rpath).unwrap(), &qrels);
        }
    }

    #[test]
    fn pair_files_round_trip(
        rows in prop::collection::vec(
            (text(1..6), prop::option::of(text(1..6)), any::<bool>(),
             prop::option::of(finite_f64())),
            1..12,
        ),
    ) {
        let pairs: Vec<SyntheticPair> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (query_text, doc_text, crop, latency_ms))| SyntheticPair {
                query_id: format!("g{i}"),
                query_text,
                doc_id: format!("d{i}"),
                doc_text,
                provenance: if crop { Provenance::Crop } else { Provenance::Llm },
                generator_label: "gen".into(),
                config_hash: "cafe".into(),
                latency_ms,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        save_pairs(&path, &pairs).unwrap();
        prop_assert_eq!(load_pairs(&path).unwrap(), pairs);
    }
}

// ----------------------------------------------------------------- crop

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Same documents, same config (seed included) -> the same pairs.
    #[test]
    fn crop_generation_is_deterministic(
        texts in prop::collection::vec(text(1..30), 1..8),
        config in crop_config(),
    ) {
        let docs: Vec<Document> = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| Document { id: format!("d{i}"), title: String::new(), text: t })
            .collect();
        let a = synquery::crop::generate_corpus(&docs, &config).unwrap();
        let b = synquery::crop::generate_corpus(&docs, &config).unwrap();
        prop_assert_eq!(a.pairs, b.pairs);
        prop_assert_eq!(a.lost, b.lost);
    }

    // Crop length lands in [min-tokens, n] (clamped when the document is
    // shorter than min-tokens) and the slice is contiguous.
    #[test]
    fn crop_span_respects_length_bounds(
        tokens in words(1..60),
        config in crop_config(),
        stream in any::<u64>(),
    ) {
        let sequence = synquery::corpus::TokenSequence::new(tokens);
        let n = sequence.len();
        let mut rng = substream(config.seed, "prop-span", stream);
        let crop = crop_span(&sequence, &config, &mut rng).unwrap();
        prop_assert!(crop.len() >= config.min_tokens.min(n));
        prop_assert!(crop.len() <= n);
        prop_assert!(sequence.tokens().windows(crop.len()).any(|w| w == crop.tokens()));
    }
}

// ------------------------------------------------------------------ llm

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    // Permuting the document list permutes the kept pairs but changes
    // neither the kept multiset nor the outcome counts.
    #[test]
    fn generation_is_order_independent(
        texts in prop::collection::vec(text(4..20), 3..24),
        rate in 0..4usize,
        seed in any::<u64>(),
        shuffle_seed in any::<u64>(),
    ) {
        let url = ["mock://p", "mock://p?empty=0.2", "mock://p?dup=0.3",
                   "mock://p?empty=0.3&dup=0.2"][rate];
        let docs: Vec<Document> = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| Document { id: format!("d{i}"), title: String::new(), text: t })
            .collect();
        let config = GenerationConfig {
            endpoint_url: url.to_string(),
            model_label: "mock".into(),
            seed: Some(seed),
            ..GenerationConfig::default()
        };
        let template = PromptTemplate::default();
        let forward = generate_corpus(&docs, &template, &config, None).unwrap();

        let mut shuffled = docs.clone();
        shuffled.shuffle(&mut substream(shuffle_seed, "prop-shuffle", 0));
        let permuted = generate_corpus(&shuffled, &template, &config, None).unwrap();

        prop_assert_eq!(forward.stats.total, docs.len());
        prop_assert_eq!(
            forward.stats.kept + forward.stats.empty + forward.stats.prompt_duplicate,
            forward.stats.total
        );
        prop_assert_eq!(forward.stats.kept, permuted.stats.kept);
        prop_assert_eq!(forward.stats.empty, permuted.stats.empty);
        prop_assert_eq!(forward.stats.prompt_duplicate, permuted.stats.prompt_duplicate);

        let key = |run: &synquery::llm::LlmRun| {
            let mut kept: Vec<(String, String)> = run
                .pairs
                .iter()
                .map(|p| (p.doc_id.clone(), p.query_text.clone()))
                .collect();
            kept.sort();
            kept
        };
        prop_assert_eq!(key(&forward), key(&permuted));
    }

    // The target document appears after every example, never inside the
    // example region.
    #[test]
    fn prompt_keeps_target_out_of_examples(body in "(zq[a-z]{2,6} ){3,20}") {
        let template = PromptTemplate::default();
        let doc = Document {
            id: "t".into(),
            title: String::new(),
            text: body.trim().to_string(),
        };
        let prompt = build_prompt(&template, &doc).unwrap();
        prop_assert_eq!(prompt.matches(doc.text.as_str()).count(), 1);
        let target_at = prompt.find(doc.text.as_str()).unwrap();
        for example in &template.examples {
            let doc_at = prompt.rfind(example.document.trim()).unwrap();
            let question_at = prompt.rfind(example.question.as_str()).unwrap();
            prop_assert!(doc_at < target_at && question_at < target_at);
        }
        let closing_label = format!("{}:", template.question_label);
        prop_assert!(prompt.trim_end().ends_with(&closing_label));
    }

    // The full starting-word distribution covers every query; the analysis
    // report lists at most the top N of it and its loss percentages match
    // the stats file.
    #[test]
    fn analysis_percentages_are_complete(
        queries in prop::collection::vec(text(1..6), 1..40),
        extra in (0..30usize, 0..30usize),
    ) {
        let pairs: Vec<SyntheticPair> = queries
            .iter()
            .enumerate()
            .map(|(i, q)| SyntheticPair {
                query_id: format!("g{i}"),
                query_text: q.clone(),
                doc_id: format!("d{i}"),
                doc_text: None,
                provenance: Provenance::Llm,
                generator_label: "mock".into(),
                config_hash: "cafe".into(),
                latency_ms: Some(3.0 + i as f64),
            })
            .collect();
        let full = synquery::llm::starting_word_report(&pairs, pairs.len()).unwrap();
        let full_total: f64 = full.iter().map(|(_, p)| p).sum();
        prop_assert!((full_total - 100.0).abs() <= 0.01, "full total {full_total}");

        let stats = synquery::llm::GenerationStats {
            total: pairs.len() + extra.0 + extra.1,
            kept: pairs.len(),
            empty: extra.0,
            prompt_duplicate: extra.1,
            latencies_ms: synquery::llm::LatencySummary::from_latencies(&[4.0, 6.0]),
        };
        let dir = tempfile::tempdir().unwrap();
        let pairs_path = dir.path().join("pairs.jsonl");
        let stats_path = dir.path().join("stats.json");
        save_pairs(&pairs_path, &pairs).unwrap();
        stats.save(&stats_path).unwrap();

        let report = analyze(&pairs_path, &stats_path).unwrap();
        prop_assert!(report.starting_words.len() <= STARTING_WORDS_TOP_N);
        prop_assert!(report.starting_words_total_percent <= 100.0 + 1e-9);
        if full.len() <= STARTING_WORDS_TOP_N {
            prop_assert!((report.starting_words_total_percent - 100.0).abs() <= 0.01);
        }
        let want_lost = 100.0 * (stats.empty + stats.prompt_duplicate) as f64
            / stats.total as f64;
        prop_assert!((report.lost_percent - want_lost).abs() < 1e-9);
    }
}

// -------------------------------------------------------------- encoder

proptest! {
    // cosine(a, b) equals dot of the normalized vectors.
    #[test]
    fn cosine_is_normalized_dot(
        pairs in prop::collection::vec((0.1..3.0f64, any::<bool>(), 0.1..3.0f64, any::<bool>()), 1..16),
    ) {
        let a: Vec<f64> = pairs.iter().map(|&(m, neg, _, _)| if neg { -m } else { m }).collect();
        let b: Vec<f64> = pairs.iter().map(|&(_, _, m, neg)| if neg { -m } else { m }).collect();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (na, nb) = (norm(&a), norm(&b));
        let unit_a: Vec<f64> = a.iter().map(|x| x / na).collect();
        let unit_b: Vec<f64> = b.iter().map(|x| x / nb).collect();
        let lhs = cosine(&a, &b).unwrap();
        let rhs = dot(&unit_a, &unit_b).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
        prop_assert!(lhs.abs() <= 1.0 + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Cross-entropy over a softmax is never negative and always finite.
    #[test]
    fn loss_is_nonnegative_and_finite(
        buckets in 32..128usize,
        dim in 2..16usize,
        tied in any::<bool>(),
        use_cosine in any::<bool>(),
        seed in any::<u64>(),
        batch in prop::collection::vec((text(1..5), text(1..8)), 2..6),
        tau in prop_oneof![Just(0.05), Just(1.0)],
    ) {
        let model = EncoderModel::new(EncoderParams {
            buckets,
            dim,
            tied,
            similarity: if use_cosine { Similarity::Cosine } else { Similarity::Dot },
            seed,
        }).unwrap();
        let owned: Vec<_> = batch
            .iter()
            .map(|(q, d)| (tokenize(q), tokenize(d)))
            .collect();
        let refs: Vec<_> = owned.iter().map(|(q, d)| (q, d)).collect();
        let loss = inbatch_loss(&model, &refs, tau).unwrap();
        prop_assert!(loss.is_finite());
        prop_assert!(loss >= -1e-12, "loss {loss}");
    }

    // Scaling every table row by c > 0 leaves cosine similarities alone
    // and multiplies dot similarities by c^2.
    #[test]
    fn similarity_scaling_laws(
        seed in any::<u64>(),
        tied in any::<bool>(),
        c in 0.1..10.0f64,
        query in text(1..6),
        doc in text(1..10),
    ) {
        for use_cosine in [true, false] {
            let mut model = EncoderModel::new(EncoderParams {
                buckets: 64,
                dim: 8,
                tied,
                similarity: if use_cosine { Similarity::Cosine } else { Similarity::Dot },
                seed,
            }).unwrap();
            let q0 = model.encode(&tokenize(&query), Tower::Query).unwrap();
            let d0 = model.encode(&tokenize(&doc), Tower::Document).unwrap();

            let tables = if model.params().tied { 1 } else { 2 };
            for t in 0..tables {
                for x in model.table_mut(t) {
                    *x *= c;
                }
            }
            let q1 = model.encode(&tokenize(&query), Tower::Query).unwrap();
            let d1 = model.encode(&tokenize(&doc), Tower::Document).unwrap();

            if use_cosine {
                let before = cosine(&q0, &d0);
                let after = cosine(&q1, &d1);
                if let (Ok(before), Ok(after)) = (before, after) {
                    prop_assert!((before - after).abs() < 1e-9, "{before} vs {after}");
                }
            } else {
                let before = dot(&q0, &d0).unwrap();
                let after = dot(&q1, &d1).unwrap();
                let want = c * c * before;
                prop_assert!(
                    (after - want).abs() <= 1e-9 * (1.0 + want.abs()),
                    "{after} vs {want}"
                );
            }
        }
    }

    // Tied towers mean the query and document encodings of the same tokens
    // are the same vector.
    #[test]
    fn tied_towers_share_the_table(
        seed in any::<u64>(),
        input in text(1..10),
    ) {
        let model = EncoderModel::new(EncoderParams {
            buckets: 128,
            dim: 8,
            tied: true,
            similarity: Similarity::Cosine,
            seed,
        }).unwrap();
        let tokens = tokenize(&input);
        let q = model.encode(&tokens, Tower::Query).unwrap();
        let d = model.encode(&tokens, Tower::Document).unwrap();
        prop_assert_eq!(q, d);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Model files restore the exact table bits and the snapshot string.
    #[test]
    fn model_files_round_trip(
        buckets in 8..64usize,
        dim in 1..12usize,
        tied in any::<bool>(),
        use_cosine in any::<bool>(),
        seed in any::<u64>(),
        snapshot in "[ -~]{0,60}",
    ) {
        let model = EncoderModel::new(EncoderParams {
            buckets,
            dim,
            tied,
            similarity: if use_cosine { Similarity::Cosine } else { Similarity::Dot },
            seed,
        }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&path, &model, &snapshot).unwrap();
        let (loaded, loaded_snapshot) = load_model(&path).unwrap();
        prop_assert_eq!(loaded, model);
        prop_assert_eq!(loaded_snapshot, snapshot);
    }
}

// ---------------------------------------------------------------- index

fn embedding_rows(
    max_n: usize,
    dims: &'static [usize],
) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::sample::select(dims.to_vec()).prop_flat_map(move |dim| {
        prop::collection::vec(prop::collection::vec(-1.0..1.0f64, dim), 1..max_n)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Rankings are score-sorted, duplicate-free, and capped at min(k, N).
    #[test]
    fn hits_are_sorted_and_distinct(
        rows in embedding_rows(80, &[2, 4, 8]),
        use_cosine in any::<bool>(),
        query_seed in any::<u64>(),
        k in 1..90usize,
    ) {
        let dim = rows[0].len();
        let similarity = if use_cosine { Similarity::Cosine } else { Similarity::Dot };
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("d{i}")).collect();
        let build = DenseIndex::from_embeddings(ids, rows, similarity);
        prop_assume!(build.is_ok()); // all-zero-norm corpora are rejected
        let index = build.unwrap().index;

        let mut rng = substream(query_seed, "prop-query", 0);
        use rand::Rng as _;
        let query: Vec<f64> = (0..dim).map(|_| rng.random_range(0.1..1.0)).collect();
        let ranking = index.search_embedding("q", &query, k).unwrap();

        prop_assert_eq!(ranking.hits.len(), k.min(index.len()));
        for pair in ranking.hits.windows(2) {
            prop_assert!(pair[0].1 >= pair[1].1, "scores must not increase");
        }
        let mut ids: Vec<&str> = ranking.hits.iter().map(|(d, _)| d.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), ranking.hits.len());
    }

    // Cosine indexing leaves every stored row with unit norm.
    #[test]
    fn cosine_rows_are_unit_norm(rows in embedding_rows(60, &[3, 8])) {
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("d{i}")).collect();
        let build = DenseIndex::from_embeddings(ids, rows, Similarity::Cosine);
        prop_assume!(build.is_ok());
        let index = build.unwrap().index;
        prop_assert!(index.normalized());
        for i in 0..index.len() {
            let norm = index.row(i).iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() <= 1e-6, "row {i} norm {norm}");
        }
    }

    // Index files restore the same ids, matrix, and settings.
    #[test]
    fn index_files_round_trip(
        rows in embedding_rows(40, &[2, 5]),
        use_cosine in any::<bool>(),
    ) {
        let similarity = if use_cosine { Similarity::Cosine } else { Similarity::Dot };
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("d{i}")).collect();
        let build = DenseIndex::from_embeddings(ids, rows, similarity);
        prop_assume!(build.is_ok());
        let index = build.unwrap().index;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.bin");
        index.save(&path).unwrap();
        prop_assert_eq!(DenseIndex::load(&path).unwrap(), index);
    }

    // Run files restore rankings exactly (f32 scores survive the text form).
    #[test]
    fn run_files_round_trip(
        raw in prop::collection::vec(
            prop::collection::vec(-1.0..1.0f32, 1..15),
            1..10,
        ),
    ) {
        let rankings: Vec<RunRanking> = raw
            .into_iter()
            .enumerate()
            .map(|(qi, mut scores)| {
                scores.sort_by(|a, b| b.total_cmp(a));
                RunRanking {
                    query_id: format!("q{qi}"),
                    hits: scores
                        .into_iter()
                        .enumerate()
                        .map(|(di, s)| (format!("d{di}"), s))
                        .collect(),
                }
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.tsv");
        write_run_file(&path, &rankings).unwrap();
        prop_assert_eq!(read_run_file(&path).unwrap(), rankings);
    }
}

// ----------------------------------------------------------------- eval

/// Random judged instance: (per-doc relevance, ranking over a subset).
fn judged_instance() -> impl Strategy<Value = (Vec<u32>, Vec<usize>)> {
    prop::collection::vec(0..4u32, 1..15).prop_flat_map(|rels| {
        let n = rels.len();
        let picks = prop::collection::vec(0..n, 0..=n).prop_map(|mut p| {
            p.sort_unstable();
            p.dedup();
            p
        });
        (Just(rels), picks)
    })
}

fn qrels_of(rels: &[u32]) -> Qrels {
    let mut qrels = Qrels::new();
    for (i, &rel) in rels.iter().enumerate() {
        qrels.insert("q", &format!("d{i}"), rel).unwrap();
    }
    qrels
}

fn ranking_of(picks: &[usize]) -> RunRanking {
    RunRanking {
        query_id: "q".into(),
        hits: picks
            .iter()
            .enumerate()
            .map(|(rank, &i)| (format!("d{i}"), 1.0 - rank as f32 * 1e-3))
            .collect(),
    }
}

proptest! {
    // nDCG stays in [0, 1] and hits 1 exactly on an ideal arrangement.
    #[test]
    fn ndcg_bounds_and_ideal((rels, picks) in judged_instance(), k in 1..20usize) {
        let qrels = qrels_of(&rels);
        let ranking = ranking_of(&picks);
        let score = ndcg_at_k(&ranking, &qrels, k).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&score), "ndcg {score}");

        let mut ideal: Vec<usize> = (0..rels.len()).collect();
        ideal.sort_by_key(|&i| (std::cmp::Reverse(rels[i]), i));
        let ideal_score = ndcg_at_k(&ranking_of(&ideal), &qrels, k).unwrap();
        if rels.iter().any(|&r| r > 0) {
            prop_assert!((ideal_score - 1.0).abs() < 1e-12, "ideal ndcg {ideal_score}");
        } else {
            prop_assert_eq!(ideal_score, 0.0);
        }
    }

    // Both metrics read only the order of hits: any positive affine map of
    // the scores changes nothing.
    #[test]
    fn metrics_depend_only_on_order(
        (rels, picks) in judged_instance(),
        k in 1..20usize,
        scale in 0.5..4.0f32,
        shift in -2.0..2.0f32,
    ) {
        let qrels = qrels_of(&rels);
        let ranking = ranking_of(&picks);
        let mut transformed = ranking.clone();
        for hit in &mut transformed.hits {
            hit.1 = hit.1 * scale + shift;
        }
        prop_assert_eq!(
            ndcg_at_k(&ranking, &qrels, k).unwrap(),
            ndcg_at_k(&transformed, &qrels, k).unwrap()
        );
        prop_assert_eq!(
            recall_at_k(&ranking, &qrels, k).unwrap(),
            recall_at_k(&transformed, &qrels, k).unwrap()
        );
    }

    // Recall@K never decreases as K grows.
    #[test]
    fn recall_is_monotone_in_k((rels, picks) in judged_instance(), ks in (1..25usize, 1..25usize)) {
        let qrels = qrels_of(&rels);
        let ranking = ranking_of(&picks);
        let (lo, hi) = (ks.0.min(ks.1), ks.0.max(ks.1));
        let at_lo = recall_at_k(&ranking, &qrels, lo).unwrap();
        let at_hi = recall_at_k(&ranking, &qrels, hi).unwrap();
        prop_assert!(at_lo <= at_hi + 1e-15, "recall@{lo} {at_lo} > recall@{hi} {at_hi}");
    }

    // Every dataset awards exactly one win unless its best score is tied,
    // and averages are plain per-method means.
    #[test]
    fn wins_and_averages_are_accounted_for(
        matrix in (2..5usize, 1..8usize).prop_flat_map(|(methods, datasets)| {
            prop::collection::vec(prop::collection::vec(0.0..100.0f64, datasets), methods)
        }),
    ) {
        let datasets = matrix[0].len();
        let methods: Vec<MethodScores> = matrix
            .iter()
            .enumerate()
            .map(|(m, row)| MethodScores {
                method: format!("m{m}"),
                per_dataset: (0..datasets).map(|d| (format!("ds{d}"), row[d])).collect(),
            })
            .collect();
        let agg = aggregate(&methods).unwrap();
        let wins: usize = agg.wins.values().sum();
        prop_assert_eq!(wins + agg.ties.len(), datasets);
        for method in &methods {
            let mean = method.per_dataset.values().sum::<f64>() / datasets as f64;
            let got = agg.averages[method.method.as_str()];
            prop_assert!((got - mean).abs() < 1e-12);
        }
    }
}

// ------------------------------------------------------------------ rng

proptest! {
    // Substreams replay exactly and differ across tags.
    #[test]
    fn substreams_replay_and_separate(
        seed in any::<u64>(),
        tag_a in "[a-z:]{1,12}",
        tag_b in "[a-z:]{1,12}",
        stream in any::<u64>(),
    ) {
        use rand::Rng as _;
        let take = |tag: &str| {
            let mut rng = substream(seed, tag, stream);
            (0..8).map(|_| rng.random::<u64>()).collect::<Vec<_>>()
        };
        prop_assert_eq!(take(&tag_a), take(&tag_a));
        if tag_a != tag_b {
            prop_assert_ne!(take(&tag_a), take(&tag_b));
        }
    }
}

// The qrels map rejects duplicate keys and negative text forms on load;
// the in-memory API mirrors that by refusing a second insert.
#[test]
fn qrels_reject_duplicate_pairs() {
    let mut qrels = Qrels::new();
    qrels.insert("q1", "d1", 2).unwrap();
    let err = qrels.insert("q1", "d1", 1).unwrap_err();
    assert!(err.to_string().contains("q1"));
    assert!(err.to_string().contains("d1"));
}
