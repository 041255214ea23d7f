mod common;

use common::{chat_body, marker_markdown, pair_mock, user_message, MockLlm};
use qgen_core::chunker::ChunkConfig;
use qgen_core::corpus::{self, SourceKind};
use qgen_core::datastore::{export_training, DatasetRecord, FailureKind, SplitSpec, Store, SPLIT_FILES};
use qgen_core::explorer::{compare, CompareOptions, ComparisonRecord, ExplorerError, ModelAnswer, ModelRef};
use qgen_core::llm_gateway::{AuthHeader, Gateway, Secret};
use qgen_core::promptkit::{
    add_example, generate_for_group, GenerateError, GenerationConfig, PromptMode, RunProgress,
    RunState,
};
use serde_json::json;
use std::sync::{Arc, Mutex};

fn workspace(docs: usize, sections: usize) -> (tempfile::TempDir, Store, String) {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let group = corpus::create_group(&store, "g").unwrap();
    for d in 0..docs {
        corpus::ingest_document(
            &store,
            &group.group_id,
            &format!("doc{d}"),
            SourceKind::Markdown,
            marker_markdown(d, sections).as_bytes(),
        )
        .unwrap();
    }
    (dir, store, group.group_id)
}

fn config() -> GenerationConfig {
    let mut cfg = GenerationConfig::new("mock");
    cfg.chunk_config = ChunkConfig::new(40, 5, true).unwrap();
    cfg.questions_per_chunk = 2;
    cfg
}

#[tokio::test(flavor = "multi_thread")]
async fn deleting_a_document_orphans_its_datasets_but_keeps_them_exportable() {
    let (_dir, store, group) = workspace(2, 1);
    let mock = pair_mock(None).await;
    let ds = generate_for_group(&store, &mock.gateway("mock"), &group, &config(), None)
        .await
        .unwrap();
    assert!(!ds.orphaned);
    let victim = ds.pairs[0].doc_id.clone();
    corpus::delete_document(&store, &victim).unwrap();

    let reloaded: DatasetRecord = store.load(&ds.dataset_id).unwrap();
    assert!(reloaded.orphaned);
    assert_eq!(reloaded.pairs, ds.pairs);
    assert!(corpus::get_document(&store, &victim).is_err());
    assert_eq!(corpus::get_group(&store, &group).unwrap().document_ids.len(), 1);
    let spec = SplitSpec {
        test_fraction: 0.0,
        valid_fraction: 0.0,
        shuffle: false,
        seed: 0,
        include_context: false,
    };
    let export = export_training(&store, &ds.dataset_id, &spec).unwrap();
    assert_eq!(export.manifest.counts.train, ds.pairs.len());
    let train = std::fs::read_to_string(export.export_dir.join(SPLIT_FILES[0])).unwrap();
    assert_eq!(train.lines().count(), ds.pairs.len());
}

#[tokio::test(flavor = "multi_thread")]
async fn few_shot_without_examples_fails_before_any_request() {
    let (_dir, store, group) = workspace(2, 1);
    let mock = pair_mock(None).await;
    let mut cfg = config();
    cfg.prompt_mode = PromptMode::FewShot;
    cfg.num_examples = 2;
    let err = generate_for_group(&store, &mock.gateway("mock"), &group, &cfg, None)
        .await
        .unwrap_err();
    assert!(matches!(err, GenerateError::NoExamples(_)), "{err:?}");
    assert_eq!(mock.calls(), 0);
}

#[tokio::test(flavor = "multi_thread")]
async fn few_shot_prompts_carry_only_the_chunk_documents_examples() {
    let (_dir, store, group) = workspace(2, 1);
    let docs = corpus::list_documents(&store, &group).unwrap();
    add_example(&store, &docs[0].doc_id, "Question from doc zero?", "zero").unwrap();
    add_example(&store, &docs[1].doc_id, "Question from doc one?", "one").unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let mock = MockLlm::start(move |_, req| {
        log.lock().unwrap().push(user_message(req));
        (200, chat_body(r#"[{"question":"Q?","answer":"A"}]"#))
    })
    .await;
    let mut cfg = config();
    cfg.prompt_mode = PromptMode::FewShot;
    cfg.num_examples = 1;
    let ds = generate_for_group(&store, &mock.gateway("mock"), &group, &cfg, None)
        .await
        .unwrap();
    assert_eq!(ds.pairs.len(), 2);
    let prompts = seen.lock().unwrap().clone();
    assert_eq!(prompts.len(), 2);
    for p in &prompts {
        assert!(p.starts_with("Examples of the expected pairs:"));
        assert_eq!(p.contains("doc zero") as u8 + p.contains("doc one") as u8, 1, "{p}");
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn progress_counts_every_chunk_and_upstream_failures_are_recorded() {
    let (_dir, store, group) = workspace(1, 3);
    // Reject the chunk mentioning marker0x1 with a non-retryable 400.
    let mock = MockLlm::start(|_, req| {
        if user_message(req).contains("marker0x1") {
            (400, json!({"error": "bad"}))
        } else {
            (200, chat_body(r#"[{"question":"Q1?","answer":"A1"},{"question":"Q2?","answer":"A2"},{"question":"Q3?","answer":"A3"}]"#))
        }
    })
    .await;
    let progress = RunProgress::default();
    assert_eq!(progress.snapshot().state, RunState::Pending);
    let result = generate_for_group(&store, &mock.gateway("mock"), &group, &config(), Some(&progress)).await;
    progress.finish(&result);
    let ds = result.unwrap();
    let snap = progress.snapshot();
    assert_eq!(snap.state, RunState::Completed);
    assert_eq!((snap.done, snap.failed, snap.total), (3, 1, 3));
    assert_eq!(snap.dataset_id.as_deref(), Some(ds.dataset_id.as_str()));
    assert_eq!(ds.failures.len(), 1);
    assert_eq!(ds.failures[0].kind, FailureKind::Upstream);
    assert_eq!(ds.failures[0].code, "upstream_rejected");
    // Three pairs came back per chunk but only two were requested.
    assert_eq!(ds.pairs.len(), 4);
    assert_eq!(ds.dropped_pairs, 2);
    assert!(ds.is_consistent());
}

#[tokio::test(flavor = "multi_thread")]
async fn a_run_where_every_chunk_fails_persists_nothing() {
    let (_dir, store, group) = workspace(1, 2);
    let mock = MockLlm::start(|_, _| (200, chat_body("nothing useful"))).await;
    let progress = RunProgress::default();
    let result = generate_for_group(&store, &mock.gateway("mock"), &group, &config(), Some(&progress)).await;
    progress.finish(&result);
    assert!(matches!(result, Err(GenerateError::AllChunksFailed(2))));
    assert_eq!(progress.snapshot().state, RunState::Failed);
    assert!(store.list_ids::<DatasetRecord>().unwrap().is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_provider_and_empty_group_fail_fast() {
    let (_dir, store, group) = workspace(1, 1);
    let err = generate_for_group(&store, &Gateway::new(), &group, &config(), None)
        .await
        .unwrap_err();
    assert!(matches!(err, GenerateError::Provider(_)));
    let empty = corpus::create_group(&store, "empty").unwrap();
    let mock = pair_mock(None).await;
    let err = generate_for_group(&store, &mock.gateway("mock"), &empty.group_id, &config(), None)
        .await
        .unwrap_err();
    assert!(matches!(err, GenerateError::EmptyGroup(_)));
    assert_eq!(mock.calls(), 0);
}

#[tokio::test(flavor = "multi_thread")]
async fn auth_secret_is_never_serialized() {
    let mock = MockLlm::start(|_, _| (200, chat_body("ok"))).await;
    let mut cfg = mock.provider("p");
    cfg.auth_header = Some(AuthHeader {
        name: "Authorization".into(),
        secret: Secret::new("Bearer sk-very-secret"),
    });
    let json = serde_json::to_string(&cfg).unwrap();
    assert!(!json.contains("sk-very-secret"));
    assert!(!format!("{cfg:?}").contains("sk-very-secret"));

    let from_env: AuthHeader = {
        std::env::set_var("QGEN_TEST_SECRET", "from-env");
        serde_json::from_value(json!({"name": "X-Key", "secret_env": "QGEN_TEST_SECRET"})).unwrap()
    };
    assert_eq!(from_env.secret.expose(), "from-env");
}

async fn explorer_fixture(long: bool) -> (tempfile::TempDir, Store, String) {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let group = corpus::create_group(&store, "g").unwrap();
    let mut body = String::from("The lighthouse keeper logs the weather at dawn. Ships rely on the beacon.\n\n");
    if long {
        for i in 0..2100 {
            body.push_str(&format!("filler{i} "));
        }
        body.push_str("tailword");
    }
    let doc = corpus::ingest_document(&store, &group.group_id, "lighthouse", SourceKind::PlainText, body.as_bytes())
        .unwrap();
    (dir, store, doc.doc_id)
}

#[tokio::test(flavor = "multi_thread")]
async fn explorer_isolates_a_failing_model() {
    let (_dir, store, doc_id) = explorer_fixture(false).await;
    let good = MockLlm::start(|_, _| (200, chat_body("The keeper logs the weather."))).await;
    let bad = MockLlm::start(|_, _| (503, json!({"error": "down"}))).await;
    let gateway = Gateway::new();
    gateway.register_provider(good.provider("good")).unwrap();
    gateway.register_provider(bad.provider("bad")).unwrap();
    let opts = CompareOptions {
        score: true,
        ..CompareOptions::default()
    };
    let record = compare(
        &store,
        &gateway,
        &doc_id,
        "What does the keeper log?",
        &ModelRef::new("good"),
        &ModelRef::new("bad"),
        &opts,
    )
    .await
    .unwrap();
    assert_eq!(record.answer_a.text(), Some("The keeper logs the weather."));
    assert!(matches!(&record.answer_b, ModelAnswer::Error { code, .. } if code == "upstream_error"));
    assert_eq!(bad.calls(), 3);
    assert!(record.metric_report_a.is_some());
    assert!(record.metric_report_b.is_none());
    assert!(!record.context_truncated);
    let stored: ComparisonRecord = store.load(&record.comparison_id).unwrap();
    assert_eq!(stored, record);

    // A repeated question appends a new record.
    compare(&store, &gateway, &doc_id, "What does the keeper log?", &ModelRef::new("good"), &ModelRef::new("bad"), &opts)
        .await
        .unwrap();
    assert_eq!(qgen_core::explorer::list_comparisons(&store).unwrap().len(), 2);

    let err = compare(&store, &gateway, &doc_id, "Q?", &ModelRef::new("bad"), &ModelRef::new("bad"), &opts)
        .await
        .unwrap_err();
    assert!(matches!(err, ExplorerError::BothModelsFailed(..)));
}

#[tokio::test(flavor = "multi_thread")]
async fn explorer_truncates_long_documents() {
    let (_dir, store, doc_id) = explorer_fixture(true).await;
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let mock = MockLlm::start(move |_, req| {
        log.lock().unwrap().push(user_message(req));
        (200, chat_body("answer"))
    })
    .await;
    let gateway = mock.gateway("m");
    let record = compare(
        &store,
        &gateway,
        &doc_id,
        "Q?",
        &ModelRef::new("m"),
        &ModelRef::new("m"),
        &CompareOptions::default(),
    )
    .await
    .unwrap();
    assert!(record.context_truncated);
    assert!(record.metric_report_a.is_none());
    let prompts = seen.lock().unwrap().clone();
    assert_eq!(prompts.len(), 2);
    assert!(!prompts[0].contains("tailword"));
    assert!(prompts[0].contains("filler1986\n"));
    assert!(!prompts[0].contains("filler1987"));

    let err = compare(&store, &gateway, "nope", "Q?", &ModelRef::new("m"), &ModelRef::new("m"), &CompareOptions::default())
        .await
        .unwrap_err();
    assert!(matches!(err, ExplorerError::DocNotFound(_)));
}
