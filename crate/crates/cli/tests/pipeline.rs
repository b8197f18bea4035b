//! Pipeline-level integration tests over the bundled fixture.

use std::path::{Path, PathBuf};
use std::process::Command;

use newstweet_cli::config::{ModelConfig, PipelineConfig};
use newstweet_cli::pipeline::{execute_pipeline, ArtifactPaths, PipelineError, Stage};
use newstweet_core::fusion::FusionKind;
use newstweet_core::training::TrainConfig;

fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn fixture_config(out_dir: &Path) -> PipelineConfig {
    let fixtures = fixtures_dir();
    let json = format!(
        r#"{{"paths":{{
            "articles":"{0}/articles.jsonl",
            "tweets":"{0}/tweets.jsonl",
            "creators":"{0}/creators.jsonl",
            "vocab":"{0}/vocab.txt",
            "unigrams":"{0}/unigrams.tsv",
            "out_dir":"{1}"
        }}}}"#,
        fixtures.display(),
        out_dir.display()
    );
    let mut config: PipelineConfig = serde_json::from_str(&json).unwrap();
    config.model = ModelConfig {
        kind: FusionKind::Base,
        dim: 32,
        encoder_seed: 0,
    };
    config.training = TrainConfig {
        batch_size: 16,
        learning_rate: 0.1,
        steps: 120,
        tau: 10.0,
        freeze_news: true,
        seed: 0,
    };
    config.retrieval_k = 100;
    config
}

#[test]
fn full_pipeline_writes_report() {
    let out = tempfile::tempdir().unwrap();
    let config = fixture_config(out.path());
    execute_pipeline(&config, &Stage::ALL).unwrap();
    let paths = ArtifactPaths::new(&config);
    assert!(paths.report().is_file());
    let report: newstweet_cli::pipeline::EvalReport =
        serde_json::from_str(&std::fs::read_to_string(paths.report()).unwrap()).unwrap();
    assert_eq!(report.dense.per_query.len(), report.bm25.per_query.len());
    assert!(report.dense.per_query.len() >= 5);
    // No partial artifacts left behind.
    for entry in std::fs::read_dir(out.path()).unwrap() {
        let name = entry.unwrap().file_name();
        assert!(
            !name.to_string_lossy().contains(".tmp"),
            "leftover temp file {name:?}"
        );
    }
}

#[test]
fn retrieve_without_upstream_is_missing_artifact() {
    let out = tempfile::tempdir().unwrap();
    let config = fixture_config(out.path());
    let err = execute_pipeline(&config, &[Stage::Retrieve]).unwrap_err();
    match &err {
        PipelineError::MissingArtifact {
            stage, produced_by, ..
        } => {
            assert_eq!(*stage, "retrieve");
            assert!(["ingest", "preprocess", "train", "embed", "index"].contains(produced_by));
        }
        other => panic!("expected MissingArtifact, got {other}"),
    }
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn invalid_config_fails_before_any_write() {
    let out = tempfile::tempdir().unwrap();
    let mut config = fixture_config(out.path());
    config.paths.articles = out.path().join("nope.jsonl");
    let err = execute_pipeline(&config, &Stage::ALL).unwrap_err();
    assert!(matches!(err, PipelineError::InvalidConfig(_)));
    assert!(std::fs::read_dir(out.path()).unwrap().next().is_none());
}

#[test]
fn completed_stages_are_skipped_on_rerun() {
    let out = tempfile::tempdir().unwrap();
    let config = fixture_config(out.path());
    execute_pipeline(&config, &[Stage::Ingest]).unwrap();
    let paths = ArtifactPaths::new(&config);
    let first_mtime = std::fs::metadata(paths.corpus())
        .unwrap()
        .modified()
        .unwrap();
    std::thread::sleep(std::time::Duration::from_millis(20));
    execute_pipeline(&config, &[Stage::Ingest]).unwrap();
    let second_mtime = std::fs::metadata(paths.corpus())
        .unwrap()
        .modified()
        .unwrap();
    assert_eq!(first_mtime, second_mtime, "ingest reran despite outputs");
}

#[test]
fn cli_binary_reports_missing_artifact_exit_code_2() {
    let out = tempfile::tempdir().unwrap();
    let config = fixture_config(out.path());
    let config_path = out.path().join("config.json");
    std::fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();

    let output = Command::new(env!("CARGO_BIN_EXE_newstweet"))
        .args(["--config", config_path.to_str().unwrap(), "retrieve"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("retrieve"), "stderr: {stderr}");
}

#[test]
fn cli_binary_runs_stage_list_and_bench_cost() {
    let out = tempfile::tempdir().unwrap();
    let config = fixture_config(out.path());
    let config_path = out.path().join("config.json");
    std::fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();

    let output = Command::new(env!("CARGO_BIN_EXE_newstweet"))
        .args([
            "--config",
            config_path.to_str().unwrap(),
            "--stages",
            "ingest,preprocess",
        ])
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let paths = ArtifactPaths::new(&config);
    assert!(paths.splits().is_file());

    let output = Command::new(env!("CARGO_BIN_EXE_newstweet"))
        .args(["--config", config_path.to_str().unwrap(), "bench-cost"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("16384"), "stdout: {stdout}");
    assert!(stdout.contains("65536"));
}

#[test]
fn compare_run_with_itself_gives_p_one() {
    let out = tempfile::tempdir().unwrap();
    let config = fixture_config(out.path());
    execute_pipeline(&config, &Stage::ALL).unwrap();
    let paths = ArtifactPaths::new(&config);
    let result = newstweet_cli::commands::compare_runs(
        &paths.run_dense(FusionKind::Base),
        &paths.run_dense(FusionKind::Base),
        &paths.qrels(),
        newstweet_core::evaluation::MetricName::Mrr,
    )
    .unwrap();
    assert_eq!(result.t_statistic, 0.0);
    assert_eq!(result.p_value, 1.0);
    assert!(!result.significant);
}

#[test]
fn compare_rejects_disjoint_query_sets() {
    let dir = tempfile::tempdir().unwrap();
    let run_a = dir.path().join("a.txt");
    let run_b = dir.path().join("b.txt");
    let qrels = dir.path().join("qrels.tsv");
    std::fs::write(&run_a, "q1 Q0 t1 1 0.900000 x\n").unwrap();
    std::fs::write(&run_b, "q2 Q0 t1 1 0.900000 x\n").unwrap();
    std::fs::write(&qrels, "q1\tt1\nq2\tt1\n").unwrap();
    let err = newstweet_cli::commands::compare_runs(
        &run_a,
        &run_b,
        &qrels,
        newstweet_core::evaluation::MetricName::Mrr,
    )
    .unwrap_err();
    assert!(err.to_string().contains("quer"), "{err}");
}

#[test]
fn windowed_retrieval_restricts_candidates() {
    let out = tempfile::tempdir().unwrap();
    let mut config = fixture_config(out.path());
    config.candidate_window.enabled = true;
    execute_pipeline(&config, &Stage::ALL).unwrap();
    let paths = ArtifactPaths::new(&config);
    let corpus: newstweet_cli::pipeline::CorpusFile =
        serde_json::from_str(&std::fs::read_to_string(paths.corpus()).unwrap()).unwrap();
    let by_id: std::collections::HashMap<&str, i64> = corpus
        .tweets
        .iter()
        .map(|t| (t.tweet_id.as_str(), t.created_at))
        .collect();
    let article_times: std::collections::HashMap<&str, i64> = corpus
        .articles
        .iter()
        .map(|a| (a.article_id.as_str(), a.published_at))
        .collect();
    let run = std::fs::read_to_string(paths.run_dense(FusionKind::Base)).unwrap();
    assert!(!run.is_empty());
    for line in run.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let article_time = article_times[fields[0]];
        let tweet_time = by_id[fields[2]];
        assert!(tweet_time < article_time, "future tweet retrieved: {line}");
        assert!(tweet_time >= article_time - 7 * 86_400);
    }
}

#[test]
fn tune_alpha_writes_grid_argmax_and_retrieve_uses_it() {
    let out = tempfile::tempdir().unwrap();
    let mut config = fixture_config(out.path());
    config.model.kind = FusionKind::LateFusion;
    config.alpha_grid = vec![0.0, 0.5, 1.0];
    execute_pipeline(
        &config,
        &[
            Stage::Ingest,
            Stage::Preprocess,
            Stage::Train,
            Stage::Embed,
            Stage::Index,
        ],
    )
    .unwrap();
    let ctx = newstweet_cli::pipeline::PipelineCtx::new(config.clone());
    let tuned = newstweet_cli::commands::tune_alpha(&ctx).unwrap();
    assert!(config.alpha_grid.contains(&tuned));
    let paths = ArtifactPaths::new(&config);
    let alpha_file: newstweet_cli::pipeline::AlphaFile =
        serde_json::from_str(&std::fs::read_to_string(paths.alpha()).unwrap()).unwrap();
    assert_eq!(alpha_file.best_alpha, tuned);
    assert_eq!(alpha_file.trace.len(), 3);
    // Retrieval picks up the tuned weight and completes.
    execute_pipeline(&config, &[Stage::Retrieve, Stage::Evaluate]).unwrap();
    assert!(paths.run_dense(FusionKind::LateFusion).is_file());
}

#[test]
fn tune_alpha_rejects_non_late_models() {
    let out = tempfile::tempdir().unwrap();
    let config = fixture_config(out.path());
    execute_pipeline(&config, &[Stage::Ingest, Stage::Preprocess, Stage::Train]).unwrap();
    let ctx = newstweet_cli::pipeline::PipelineCtx::new(config);
    let err = newstweet_cli::commands::tune_alpha(&ctx).unwrap_err();
    assert!(err.to_string().contains("late fusion"), "{err}");
}

#[test]
fn ablate_writes_all_seven_rows() {
    let out = tempfile::tempdir().unwrap();
    let mut config = fixture_config(out.path());
    // Short retrains keep the sweep quick; orderings are not asserted here.
    config.training.steps = 60;
    execute_pipeline(&config, &[Stage::Ingest, Stage::Preprocess]).unwrap();
    let ctx = newstweet_cli::pipeline::PipelineCtx::new(config.clone());
    newstweet_cli::commands::ablate(&ctx).unwrap();
    let paths = ArtifactPaths::new(&config);
    let report: newstweet_core::evaluation::AblationReport =
        serde_json::from_str(&std::fs::read_to_string(paths.ablation()).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 7);
    for label in [
        "none",
        "screen",
        "display",
        "bio",
        "website",
        "location",
        "all-excluded",
    ] {
        let row = &report.rows[label];
        assert!(!row.diverged, "{label} diverged");
        assert!(row.average_test_loss.unwrap() >= 0.0);
    }
}

#[test]
fn windowed_late_fusion_pipeline_completes() {
    let out = tempfile::tempdir().unwrap();
    let mut config = fixture_config(out.path());
    config.model.kind = FusionKind::LateFusion;
    config.candidate_window.enabled = true;
    execute_pipeline(&config, &Stage::ALL).unwrap();
    let paths = ArtifactPaths::new(&config);
    let dense = std::fs::read_to_string(paths.run_dense(FusionKind::LateFusion)).unwrap();
    assert!(!dense.is_empty());

    // Both run files must respect the candidate window.
    let corpus: newstweet_cli::pipeline::CorpusFile =
        serde_json::from_str(&std::fs::read_to_string(paths.corpus()).unwrap()).unwrap();
    let tweet_times: std::collections::HashMap<&str, i64> = corpus
        .tweets
        .iter()
        .map(|t| (t.tweet_id.as_str(), t.created_at))
        .collect();
    let article_times: std::collections::HashMap<&str, i64> = corpus
        .articles
        .iter()
        .map(|a| (a.article_id.as_str(), a.published_at))
        .collect();
    let bm25 = std::fs::read_to_string(paths.run_bm25()).unwrap();
    for line in dense.lines().chain(bm25.lines()) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let article_time = article_times[fields[0]];
        let tweet_time = tweet_times[fields[2]];
        assert!(tweet_time < article_time, "future tweet in run: {line}");
        assert!(tweet_time >= article_time - 7 * 86_400, "stale tweet in run: {line}");
    }
}

#[test]
fn compare_flags_significance_when_one_run_dominates() {
    // Six queries where run A always ranks the relevant tweet first and
    // run B buries it at varying depths: the MRR difference is positive on
    // every query with nonzero variance, so the paired t-test must flag it.
    let dir = tempfile::tempdir().unwrap();
    let mut run_a = String::new();
    let mut run_b = String::new();
    let mut qrels = String::new();
    for q in 0..6 {
        let qid = format!("q{q}");
        let rel = format!("rel{q}");
        qrels.push_str(&format!("{qid}\t{rel}\n"));
        run_a.push_str(&format!("{qid} Q0 {rel} 1 0.900000 A\n"));
        run_a.push_str(&format!("{qid} Q0 x{q} 2 0.800000 A\n"));
        let buried_rank = 2 + (q % 3);
        for rank in 1..=4 {
            let id = if rank == buried_rank {
                rel.clone()
            } else {
                format!("y{q}_{rank}")
            };
            run_b.push_str(&format!("{qid} Q0 {id} {rank} 0.{}00000 B\n", 9 - rank));
        }
    }
    let path_a = dir.path().join("a.txt");
    let path_b = dir.path().join("b.txt");
    let path_q = dir.path().join("qrels.tsv");
    std::fs::write(&path_a, run_a).unwrap();
    std::fs::write(&path_b, run_b).unwrap();
    std::fs::write(&path_q, qrels).unwrap();

    let result = newstweet_cli::commands::compare_runs(
        &path_a,
        &path_b,
        &path_q,
        newstweet_core::evaluation::MetricName::Mrr,
    )
    .unwrap();
    assert!(result.p_value < 0.05, "p = {}", result.p_value);
    assert!(result.significant);
    assert!(result.t_statistic > 0.0);
}
