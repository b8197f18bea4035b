//! Non-stage subcommands: late-weight tuning, the creator-attribute
//! ablation, run comparison, and the attention-cost table.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use newstweet_core::corpus::TrainingPair;
use newstweet_core::encoder::{estimate_encode_cost, CostQuery, EncoderConfig, PooledEmbedding};
use newstweet_core::error::Error as CoreError;
use newstweet_core::evaluation::{
    compute_metrics, grid_search_late_weight, paired_t_test, parse_run_file, run_ablation,
    MetricName, Qrels, TTestResult,
};
use newstweet_core::fusion::{FusionKind, FusionModel};
use newstweet_core::training::{average_batch_loss, run_training};

use crate::pipeline::{
    creator_context_text, dense_retrieve_one, news_text, pair_example, write_atomic, AlphaFile,
    EmbRecord, PipelineCtx, PipelineError, Stage,
};

type PResult<T> = Result<T, PipelineError>;

fn core_err(stage: &'static str) -> impl Fn(CoreError) -> PipelineError {
    move |source| PipelineError::StageFailed { stage, source }
}

/// Grid-searches the late fusion weight on the dev split and records the
/// argmax of mean dev MRR.
pub fn tune_alpha(ctx: &PipelineCtx) -> PResult<f64> {
    let err = core_err("tune-alpha");
    let model = ctx.load_model(Stage::Retrieve)?;
    if model.kind != FusionKind::LateFusion {
        return Err(PipelineError::Stage {
            stage: "tune-alpha",
            message: format!(
                "model kind is {}, weight tuning applies to late fusion only",
                model.kind.label()
            ),
        });
    }
    let corpus = ctx.load_corpus(Stage::Retrieve)?;
    let split = ctx.load_splits(Stage::Retrieve)?;
    let index = ctx.load_index(Stage::Retrieve)?;
    let news_embs =
        ctx.load_embeddings(ctx.paths.embeddings_news(), Stage::Retrieve, Stage::Embed)?;
    let news_by_id: HashMap<&str, &EmbRecord> =
        news_embs.iter().map(|r| (r.id.as_str(), r)).collect();
    let tweet_to_creator: HashMap<String, String> = corpus
        .tweets
        .iter()
        .map(|t| (t.tweet_id.clone(), t.creator_id.clone()))
        .collect();

    let dev_qrels = Qrels::from_pairs(split.dev.iter());
    if dev_qrels.is_empty() {
        return Err(PipelineError::Stage {
            stage: "tune-alpha",
            message: "dev split is empty".into(),
        });
    }

    let dev_eval = |alpha: f64| {
        let mut cfg = ctx.config.late_fusion;
        cfg.alpha = alpha;
        let mut runs = Vec::new();
        for query in dev_qrels.queries() {
            let Some(record) = news_by_id.get(query.as_str()) else {
                return Err(CoreError::UnknownId {
                    entity: "news embedding",
                    id: query.clone(),
                });
            };
            let news_emb = PooledEmbedding {
                values: record.vector.clone(),
            };
            runs.push(dense_retrieve_one(
                FusionKind::LateFusion,
                query,
                &news_emb,
                &index,
                &tweet_to_creator,
                &cfg,
                ctx.config.retrieval_k,
                None,
            )?);
        }
        compute_metrics(&runs, &dev_qrels)
    };

    let search = grid_search_late_weight(dev_eval, &ctx.config.alpha_grid).map_err(&err)?;
    let file = AlphaFile {
        best_alpha: search.best_alpha,
        trace: search.trace,
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| err(CoreError::Json(e)))?;
    write_atomic(&ctx.paths.alpha(), json.as_bytes()).map_err(|e| err(CoreError::Io(e)))?;
    println!("tuned alpha = {}", search.best_alpha);
    for (alpha, mrr) in &file.trace {
        println!("  alpha {alpha:.2}  dev mrr {mrr:.4}");
    }
    Ok(search.best_alpha)
}

/// Leave-one-attribute-out ablation: retrains the Early Fusion model per
/// configuration and reports the average in-batch loss on the test split.
pub fn ablate(ctx: &PipelineCtx) -> PResult<()> {
    let err = core_err("ablate");
    let corpus = ctx.load_corpus(Stage::Train)?;
    let split = ctx.load_splits(Stage::Train)?;
    let vocab = ctx.vocabulary(Stage::Train)?;
    let dict = ctx.dictionary(Stage::Train)?;

    let news_texts: HashMap<&str, String> = corpus
        .articles
        .iter()
        .map(|a| (a.article_id.as_str(), news_text(a, &corpus)))
        .collect();
    let tweet_texts: HashMap<&str, String> = corpus
        .tweets
        .iter()
        .map(|t| {
            (
                t.tweet_id.as_str(),
                newstweet_core::textprep::expand_compound_tokens(&t.text, &dict),
            )
        })
        .collect();

    let examples_for = |pairs: &[TrainingPair], contexts: &HashMap<&str, String>| {
        pairs
            .iter()
            .map(|pair| {
                let news = news_texts
                    .get(pair.article_id.as_str())
                    .cloned()
                    .unwrap_or_default();
                let tweet = tweet_texts
                    .get(pair.tweet_id.as_str())
                    .cloned()
                    .unwrap_or_default();
                let context = corpus
                    .tweet(&pair.tweet_id)
                    .and_then(|t| contexts.get(t.creator_id.as_str()))
                    .cloned()
                    .unwrap_or_default();
                pair_example(FusionKind::EarlyFusion, &news, &tweet, &context, &vocab)
            })
            .collect::<Vec<_>>()
    };

    let train_order: Vec<TrainingPair> = split.train.iter().cloned().collect();
    let test_order = newstweet_core::training::interleave_by_article(&split.test);

    let encoder_config = EncoderConfig::new(
        vocab.len(),
        ctx.config.model.dim,
        ctx.config.model.encoder_seed,
    )
    .map_err(&err)?;

    let report = run_ablation(&ctx.config.included_attributes, |included| {
        let contexts: HashMap<&str, String> = corpus
            .creators
            .iter()
            .map(|c| {
                (
                    c.creator_id.as_str(),
                    creator_context_text(c, included, &dict),
                )
            })
            .collect();
        let train_examples = examples_for(&train_order, &contexts);
        let test_examples = examples_for(&test_order, &contexts);
        let mut model = FusionModel::init(FusionKind::EarlyFusion, encoder_config)?;
        run_training(&mut model, &train_examples, &ctx.config.training)?;
        average_batch_loss(
            &model,
            &test_examples,
            ctx.config.training.batch_size,
            ctx.config.training.tau,
        )
    });

    let json = serde_json::to_string_pretty(&report).map_err(|e| err(CoreError::Json(e)))?;
    write_atomic(&ctx.paths.ablation(), json.as_bytes()).map_err(|e| err(CoreError::Io(e)))?;
    println!("{:<14} {:>10}", "excluded", "test loss");
    for (label, row) in &report.rows {
        match row.average_test_loss {
            Some(loss) => println!("{label:<14} {loss:>10.4}"),
            None => println!("{label:<14} {:>10}", "diverged"),
        }
    }
    Ok(())
}

/// Per-metric comparison of two run files over shared qrels: means, deltas,
/// and a paired t-test per metric. Returns the test for `headline_metric`.
pub fn compare_runs(
    run_a: &Path,
    run_b: &Path,
    qrels_path: &Path,
    headline_metric: MetricName,
) -> PResult<TTestResult> {
    let err = core_err("compare");
    let qrels = Qrels::from_path(qrels_path).map_err(&err)?;
    let text_a = std::fs::read_to_string(run_a).map_err(|e| err(CoreError::Io(e)))?;
    let text_b = std::fs::read_to_string(run_b).map_err(|e| err(CoreError::Io(e)))?;
    let runs_a = parse_run_file(&text_a).map_err(&err)?;
    let runs_b = parse_run_file(&text_b).map_err(&err)?;

    let queries_a: BTreeSet<&str> = runs_a.iter().map(|r| r.query_id.as_str()).collect();
    let queries_b: BTreeSet<&str> = runs_b.iter().map(|r| r.query_id.as_str()).collect();
    if queries_a != queries_b {
        let only_a = queries_a.difference(&queries_b).count();
        let only_b = queries_b.difference(&queries_a).count();
        return Err(PipelineError::StageFailed {
            stage: "compare",
            source: CoreError::QuerySetMismatch(format!(
                "{only_a} queries only in A, {only_b} only in B"
            )),
        });
    }

    let report_a = compute_metrics(&runs_a, &qrels).map_err(&err)?;
    let report_b = compute_metrics(&runs_b, &qrels).map_err(&err)?;

    println!(
        "{:<8} {:>10} {:>10} {:>10} {:>10} {:>10}  sig",
        "metric", "run A", "run B", "delta", "t", "p"
    );
    let mut headline = None;
    for metric in MetricName::ALL {
        let a = report_a.metric_vector(metric);
        let b = report_b.metric_vector(metric);
        let test = paired_t_test(&a, &b).map_err(&err)?;
        let marker = if test.significant { "*" } else { "" };
        println!(
            "{:<8} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}  {}",
            metric.label(),
            report_a.mean(metric),
            report_b.mean(metric),
            report_a.mean(metric) - report_b.mean(metric),
            test.t_statistic,
            test.p_value,
            marker
        );
        if metric == headline_metric {
            headline = Some(test);
        }
    }
    Ok(headline.expect("headline metric is one of the four"))
}

/// Prints attention-cost units for the configured (n, m) operating points.
pub fn bench_cost(ctx: &PipelineCtx) {
    println!(
        "{:>6} {:>6} {:>12} {:>12} {:>16} {:>16}",
        "n", "m", "base", "early", "inter/late miss", "inter/late hit"
    );
    for point in &ctx.config.cost_bench {
        let q = |kind, cache_hit| CostQuery {
            model_kind: kind,
            n: point.n,
            m: point.m,
            cache_hit,
        };
        println!(
            "{:>6} {:>6} {:>12} {:>12} {:>16} {:>16}",
            point.n,
            point.m,
            estimate_encode_cost(&q(FusionKind::Base, false)),
            estimate_encode_cost(&q(FusionKind::EarlyFusion, false)),
            estimate_encode_cost(&q(FusionKind::IntermediateFusion, false)),
            estimate_encode_cost(&q(FusionKind::IntermediateFusion, true)),
        );
    }
}
