//! Subcommand implementations.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pcr_core::corpus::{
    build_candidate_pool, build_queries, eligible_paragraphs, load_articles, load_paragraphs, load_queries,
    split_by_year, write_jsonl, Article, Query,
};
use pcr_core::evaluate::{age_analysis, evaluate_run, read_run, write_run, RankedQuery};
use pcr_core::index::build_index;
use pcr_core::pipeline::rank_queries;
use pcr_core::sampling::{citation_lookup, sample_corpus, write_quadruplets, QuadrupletHeader, Quota};
use pcr_core::sampling::read_quadruplets;
use pcr_core::synthetic::{generate, SyntheticConfig};
use pcr_core::trainer::train as run_training;
use pcr_core::{EncoderConfig, EncoderParams, TrainConfig, TrainingData};

use crate::cli::{
    AnalyzeArgs, EvalArgs, IndexArgs, IngestArgs, SampleArgs, ServeArgs, SplitArgs, SynthArgs, TrainArgs,
};
use crate::server;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn articles_from(path: &Path) -> Result<Vec<Article>> {
    let (articles, stats) = load_articles(path)?;
    if stats.dropped_empty_text > 0 {
        log::warn!(
            "{}: dropped {} articles with empty title or abstract",
            path.display(),
            stats.dropped_empty_text
        );
    }
    Ok(articles)
}

pub fn ingest(args: &IngestArgs) -> Result<()> {
    let (articles, stats) = load_articles(&args.articles)?;
    let paragraphs = load_paragraphs(&args.paragraphs)?;
    let eligible = eligible_paragraphs(&paragraphs).len();
    let by_id: HashMap<&str, &Article> = articles.iter().map(|a| (a.id.as_str(), a)).collect();
    let (queries, skipped) = build_queries(&paragraphs, &by_id);
    let pool = build_candidate_pool(&articles);

    create_dir(&args.out_dir)?;
    write_jsonl(args.out_dir.join("pool.jsonl"), pool.articles())?;
    write_jsonl(args.out_dir.join("queries.jsonl"), &queries)?;
    println!("articles={}", stats.loaded);
    println!("dropped_empty_text={}", stats.dropped_empty_text);
    println!("paragraphs={}", paragraphs.len());
    println!("eligible_paragraphs={eligible}");
    println!("queries={}", queries.len());
    println!("skipped_unknown_citing={skipped}");
    println!("pool={}", pool.len());
    Ok(())
}

pub fn split(args: &SplitArgs) -> Result<()> {
    let queries = load_queries(&args.queries)?;
    let split = split_by_year(&queries, args.pivot);
    create_dir(&args.out_dir)?;
    for (name, part) in [("train", &split.train), ("validation", &split.validation), ("test", &split.test)] {
        write_jsonl(args.out_dir.join(format!("{name}.jsonl")), part)?;
        println!("{name}={}", part.len());
    }
    Ok(())
}

pub fn sample(args: &SampleArgs) -> Result<()> {
    let quota = Quota([args.quota[0], args.quota[1], args.quota[2]]);
    if let Some(n) = args.per_paragraph {
        if n != quota.total() {
            bail!(
                "--per-paragraph {n} does not match the quota total {} ({:?})",
                quota.total(),
                quota.0
            );
        }
    }
    let articles = articles_from(&args.articles)?;
    let paragraphs = load_paragraphs(&args.paragraphs)?;
    let training = match &args.queries {
        Some(path) => {
            let keep: HashSet<String> = load_queries(path)?.into_iter().map(|q| q.paragraph_id).collect();
            paragraphs.iter().filter(|p| keep.contains(&p.id)).cloned().collect()
        }
        None => eligible_paragraphs(&paragraphs),
    };
    let by_id: HashMap<&str, &Article> = articles.iter().map(|a| (a.id.as_str(), a)).collect();
    let lookup = citation_lookup(&articles);
    let quads = sample_corpus(&training, &paragraphs, &by_id, &lookup, args.seed, quota)?;
    write_quadruplets(&args.out, QuadrupletHeader { seed: args.seed, quota: quota.0 }, &quads)?;
    let sampled: HashSet<&str> = quads.iter().map(|q| q.paragraph_id.as_str()).collect();
    println!("paragraphs={}", training.len());
    println!("paragraphs_sampled={}", sampled.len());
    println!("quadruplets={}", quads.len());
    Ok(())
}

/// `ckpt.bin` becomes `ckpt.seed3.bin`.
fn per_seed_path(path: &Path, seed: u64) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.seed{seed}.{}", ext.to_string_lossy()),
        None => format!("{stem}.seed{seed}"),
    };
    path.with_file_name(name)
}

pub fn train(args: &TrainArgs) -> Result<()> {
    if args.seeds.is_empty() {
        bail!("--seeds needs at least one value");
    }
    let articles = articles_from(&args.articles)?;
    let train_queries = load_queries(&args.train_queries)?;
    let validation = load_queries(&args.validation_queries)?;
    let (header, quads) = read_quadruplets(&args.quadruplets)?;
    log::info!(
        "{} quadruplets sampled with seed {} and quota {:?}",
        quads.len(),
        header.seed,
        header.quota
    );
    let pool = build_candidate_pool(&articles);
    let data = TrainingData::new(&articles, &train_queries, validation, pool);
    if args.epochs == 0 {
        log::warn!("--epochs 0: training is a no-op, writing the initial checkpoint");
    }

    let multi = args.seeds.len() > 1;
    let mut best_scores = Vec::new();
    for &seed in &args.seeds {
        let mut initial = match &args.init {
            Some(path) => EncoderParams::load(path)?,
            None => EncoderParams::init(EncoderConfig {
                hash_buckets: args.encoder.hash_buckets,
                embed_dim: args.encoder.embed_dim,
                hidden_dim: args.encoder.hidden_dim,
                out_dim: args.encoder.out_dim,
                seed,
            })?,
        };
        if args.train_embeddings {
            initial.frozen.embeddings = false;
        }
        let cfg = TrainConfig {
            epochs: args.epochs,
            lr: args.lr,
            beta1: args.beta1,
            beta2: args.beta2,
            weight_decay: args.weight_decay,
            warmup_fraction: args.warmup,
            batch_size: args.batch_size,
            margin: args.margin,
            seed,
            loss: args.loss.into(),
            ..TrainConfig::default()
        };
        let outcome = run_training(&data, &quads, initial, &cfg)?;
        let out = if multi { per_seed_path(&args.out, seed) } else { args.out.clone() };
        outcome.best.save(&out)?;
        let tsv = outcome.log_tsv();
        match &args.log {
            Some(path) => {
                let path = if multi { per_seed_path(path, seed) } else { path.clone() };
                fs::write(&path, &tsv).with_context(|| format!("writing {}", path.display()))?;
            }
            None => print!("{tsv}"),
        }
        if let Some(best) = outcome.best_validation() {
            println!(
                "seed={seed} best_epoch={} val_r_precision={:.2} val_r_at_5={:.2} val_r_at_10={:.2} val_mrr={:.2}",
                outcome.best_epoch,
                best.r_precision * 100.0,
                best.r_at_5 * 100.0,
                best.r_at_10 * 100.0,
                best.mrr * 100.0
            );
            best_scores.push([best.r_precision, best.r_at_5, best.r_at_10, best.mrr]);
        }
    }
    if multi && !best_scores.is_empty() {
        let n = best_scores.len() as f64;
        let mean = |k: usize| best_scores.iter().map(|s| s[k]).sum::<f64>() / n * 100.0;
        println!(
            "mean val_r_precision={:.2} val_r_at_5={:.2} val_r_at_10={:.2} val_mrr={:.2}",
            mean(0),
            mean(1),
            mean(2),
            mean(3)
        );
    }
    Ok(())
}

pub fn index(args: &IndexArgs) -> Result<()> {
    let articles = articles_from(&args.articles)?;
    let params = EncoderParams::load(&args.checkpoint)?;
    let pool = build_candidate_pool(&articles);
    let index = build_index(&pool, &params)?;
    index.save(&args.out)?;
    println!("indexed={} dim={}", index.len(), index.dim());
    if let (Some(qpath), Some(run)) = (&args.queries, &args.run) {
        let queries = load_queries(qpath)?;
        let ranked = rank_queries(&params, &index, &queries, args.variant.into())?;
        let rows: Vec<(String, Vec<String>)> = ranked.into_iter().map(|r| (r.query_id, r.ranking)).collect();
        write_run(run, &rows)?;
        println!("ranked_queries={}", rows.len());
    }
    Ok(())
}

/// Joins run-file rows with gold queries. Rows without a gold query are an
/// error; gold queries missing from the run are skipped with a warning.
pub fn ranked_from_run(rows: Vec<(String, Vec<String>)>, gold: &[Query]) -> Result<Vec<RankedQuery>> {
    let by_id: HashMap<&str, &Query> = gold.iter().map(|q| (q.paragraph_id.as_str(), q)).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (qid, ranking) in rows {
        let Some(q) = by_id.get(qid.as_str()) else {
            bail!("run lists query {qid:?} that has no gold entry");
        };
        if !seen.insert(qid.clone()) {
            bail!("run lists query {qid:?} twice");
        }
        out.push(RankedQuery {
            query_id: qid,
            year: q.year,
            ranking,
            gold: q.relevant_ids.clone(),
        });
    }
    let missing = gold.len() - seen.len();
    if missing > 0 {
        log::warn!("{missing} gold queries have no ranking in the run file");
    }
    Ok(out)
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let gold = load_queries(&args.gold)?;
    let run = ranked_from_run(read_run(&args.run)?, &gold)?;
    let report = evaluate_run(&run)?;
    if args.json {
        println!("{}", serde_json::to_string(&report)?);
    } else {
        print!("{}", report.to_key_values());
    }
    Ok(())
}

pub fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let gold = load_queries(&args.gold)?;
    let run = ranked_from_run(read_run(&args.run)?, &gold)?;
    let query_texts: HashMap<String, String> =
        gold.iter().map(|q| (q.paragraph_id.clone(), q.text.clone())).collect();
    let articles: HashMap<String, (i32, String)> = articles_from(&args.articles)?
        .into_iter()
        .map(|a| {
            let text = a.text();
            (a.id, (a.year, text))
        })
        .collect();
    let analysis = age_analysis(&run, &query_texts, &articles);
    if args.json {
        println!("{}", serde_json::to_string(&analysis)?);
        return Ok(());
    }
    for (year, rank) in &analysis.rank_by_year {
        println!("year={year} mean_rank={rank:.2}");
    }
    println!("pairs={}", analysis.n_pairs);
    let show = |v: Option<f64>| v.map_or("undefined".to_string(), |r| format!("{r:.4}"));
    println!("pearson_gap_rank={}", show(analysis.pearson_gap_rank));
    println!("pearson_gap_jaccard={}", show(analysis.pearson_gap_jaccard));
    Ok(())
}

pub fn serve(args: &ServeArgs) -> Result<()> {
    let paths = server::ServicePaths {
        checkpoint: args.checkpoint.clone(),
        index: args.index.clone(),
        articles: args.articles.clone(),
        queries: args.queries.clone(),
    };
    let addr = format!("{}:{}", args.host, args.port);
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(server::serve(&addr, paths))
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let corpus = generate(&SyntheticConfig {
        seed: args.seed,
        ..SyntheticConfig::default()
    });
    create_dir(&args.out_dir)?;
    write_jsonl(args.out_dir.join("articles.jsonl"), &corpus.articles)?;
    write_jsonl(args.out_dir.join("paragraphs.jsonl"), &corpus.paragraphs)?;
    println!("articles={}", corpus.articles.len());
    println!("paragraphs={}", corpus.paragraphs.len());
    Ok(())
}
