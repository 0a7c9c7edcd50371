//! Seeded generator for clustered toy corpora.
//!
//! Articles belong to topic clusters, each split into subtopics with their
//! own vocabulary. Every text is padded with a burst of a few generic words
//! repeated many times, so raw token overlap is dominated by which generic
//! words a text happened to pick rather than by its topic. Citing articles carry two related-work paragraphs, each about
//! one subtopic of the article's cluster, whose topic sentences use that
//! subtopic's terms and whose body sentences cite older same-subtopic
//! articles.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::collections::{HashMap, HashSet};

use crate::corpus::{
    build_candidate_pool, build_queries, split_by_year, Article, CandidatePool, DiscourseLabel, ParagraphRecord,
    Query, Sentence, YearSplit,
};
use crate::encoder::EncoderParams;
use crate::error::Result;
use crate::evaluate::MetricReport;
use crate::index::build_index;
use crate::pipeline::{evaluate_queries, QueryVariant};
use crate::sampling::{citation_lookup, sample_corpus, Quadruplet, Quota};
use crate::trainer::TrainingData;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub clusters: usize,
    pub subtopics_per_cluster: usize,
    pub articles_per_subtopic: usize,
    /// Citing articles per split; each contributes two paragraphs.
    pub citing_train: usize,
    pub citing_validation: usize,
    pub citing_test: usize,
    pub pivot_year: i32,
    pub subtopic_vocab: usize,
    pub cluster_vocab: usize,
    pub generic_vocab: usize,
    /// Distinct generic words repeated within one text.
    pub burst_words: usize,
    /// Token counts in an abstract by source.
    pub abstract_subtopic_tokens: usize,
    pub abstract_cluster_tokens: usize,
    pub abstract_generic_tokens: usize,
    pub topic_subtopic_tokens: usize,
    pub topic_generic_tokens: usize,
    /// Positives per paragraph (inclusive range).
    pub cites_per_paragraph: (usize, usize),
    /// Related-work citations a citing article has beyond its paragraphs.
    pub extra_rw_citations: usize,
    /// Citations outside related work, for every article.
    pub other_citations: usize,
    /// Related-work citations of non-citing articles.
    pub background_citations: usize,
}

impl Default for SyntheticConfig {
    /// 500 articles in 10 clusters; 200 / 30 / 50 train / validation /
    /// test paragraphs.
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            clusters: 10,
            subtopics_per_cluster: 5,
            articles_per_subtopic: 10,
            citing_train: 100,
            citing_validation: 15,
            citing_test: 25,
            pivot_year: 2017,
            subtopic_vocab: 12,
            cluster_vocab: 20,
            generic_vocab: 8,
            burst_words: 2,
            abstract_subtopic_tokens: 6,
            abstract_cluster_tokens: 6,
            abstract_generic_tokens: 40,
            topic_subtopic_tokens: 4,
            topic_generic_tokens: 6,
            cites_per_paragraph: (2, 4),
            extra_rw_citations: 2,
            other_citations: 4,
            background_citations: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub articles: Vec<Article>,
    pub paragraphs: Vec<ParagraphRecord>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Background,
    Train,
    Validation,
    Test,
}

struct Vocab {
    generic: Vec<String>,
}

fn subtopic_word(cluster: usize, sub: usize, k: usize) -> String {
    format!("c{cluster}s{sub}w{k}")
}

fn cluster_word(cluster: usize, k: usize) -> String {
    format!("c{cluster}w{k}")
}

struct Writer<'a> {
    cfg: &'a SyntheticConfig,
    vocab: Vocab,
}

impl Writer<'_> {
    fn words(&self, rng: &mut ChaCha8Rng, cluster: usize, subs: &[usize], n_sub: usize, n_cluster: usize, n_generic: usize) -> String {
        let cfg = self.cfg;
        let mut words: Vec<String> = Vec::with_capacity(n_sub + n_cluster + n_generic);
        for i in 0..n_sub {
            let sub = subs[i % subs.len()];
            words.push(subtopic_word(cluster, sub, rng.random_range(0..cfg.subtopic_vocab)));
        }
        for _ in 0..n_cluster {
            words.push(cluster_word(cluster, rng.random_range(0..cfg.cluster_vocab)));
        }
        let burst: Vec<&String> = self
            .vocab
            .generic
            .choose_multiple(rng, cfg.burst_words)
            .collect();
        for _ in 0..n_generic {
            words.push(burst[rng.random_range(0..burst.len())].clone());
        }
        words.shuffle(rng);
        words.join(" ")
    }
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let writer = Writer {
        cfg,
        vocab: Vocab {
            generic: (0..cfg.generic_vocab).map(|k| format!("g{k}")).collect(),
        },
    };
    let per_cluster = cfg.subtopics_per_cluster * cfg.articles_per_subtopic;
    let n = cfg.clusters * per_cluster;
    let n_citing = cfg.citing_train + cfg.citing_validation + cfg.citing_test;
    assert!(n_citing <= n, "more citing articles than articles");

    // Spread citing roles round-robin over clusters, and over subtopics
    // within a cluster.
    let mut roles = vec![Role::Background; n];
    let mut slots: Vec<usize> = (0..per_cluster)
        .flat_map(|j| (0..cfg.clusters).map(move |c| c * per_cluster + j))
        .collect();
    slots.sort_by_key(|&i| {
        let j = i % per_cluster;
        // interleave subtopics: article j of a cluster has subtopic j / articles_per_subtopic
        let sub = j / cfg.articles_per_subtopic;
        let rank = j % cfg.articles_per_subtopic;
        (rank, sub, i / per_cluster)
    });
    let mut it = slots.into_iter();
    for (role, count) in [
        (Role::Test, cfg.citing_test),
        (Role::Validation, cfg.citing_validation),
        (Role::Train, cfg.citing_train),
    ] {
        for i in it.by_ref().take(count) {
            roles[i] = role;
        }
    }

    let pivot = cfg.pivot_year;
    let years: Vec<i32> = roles
        .iter()
        .map(|r| match r {
            Role::Background => rng.random_range(pivot - 17..=pivot - 5),
            Role::Train => rng.random_range(pivot - 6..pivot),
            Role::Validation => pivot,
            Role::Test => rng.random_range(pivot + 1..=pivot + 3),
        })
        .collect();
    let cluster_of = |i: usize| i / per_cluster;
    let sub_of = |i: usize| (i % per_cluster) / cfg.articles_per_subtopic;
    let id_of = |i: usize| format!("a{i:04}");

    // Paragraph subtopics and positives.
    struct Para {
        citing: usize,
        sub: usize,
        cited: Vec<usize>,
    }
    let mut paras: Vec<Para> = Vec::new();
    for i in (0..n).filter(|&i| roles[i] != Role::Background) {
        let cluster = cluster_of(i);
        let own = sub_of(i);
        let mut other = rng.random_range(0..cfg.subtopics_per_cluster - 1);
        if other >= own {
            other += 1;
        }
        for sub in [own, other] {
            let older: Vec<usize> = (0..cfg.articles_per_subtopic)
                .map(|k| cluster * per_cluster + sub * cfg.articles_per_subtopic + k)
                .filter(|&j| j != i && years[j] < years[i])
                .collect();
            let want = rng.random_range(cfg.cites_per_paragraph.0..=cfg.cites_per_paragraph.1);
            let mut cited: Vec<usize> = older.choose_multiple(&mut rng, want).copied().collect();
            if cited.is_empty() {
                // fall back to any older article of the cluster
                let fallback: Vec<usize> = (cluster * per_cluster..(cluster + 1) * per_cluster)
                    .filter(|&j| j != i && years[j] < years[i])
                    .collect();
                cited.extend(fallback.choose(&mut rng));
            }
            cited.sort_unstable();
            paras.push(Para { citing: i, sub, cited });
        }
    }

    let mut articles = Vec::with_capacity(n);
    for i in 0..n {
        let cluster = cluster_of(i);
        let own = sub_of(i);
        let my_paras: Vec<&Para> = paras.iter().filter(|p| p.citing == i).collect();
        let subs: Vec<usize> = if my_paras.is_empty() {
            vec![own]
        } else {
            my_paras.iter().map(|p| p.sub).collect()
        };
        let title = writer.words(&mut rng, cluster, &subs[..1], 2, 1, 2);
        let abstract_text = writer.words(
            &mut rng,
            cluster,
            &subs,
            cfg.abstract_subtopic_tokens,
            cfg.abstract_cluster_tokens,
            cfg.abstract_generic_tokens,
        );

        let older = |pred: &dyn Fn(usize) -> bool| -> Vec<usize> {
            (0..n).filter(|&j| j != i && years[j] < years[i] && pred(j)).collect()
        };
        let in_paragraphs: BTreeSet<usize> = my_paras.iter().flat_map(|p| p.cited.iter().copied()).collect();
        let mut rw: BTreeSet<usize> = in_paragraphs.clone();
        let rw_extra = if my_paras.is_empty() {
            cfg.background_citations
        } else {
            cfg.extra_rw_citations
        };
        let same_cluster = older(&|j| cluster_of(j) == cluster && !in_paragraphs.contains(&j));
        rw.extend(same_cluster.choose_multiple(&mut rng, rw_extra));
        let anywhere = older(&|j| !rw.contains(&j));
        let other: BTreeSet<usize> = anywhere.choose_multiple(&mut rng, cfg.other_citations).copied().collect();

        articles.push(Article {
            id: id_of(i),
            title,
            abstract_text,
            year: years[i],
            is_acl: true,
            rw_citations: rw.into_iter().map(id_of).collect(),
            other_citations: other.into_iter().map(id_of).collect(),
        });
    }

    let mut paragraphs = Vec::with_capacity(paras.len());
    let mut counter = vec![0usize; n];
    for p in &paras {
        let cluster = cluster_of(p.citing);
        let k = counter[p.citing];
        counter[p.citing] += 1;
        let topic = writer.words(&mut rng, cluster, &[p.sub], cfg.topic_subtopic_tokens, 0, cfg.topic_generic_tokens);
        let mut sentences = vec![Sentence {
            text: topic,
            label: DiscourseLabel::Transition,
            cited_ids: BTreeSet::new(),
        }];
        let split = p.cited.len().div_ceil(2);
        for chunk in p.cited.chunks(split.max(1)) {
            sentences.push(Sentence {
                text: writer.words(&mut rng, cluster, &[p.sub], 2, 1, 6),
                label: DiscourseLabel::Other,
                cited_ids: chunk.iter().map(|&j| id_of(j)).collect(),
            });
        }
        paragraphs.push(ParagraphRecord {
            id: format!("{}-p{k}", id_of(p.citing)),
            citing_id: id_of(p.citing),
            sentences,
        });
    }

    SyntheticCorpus { articles, paragraphs }
}

/// A generated corpus prepared for training and evaluation: queries split
/// by year, the candidate pool and sampled training quadruplets.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub corpus: SyntheticCorpus,
    pub split: YearSplit,
    pub pool: CandidatePool,
    pub quadruplets: Vec<Quadruplet>,
}

impl Benchmark {
    pub fn build(cfg: &SyntheticConfig, sample_seed: u64) -> Result<Self> {
        let corpus = generate(cfg);
        let by_id: HashMap<&str, &Article> = corpus.articles.iter().map(|a| (a.id.as_str(), a)).collect();
        let (queries, _) = build_queries(&corpus.paragraphs, &by_id);
        let split = split_by_year(&queries, cfg.pivot_year);
        let pool = build_candidate_pool(&corpus.articles);
        let train_ids: HashSet<&str> = split.train.iter().map(|q| q.paragraph_id.as_str()).collect();
        let training: Vec<ParagraphRecord> = corpus
            .paragraphs
            .iter()
            .filter(|p| train_ids.contains(p.id.as_str()))
            .cloned()
            .collect();
        let lookup = citation_lookup(&corpus.articles);
        let quadruplets = sample_corpus(&training, &corpus.paragraphs, &by_id, &lookup, sample_seed, Quota::default())?;
        Ok(Benchmark {
            corpus,
            split,
            pool,
            quadruplets,
        })
    }

    pub fn training_data(&self) -> TrainingData {
        TrainingData::new(
            &self.corpus.articles,
            &self.split.train,
            self.split.validation.clone(),
            self.pool.clone(),
        )
    }

    pub fn evaluate(&self, params: &EncoderParams, queries: &[Query], variant: QueryVariant) -> Result<MetricReport> {
        let index = build_index(&self.pool, params)?;
        evaluate_queries(params, &index, queries, variant)
    }
}
