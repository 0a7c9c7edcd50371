//! Articles, discourse-labelled related-work paragraphs, query construction
//! and the year-filtered candidate pool.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PcrError, Result};

/// Separator placed between the citing article text and the topic sentence.
pub const TOPIC_SEPARATOR: &str = "[TS]";

/// Default publication year separating train / validation / test.
pub const DEFAULT_PIVOT_YEAR: i32 = 2017;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub year: i32,
    pub is_acl: bool,
    pub rw_citations: BTreeSet<String>,
    pub other_citations: BTreeSet<String>,
}

impl Article {
    /// Title and abstract joined by a single space; the text an article is
    /// embedded from.
    pub fn text(&self) -> String {
        format!("{} {}", self.title, self.abstract_text)
    }

    pub fn has_text(&self) -> bool {
        !self.title.trim().is_empty() && !self.abstract_text.trim().is_empty()
    }

    /// Everything this article cites, in any section.
    pub fn all_citations(&self) -> BTreeSet<&str> {
        self.rw_citations
            .iter()
            .chain(self.other_citations.iter())
            .map(String::as_str)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiscourseLabel {
    Transition,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub label: DiscourseLabel,
    pub cited_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParagraphRecord {
    pub id: String,
    pub citing_id: String,
    pub sentences: Vec<Sentence>,
}

impl ParagraphRecord {
    pub fn topic_sentence(&self) -> Option<&Sentence> {
        self.sentences.first()
    }

    /// Articles cited after the topic sentence, deduplicated.
    pub fn relevant_ids(&self) -> BTreeSet<String> {
        self.sentences
            .iter()
            .skip(1)
            .flat_map(|s| s.cited_ids.iter().cloned())
            .collect()
    }

    /// Every article cited anywhere in the paragraph, topic sentence included.
    pub fn all_cited_ids(&self) -> BTreeSet<&str> {
        self.sentences
            .iter()
            .flat_map(|s| s.cited_ids.iter().map(String::as_str))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub paragraph_id: String,
    pub citing_id: String,
    pub text: String,
    pub year: i32,
    pub relevant_ids: BTreeSet<String>,
}

/// Articles eligible for ranking, ordered by ascending id.
#[derive(Debug, Clone, Default)]
pub struct CandidatePool {
    articles: Vec<Article>,
    by_year: BTreeMap<i32, Vec<String>>,
    positions: HashMap<String, usize>,
}

impl CandidatePool {
    /// Builds a pool from arbitrary articles. Members without a title or
    /// abstract are skipped; a repeated id is an error.
    pub fn from_articles(articles: impl IntoIterator<Item = Article>) -> Result<Self> {
        let mut articles: Vec<Article> = articles.into_iter().filter(Article::has_text).collect();
        articles.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = articles.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(PcrError::DuplicateId(w[0].id.clone()));
        }
        let mut by_year: BTreeMap<i32, Vec<String>> = BTreeMap::new();
        let mut positions = HashMap::with_capacity(articles.len());
        for (i, a) in articles.iter().enumerate() {
            by_year.entry(a.year).or_default().push(a.id.clone());
            positions.insert(a.id.clone(), i);
        }
        Ok(CandidatePool {
            articles,
            by_year,
            positions,
        })
    }

    pub fn articles(&self) -> &[Article] {
        &self.articles
    }

    pub fn by_year(&self) -> &BTreeMap<i32, Vec<String>> {
        &self.by_year
    }

    pub fn get(&self, id: &str) -> Option<&Article> {
        self.positions.get(id).map(|&i| &self.articles[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub loaded: usize,
    pub dropped_empty_text: usize,
}

#[derive(Deserialize)]
struct ArticleRecord {
    id: String,
    title: String,
    #[serde(rename = "abstract")]
    abstract_text: String,
    year: i32,
    is_acl: bool,
    rw_citations: Vec<String>,
    other_citations: Vec<String>,
}

impl From<ArticleRecord> for Article {
    fn from(r: ArticleRecord) -> Self {
        let strip_self = |ids: Vec<String>| -> BTreeSet<String> {
            ids.into_iter().filter(|c| *c != r.id).collect()
        };
        let rw_citations = strip_self(r.rw_citations);
        let other_citations = strip_self(r.other_citations);
        Article {
            id: r.id,
            title: r.title,
            abstract_text: r.abstract_text,
            year: r.year,
            is_acl: r.is_acl,
            rw_citations,
            other_citations,
        }
    }
}

fn read_jsonl<T, F>(path: &Path, mut each: F) -> Result<()>
where
    T: for<'de> Deserialize<'de>,
    F: FnMut(usize, T) -> Result<()>,
{
    let file = File::open(path).map_err(|e| PcrError::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| PcrError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| PcrError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        each(line_no, record)?;
    }
    Ok(())
}

/// Reads the article JSONL file. Records with an empty title or abstract
/// are dropped and counted.
pub fn load_articles(path: impl AsRef<Path>) -> Result<(Vec<Article>, LoadStats)> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut articles = Vec::new();
    let mut stats = LoadStats::default();
    read_jsonl(path, |_, record: ArticleRecord| {
        if !seen.insert(record.id.clone()) {
            return Err(PcrError::DuplicateId(record.id));
        }
        let article = Article::from(record);
        if article.has_text() {
            articles.push(article);
        } else {
            stats.dropped_empty_text += 1;
        }
        Ok(())
    })?;
    stats.loaded = articles.len();
    if stats.dropped_empty_text > 0 {
        log::info!(
            "{}: dropped {} articles with empty title or abstract",
            path.display(),
            stats.dropped_empty_text
        );
    }
    Ok((articles, stats))
}

pub fn load_paragraphs(path: impl AsRef<Path>) -> Result<Vec<ParagraphRecord>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    read_jsonl(path, |line, p: ParagraphRecord| {
        if p.sentences.is_empty() {
            return Err(PcrError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("paragraph {:?} has no sentences", p.id),
            });
        }
        out.push(p);
        Ok(())
    })?;
    Ok(out)
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let mut out = Vec::new();
    read_jsonl(path.as_ref(), |_, q: Query| {
        out.push(q);
        Ok(())
    })?;
    Ok(out)
}

/// Writes one JSON object per line.
pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| PcrError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("corpus records serialize");
        writeln!(w, "{line}").map_err(|e| PcrError::io(path, e))?;
    }
    w.flush().map_err(|e| PcrError::io(path, e))
}

pub fn is_eligible(paragraph: &ParagraphRecord) -> bool {
    match paragraph.sentences.split_first() {
        Some((first, rest)) => {
            first.label == DiscourseLabel::Transition
                && rest.iter().any(|s| !s.cited_ids.is_empty())
        }
        None => false,
    }
}

/// Paragraphs that open with a Transition sentence and cite at least one
/// article after it.
pub fn eligible_paragraphs(paragraphs: &[ParagraphRecord]) -> Vec<ParagraphRecord> {
    paragraphs.iter().filter(|p| is_eligible(p)).cloned().collect()
}

pub fn build_query(paragraph: &ParagraphRecord, article: &Article) -> Result<Query> {
    if article.id != paragraph.citing_id {
        return Err(PcrError::Precondition(format!(
            "paragraph {:?} is cited from {:?}, not {:?}",
            paragraph.id, paragraph.citing_id, article.id
        )));
    }
    if !article.has_text() {
        return Err(PcrError::Precondition(format!(
            "citing article {:?} has an empty title or abstract",
            article.id
        )));
    }
    if !is_eligible(paragraph) {
        return Err(PcrError::Precondition(format!(
            "paragraph {:?} does not open with a topic sentence followed by citations",
            paragraph.id
        )));
    }
    let topic = &paragraph.sentences[0].text;
    if topic.trim().is_empty() {
        return Err(PcrError::Precondition(format!(
            "paragraph {:?} has an empty topic sentence",
            paragraph.id
        )));
    }
    Ok(Query {
        paragraph_id: paragraph.id.clone(),
        citing_id: article.id.clone(),
        text: query_text(&article.title, &article.abstract_text, topic),
        year: article.year,
        relevant_ids: paragraph.relevant_ids(),
    })
}

/// `title abstract [TS] topic`.
pub fn query_text(title: &str, abstract_text: &str, topic_sentence: &str) -> String {
    format!("{title} {abstract_text} {TOPIC_SEPARATOR} {topic_sentence}")
}

/// Builds queries for every eligible paragraph whose citing article is
/// known. Paragraphs with unknown citing articles are counted and skipped.
pub fn build_queries(
    paragraphs: &[ParagraphRecord],
    articles: &HashMap<&str, &Article>,
) -> (Vec<Query>, usize) {
    let mut skipped = 0;
    let mut out = Vec::new();
    for p in paragraphs.iter().filter(|p| is_eligible(p)) {
        match articles
            .get(p.citing_id.as_str())
            .map(|a| build_query(p, a))
        {
            Some(Ok(q)) => out.push(q),
            _ => skipped += 1,
        }
    }
    (out, skipped)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct YearSplit {
    pub train: Vec<Query>,
    pub validation: Vec<Query>,
    pub test: Vec<Query>,
}

pub fn split_by_year(queries: &[Query], pivot: i32) -> YearSplit {
    let mut split = YearSplit::default();
    for q in queries {
        let bucket = match q.year.cmp(&pivot) {
            std::cmp::Ordering::Less => &mut split.train,
            std::cmp::Ordering::Equal => &mut split.validation,
            std::cmp::Ordering::Greater => &mut split.test,
        };
        bucket.push(q.clone());
    }
    split
}

/// All ACL articles plus everything an ACL article cites, minus articles
/// without a title or abstract.
pub fn build_candidate_pool(articles: &[Article]) -> CandidatePool {
    let mut keep: HashSet<&str> = HashSet::new();
    for a in articles.iter().filter(|a| a.is_acl) {
        keep.insert(&a.id);
        keep.extend(a.all_citations());
    }
    let mut seen = HashSet::new();
    let members = articles
        .iter()
        .filter(|a| a.has_text() && keep.contains(a.id.as_str()) && seen.insert(a.id.as_str()))
        .cloned();
    CandidatePool::from_articles(members).expect("duplicates removed above")
}

/// Ids of pool articles strictly older than the query, excluding the citing
/// article, in ascending id order.
pub fn filter_pool_for_query(pool: &CandidatePool, query: &Query) -> Vec<String> {
    pool.articles()
        .iter()
        .filter(|a| a.year < query.year && a.id != query.citing_id)
        .map(|a| a.id.clone())
        .collect()
}
