//! Hard-negative pools and quadruplet sampling.
//!
//! Negatives come from three pools built per paragraph:
//!
//! * `P1` articles cited in the related-work section of the citing article,
//!   outside this paragraph;
//! * `P2` articles the citing article cites outside related work;
//! * `P3` articles cited by the paragraph's positives that the citing
//!   article does not cite at all.
//!
//! Each paragraph yields up to `quota.total()` quadruplets (3/3/4 by
//! default). A pool that runs short is backfilled from the others in the
//! order P3, P1, P2.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Article, ParagraphRecord};
use crate::encoder::fnv1a64;
use crate::error::{PcrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NegPool {
    P1,
    P2,
    P3,
}

impl NegPool {
    pub const ALL: [NegPool; 3] = [NegPool::P1, NegPool::P2, NegPool::P3];
    const BACKFILL: [NegPool; 3] = [NegPool::P3, NegPool::P1, NegPool::P2];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NegativePools {
    pub pool1: BTreeSet<String>,
    pub pool2: BTreeSet<String>,
    pub pool3: BTreeSet<String>,
}

impl NegativePools {
    pub fn get(&self, pool: NegPool) -> &BTreeSet<String> {
        match pool {
            NegPool::P1 => &self.pool1,
            NegPool::P2 => &self.pool2,
            NegPool::P3 => &self.pool3,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pool1.is_empty() && self.pool2.is_empty() && self.pool3.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quadruplet {
    pub paragraph_id: String,
    pub pos1: String,
    pub pos2: String,
    pub neg: String,
    pub neg_pool: NegPool,
}

/// Negatives per pool for one paragraph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quota(pub [usize; 3]);

impl Default for Quota {
    fn default() -> Self {
        Quota([3, 3, 4])
    }
}

impl Quota {
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

/// id -> everything that article cites.
pub fn citation_lookup(articles: &[Article]) -> HashMap<String, BTreeSet<String>> {
    articles
        .iter()
        .map(|a| {
            let cites = a.all_citations().into_iter().map(str::to_owned).collect();
            (a.id.clone(), cites)
        })
        .collect()
}

pub fn build_negative_pools(
    paragraph: &ParagraphRecord,
    citing: &Article,
    all_paragraphs: &[ParagraphRecord],
    citation_lookup: &HashMap<String, BTreeSet<String>>,
) -> Result<NegativePools> {
    if citing.id != paragraph.citing_id {
        return Err(PcrError::Precondition(format!(
            "paragraph {:?} belongs to {:?}, not {:?}",
            paragraph.id, paragraph.citing_id, citing.id
        )));
    }
    let own = paragraph.all_cited_ids();
    let excluded = |id: &str| own.contains(id) || id == citing.id;

    let mut pool1: BTreeSet<String> = citing
        .rw_citations
        .iter()
        .filter(|id| !excluded(id))
        .cloned()
        .collect();
    for other in all_paragraphs
        .iter()
        .filter(|p| p.citing_id == citing.id && p.id != paragraph.id)
    {
        pool1.extend(
            other
                .all_cited_ids()
                .into_iter()
                .filter(|id| !excluded(id))
                .map(str::to_owned),
        );
    }

    let pool2 = citing
        .other_citations
        .iter()
        .filter(|id| !excluded(id))
        .cloned()
        .collect();

    let cited_by_citing = citing.all_citations();
    let pool3 = paragraph
        .relevant_ids()
        .iter()
        .filter_map(|r| citation_lookup.get(r))
        .flatten()
        .filter(|id| !excluded(id) && !cited_by_citing.contains(id.as_str()))
        .cloned()
        .collect();

    Ok(NegativePools {
        pool1,
        pool2,
        pool3,
    })
}

/// Per-paragraph RNG stream, independent of the order paragraphs are
/// processed in.
pub fn paragraph_rng(seed: u64, paragraph_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(paragraph_id))
}

pub fn sample_quadruplets(
    paragraph: &ParagraphRecord,
    pools: &NegativePools,
    seed: u64,
    quota: Quota,
) -> Vec<Quadruplet> {
    let relevant: Vec<String> = paragraph.relevant_ids().into_iter().collect();
    if relevant.len() < 2 {
        log::debug!("paragraph {:?}: fewer than two positives, skipped", paragraph.id);
        return Vec::new();
    }
    if pools.is_empty() {
        log::info!("paragraph {:?}: all negative pools empty, skipped", paragraph.id);
        return Vec::new();
    }

    let mut rng = paragraph_rng(seed, &paragraph.id);
    let mut remaining: [Vec<&String>; 3] = NegPool::ALL.map(|p| {
        pools
            .get(p)
            .iter()
            .filter(|id| !relevant.contains(id))
            .collect()
    });
    let mut draws: Vec<(NegPool, String)> = Vec::with_capacity(quota.total());

    let mut draw = |pool: NegPool, want: usize, remaining: &mut [Vec<&String>; 3], rng: &mut ChaCha8Rng| {
        let mut got = 0;
        while got < want {
            let candidates = &mut remaining[pool.index()];
            if candidates.is_empty() {
                break;
            }
            let pick = candidates.swap_remove(rng.random_range(0..candidates.len())).clone();
            // pools may overlap; an id is used at most once per paragraph
            for other in remaining.iter_mut() {
                other.retain(|id| **id != pick);
            }
            draws.push((pool, pick));
            got += 1;
        }
        got
    };

    let mut deficit = 0;
    for pool in NegPool::ALL {
        let want = quota.0[pool.index()];
        deficit += want - draw(pool, want, &mut remaining, &mut rng);
    }
    for pool in NegPool::BACKFILL {
        if deficit == 0 {
            break;
        }
        deficit -= draw(pool, deficit, &mut remaining, &mut rng);
    }

    draws
        .into_iter()
        .map(|(neg_pool, neg)| {
            let pair = index::sample(&mut rng, relevant.len(), 2);
            let (a, b) = (pair.index(0), pair.index(1));
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            Quadruplet {
                paragraph_id: paragraph.id.clone(),
                pos1: relevant[i].clone(),
                pos2: relevant[j].clone(),
                neg,
                neg_pool,
            }
        })
        .collect()
}

/// Samples quadruplets for every paragraph in `training`, in input order.
/// Paragraphs whose citing article is unknown are skipped.
pub fn sample_corpus(
    training: &[ParagraphRecord],
    all_paragraphs: &[ParagraphRecord],
    articles: &HashMap<&str, &Article>,
    lookup: &HashMap<String, BTreeSet<String>>,
    seed: u64,
    quota: Quota,
) -> Result<Vec<Quadruplet>> {
    let mut out = Vec::new();
    for p in training {
        let Some(citing) = articles.get(p.citing_id.as_str()) else {
            log::warn!("paragraph {:?}: citing article {:?} unknown", p.id, p.citing_id);
            continue;
        };
        let pools = build_negative_pools(p, citing, all_paragraphs, lookup)?;
        out.extend(sample_quadruplets(p, &pools, seed, quota));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadrupletHeader {
    pub seed: u64,
    pub quota: [usize; 3],
}

pub fn write_quadruplets(path: impl AsRef<Path>, header: QuadrupletHeader, quads: &[Quadruplet]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| PcrError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |line: String| writeln!(w, "{line}").map_err(|e| PcrError::io(path, e));
    put(serde_json::to_string(&header).expect("header serializes"))?;
    for q in quads {
        put(serde_json::to_string(q).expect("quadruplet serializes"))?;
    }
    w.flush().map_err(|e| PcrError::io(path, e))
}

pub fn read_quadruplets(path: impl AsRef<Path>) -> Result<(QuadrupletHeader, Vec<Quadruplet>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| PcrError::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let parse_err = |line: usize, e: serde_json::Error| PcrError::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    };
    let header = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| PcrError::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| parse_err(1, e))?
        }
        None => return Err(PcrError::Empty(format!("{}: no header line", path.display()))),
    };
    let mut quads = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| PcrError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        quads.push(serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e))?);
    }
    Ok((header, quads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DiscourseLabel, Sentence};

    fn ids(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn para(id: &str, citing: &str, cited_after_topic: &[&str]) -> ParagraphRecord {
        ParagraphRecord {
            id: id.into(),
            citing_id: citing.into(),
            sentences: vec![
                Sentence {
                    text: "topic".into(),
                    label: DiscourseLabel::Transition,
                    cited_ids: BTreeSet::new(),
                },
                Sentence {
                    text: "body".into(),
                    label: DiscourseLabel::Other,
                    cited_ids: ids(cited_after_topic),
                },
            ],
        }
    }

    fn citing(rw: &[&str], other: &[&str]) -> Article {
        Article {
            id: "c".into(),
            title: "t".into(),
            abstract_text: "a".into(),
            year: 2018,
            is_acl: true,
            rw_citations: ids(rw),
            other_citations: ids(other),
        }
    }

    #[test]
    fn pool_one_is_other_paragraphs() {
        let a = para("A", "c", &["x"]);
        let b = para("B", "c", &["y"]);
        let c = citing(&["x", "y"], &[]);
        let pools = build_negative_pools(&a, &c, &[a.clone(), b], &HashMap::new()).unwrap();
        assert_eq!(pools.pool1, ids(&["y"]));
        assert!(pools.pool2.is_empty());
    }

    #[test]
    fn pool_three_is_set_difference() {
        let p = para("A", "c", &["x"]);
        let c = citing(&["x", "w"], &[]);
        let mut lookup = HashMap::new();
        lookup.insert("x".to_string(), ids(&["z", "w", "c"]));
        let pools = build_negative_pools(&p, &c, std::slice::from_ref(&p), &lookup).unwrap();
        assert_eq!(pools.pool3, ids(&["z"]));
    }

    #[test]
    fn mismatched_citing_article() {
        let p = para("A", "other", &["x"]);
        let c = citing(&["x"], &[]);
        assert!(build_negative_pools(&p, &c, &[], &HashMap::new()).is_err());
    }

    fn counts(qs: &[Quadruplet]) -> [usize; 3] {
        let mut c = [0; 3];
        for q in qs {
            c[q.neg_pool.index()] += 1;
        }
        c
    }

    #[test]
    fn full_quota() {
        let p = para("A", "c", &["a", "b"]);
        let pools = NegativePools {
            pool1: ids(&["n1", "n2", "n3"]),
            pool2: ids(&["m1", "m2", "m3"]),
            pool3: ids(&["k1", "k2", "k3", "k4"]),
        };
        let qs = sample_quadruplets(&p, &pools, 11, Quota::default());
        assert_eq!(qs.len(), 10);
        assert_eq!(counts(&qs), [3, 3, 4]);
        assert_eq!(qs, sample_quadruplets(&p, &pools, 11, Quota::default()));
        for q in &qs {
            assert_eq!((q.pos1.as_str(), q.pos2.as_str()), ("a", "b"));
        }
    }

    #[test]
    fn backfill_prefers_pool_three() {
        let p = para("A", "c", &["a", "b"]);
        let pools = NegativePools {
            pool1: ids(&["n1", "n2", "n3", "n4"]),
            pool2: BTreeSet::new(),
            pool3: (0..9).map(|i| format!("k{i}")).collect(),
        };
        let qs = sample_quadruplets(&p, &pools, 3, Quota::default());
        assert_eq!(counts(&qs), [3, 0, 7]);
    }

    #[test]
    fn backfill_falls_through_to_pool_one() {
        let p = para("A", "c", &["a", "b"]);
        let pools = NegativePools {
            pool1: (0..8).map(|i| format!("n{i}")).collect(),
            pool2: ids(&["m1"]),
            pool3: ids(&["k1", "k2"]),
        };
        let qs = sample_quadruplets(&p, &pools, 3, Quota::default());
        assert_eq!(counts(&qs), [7, 1, 2]);
        let negs: BTreeSet<&str> = qs.iter().map(|q| q.neg.as_str()).collect();
        assert_eq!(negs.len(), qs.len());
    }

    #[test]
    fn skips_single_positive_and_empty_pools() {
        let single = para("A", "c", &["a"]);
        let pools = NegativePools {
            pool1: ids(&["n"]),
            ..Default::default()
        };
        assert!(sample_quadruplets(&single, &pools, 1, Quota::default()).is_empty());
        let pair = para("B", "c", &["a", "b"]);
        assert!(sample_quadruplets(&pair, &NegativePools::default(), 1, Quota::default()).is_empty());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.jsonl");
        let q = Quadruplet {
            paragraph_id: "p".into(),
            pos1: "a".into(),
            pos2: "b".into(),
            neg: "n".into(),
            neg_pool: NegPool::P3,
        };
        let header = QuadrupletHeader { seed: 7, quota: [3, 3, 4] };
        write_quadruplets(&path, header, std::slice::from_ref(&q)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), r#"{"seed":7,"quota":[3,3,4]}"#);
        assert!(text.contains(r#""neg_pool":"P3""#));
        let (h, qs) = read_quadruplets(&path).unwrap();
        assert_eq!(h, header);
        assert_eq!(qs, vec![q]);
    }
}
