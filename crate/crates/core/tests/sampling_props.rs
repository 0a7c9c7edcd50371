use std::collections::{BTreeSet, HashMap};

use pcr_core::corpus::{Article, DiscourseLabel, ParagraphRecord, Sentence};
use pcr_core::sampling::{
    build_negative_pools, read_quadruplets, sample_quadruplets, write_quadruplets, NegPool, NegativePools,
    QuadrupletHeader, Quota,
};
use proptest::prelude::*;

fn ids(max: u8, len: std::ops::Range<usize>) -> impl Strategy<Value = BTreeSet<String>> {
    prop::collection::btree_set((0..max).prop_map(|i| format!("x{i}")), len)
}

fn paragraph(id: &str, topic_cites: BTreeSet<String>, body: Vec<BTreeSet<String>>) -> ParagraphRecord {
    let mut sentences = vec![Sentence {
        text: "topic".into(),
        label: DiscourseLabel::Transition,
        cited_ids: topic_cites,
    }];
    sentences.extend(body.into_iter().map(|cited_ids| Sentence {
        text: "body".into(),
        label: DiscourseLabel::Other,
        cited_ids,
    }));
    ParagraphRecord {
        id: id.into(),
        citing_id: "c".into(),
        sentences,
    }
}

#[derive(Debug, Clone)]
struct Case {
    citing: Article,
    paragraphs: Vec<ParagraphRecord>,
    lookup: HashMap<String, BTreeSet<String>>,
}

fn case() -> impl Strategy<Value = Case> {
    let para = (ids(30, 0..2), prop::collection::vec(ids(30, 0..4), 1..3));
    (
        prop::collection::vec(para, 1..4),
        ids(30, 0..6),
        ids(30, 0..6),
        prop::collection::vec(ids(40, 0..6), 30),
    )
        .prop_map(|(paras, extra_rw, other, cites)| {
            let paragraphs: Vec<ParagraphRecord> = paras
                .into_iter()
                .enumerate()
                .map(|(i, (t, b))| paragraph(&format!("c-p{i}"), t, b))
                .collect();
            let mut rw = extra_rw;
            for p in &paragraphs {
                rw.extend(p.all_cited_ids().into_iter().map(str::to_owned));
            }
            let citing = Article {
                id: "c".into(),
                title: "t".into(),
                abstract_text: "a".into(),
                year: 2015,
                is_acl: true,
                rw_citations: rw,
                other_citations: other,
            };
            let lookup = cites
                .into_iter()
                .enumerate()
                .map(|(i, mut s)| {
                    // the citing article itself may be cited by its references' lists
                    if i % 7 == 0 {
                        s.insert("c".into());
                    }
                    (format!("x{i}"), s)
                })
                .collect();
            Case { citing, paragraphs, lookup }
        })
}

/// Pools rebuilt straight from their definitions.
fn oracle_pools(case: &Case, p: &ParagraphRecord) -> NegativePools {
    let own: BTreeSet<String> = p.sentences.iter().flat_map(|s| s.cited_ids.clone()).collect();
    let keep = |id: &String| !own.contains(id) && id != "c";
    let mut pool1: BTreeSet<String> = case.citing.rw_citations.iter().filter(|id| keep(id)).cloned().collect();
    for q in case.paragraphs.iter().filter(|q| q.id != p.id) {
        for s in &q.sentences {
            pool1.extend(s.cited_ids.iter().filter(|id| keep(id)).cloned());
        }
    }
    let pool2 = case.citing.other_citations.iter().filter(|id| keep(id)).cloned().collect();
    let mut pool3 = BTreeSet::new();
    for r in p.relevant_ids() {
        for id in case.lookup.get(&r).into_iter().flatten() {
            let cited = case.citing.rw_citations.contains(id) || case.citing.other_citations.contains(id);
            if keep(id) && !cited {
                pool3.insert(id.clone());
            }
        }
    }
    NegativePools { pool1, pool2, pool3 }
}

proptest! {
    #[test]
    fn pools_match_definition(case in case()) {
        for p in &case.paragraphs {
            let pools = build_negative_pools(p, &case.citing, &case.paragraphs, &case.lookup).unwrap();
            prop_assert_eq!(&pools, &oracle_pools(&case, p));
            for pool in NegPool::ALL {
                let set = pools.get(pool);
                prop_assert!(!set.contains("c"));
                prop_assert!(p.relevant_ids().iter().all(|r| !set.contains(r)));
            }
            prop_assert!(pools.pool3.iter().all(|id| !case.citing.rw_citations.contains(id)
                && !case.citing.other_citations.contains(id)));
        }
    }

    #[test]
    fn quadruplet_invariants(case in case(), seed in any::<u64>()) {
        for p in &case.paragraphs {
            let pools = build_negative_pools(p, &case.citing, &case.paragraphs, &case.lookup).unwrap();
            let quads = sample_quadruplets(p, &pools, seed, Quota::default());
            let relevant = p.relevant_ids();
            let union: BTreeSet<&String> = NegPool::ALL.iter().flat_map(|&k| pools.get(k)).collect();
            if relevant.len() < 2 {
                prop_assert!(quads.is_empty());
                continue;
            }
            prop_assert_eq!(quads.len(), union.len().min(10));
            let mut negs = BTreeSet::new();
            let mut counts = [0usize; 3];
            for q in &quads {
                prop_assert_eq!(&q.paragraph_id, &p.id);
                prop_assert!(q.pos1 != q.pos2);
                prop_assert!(relevant.contains(&q.pos1) && relevant.contains(&q.pos2));
                prop_assert!(!relevant.contains(&q.neg) && q.neg != "c");
                prop_assert!(pools.get(q.neg_pool).contains(&q.neg));
                prop_assert!(negs.insert(q.neg.clone()));
                counts[q.neg_pool as usize] += 1;
            }
            // a pool never exceeds its quota unless some other pool ran short
            let sizes = NegPool::ALL.map(|k| pools.get(k).len());
            if sizes[0] >= 10 && sizes[1] >= 10 && sizes[2] >= 10 {
                prop_assert_eq!(counts, [3, 3, 4]);
            }
            prop_assert_eq!(sample_quadruplets(p, &pools, seed, Quota::default()), quads);
        }
    }
}

#[test]
fn backfill_prefers_third_pool() {
    let p = paragraph("c-p0", BTreeSet::new(), vec![["a".to_string(), "b".to_string()].into()]);
    let pool = |prefix: &str, n: usize| (0..n).map(|i| format!("{prefix}{i}")).collect::<BTreeSet<_>>();
    let pools = NegativePools {
        pool1: pool("u", 5),
        pool2: BTreeSet::new(),
        pool3: pool("w", 9),
    };
    let quads = sample_quadruplets(&p, &pools, 3, Quota::default());
    let mut counts = [0usize; 3];
    for q in &quads {
        counts[q.neg_pool as usize] += 1;
    }
    assert_eq!(counts, [3, 0, 7]);
}

#[test]
fn file_round_trip_is_byte_stable() {
    let p = paragraph("c-p0", BTreeSet::new(), vec![["a".to_string(), "b".to_string(), "d".to_string()].into()]);
    let pools = NegativePools {
        pool1: ["u1", "u2", "u3", "u4"].map(String::from).into(),
        pool2: ["v1", "v2", "v3"].map(String::from).into(),
        pool3: ["w1", "w2", "w3", "w4", "w5"].map(String::from).into(),
    };
    let dir = tempfile::tempdir().unwrap();
    let header = QuadrupletHeader { seed: 7, quota: Quota::default().0 };
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    write_quadruplets(&a, header, &sample_quadruplets(&p, &pools, 7, Quota::default())).unwrap();
    write_quadruplets(&b, header, &sample_quadruplets(&p, &pools, 7, Quota::default())).unwrap();
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert!(String::from_utf8(bytes).unwrap().starts_with("{\"seed\":7,\"quota\":[3,3,4]}\n"));
    let (h, quads) = read_quadruplets(&a).unwrap();
    assert_eq!(h, header);
    assert_eq!(quads.len(), 10);
}
