//! Glue between the encoder, the index and the metrics: embeds queries and
//! turns them into year-filtered full rankings.

use crate::corpus::{Query, TOPIC_SEPARATOR};
use crate::encoder::{Embedding, EncoderParams};
use crate::error::Result;
use crate::evaluate::{evaluate_run, MetricReport, RankedQuery};
use crate::index::VectorIndex;

/// Which part of a query is embedded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QueryVariant {
    /// Title, abstract and topic sentence.
    #[default]
    WithTopic,
    /// Title and abstract only.
    TitleAbstract,
}

/// Query text with the separator and topic sentence removed.
pub fn title_abstract_part(query_text: &str) -> &str {
    query_text
        .split_once(&format!(" {TOPIC_SEPARATOR} "))
        .map_or(query_text, |(head, _)| head)
}

pub fn embed_query(params: &EncoderParams, query: &Query, variant: QueryVariant) -> Result<Embedding> {
    match variant {
        QueryVariant::WithTopic => params.encode_query(query),
        QueryVariant::TitleAbstract => params.encode(title_abstract_part(&query.text)),
    }
}

/// Full ranking of the pool articles strictly older than the query,
/// excluding the citing article.
pub fn rank_query(
    params: &EncoderParams,
    index: &VectorIndex,
    query: &Query,
    variant: QueryVariant,
) -> Result<RankedQuery> {
    let e = embed_query(params, query, variant)?;
    let ranking = index
        .full_ranking(&e, Some(query.year))?
        .into_iter()
        .filter(|h| h.id != query.citing_id)
        .map(|h| h.id)
        .collect();
    Ok(RankedQuery {
        query_id: query.paragraph_id.clone(),
        year: query.year,
        ranking,
        gold: query.relevant_ids.clone(),
    })
}

pub fn rank_queries(
    params: &EncoderParams,
    index: &VectorIndex,
    queries: &[Query],
    variant: QueryVariant,
) -> Result<Vec<RankedQuery>> {
    queries
        .iter()
        .map(|q| rank_query(params, index, q, variant))
        .collect()
}

pub fn evaluate_queries(
    params: &EncoderParams,
    index: &VectorIndex,
    queries: &[Query],
    variant: QueryVariant,
) -> Result<MetricReport> {
    evaluate_run(&rank_queries(params, index, queries, variant)?)
}
