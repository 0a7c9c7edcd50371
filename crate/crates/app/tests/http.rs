use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use pcr_app::server::{router, ServiceState, SharedState};
use pcr_core::corpus::{build_candidate_pool, build_queries, query_text, Article};
use pcr_core::evaluate::{jaccard, query_token_set, token_set, year_gap};
use pcr_core::index::build_index;
use pcr_core::synthetic::{generate, SyntheticConfig};
use pcr_core::{EncoderConfig, EncoderParams};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    state: SharedState,
    articles: Vec<Article>,
    params: EncoderParams,
}

fn fixture() -> Fixture {
    let corpus = generate(&SyntheticConfig {
        clusters: 3,
        subtopics_per_cluster: 3,
        articles_per_subtopic: 5,
        citing_train: 6,
        citing_validation: 2,
        citing_test: 3,
        ..Default::default()
    });
    let params = EncoderParams::init(EncoderConfig {
        hash_buckets: 512,
        embed_dim: 8,
        hidden_dim: 8,
        out_dim: 4,
        seed: 3,
    })
    .unwrap();
    let pool = build_candidate_pool(&corpus.articles);
    let index = build_index(&pool, &params).unwrap();
    let by_id = corpus.articles.iter().map(|a| (a.id.as_str(), a)).collect();
    let (queries, _) = build_queries(&corpus.paragraphs, &by_id);
    let state = ServiceState::new(params.clone(), index, corpus.articles.clone(), queries, "abc123".into()).unwrap();
    let shared: SharedState = Arc::new(OnceLock::new());
    let _ = shared.set(state);
    Fixture {
        state: shared,
        articles: corpus.articles,
        params,
    }
}

async fn call(state: &SharedState, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(match body {
            Some(v) => Body::from(v.to_string()),
            None => Body::empty(),
        })
        .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn ids(v: &Value) -> Vec<String> {
    v["results"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["article_id"].as_str().unwrap().to_string())
        .collect()
}

fn request(a: &Article, topic: &str, k: usize) -> Value {
    json!({ "title": a.title, "abstract": a.abstract_text, "topic_sentence": topic, "k": k })
}

#[tokio::test]
async fn unloaded_service_answers_503() {
    let empty: SharedState = Arc::new(OnceLock::new());
    let (status, body) = call(&empty, "GET", "/api/v1/health", None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"]["code"], "unavailable");
    let (status, _) = call(&empty, "POST", "/api/v1/recommend", Some(json!({}))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn health_reports_model_and_pool() {
    let f = fixture();
    let (status, body) = call(&f.state, "GET", "/api/v1/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({ "status": "ok", "model_version": "abc123", "pool_size": f.articles.len() }));
}

#[tokio::test]
async fn recommend_ranks_and_prefixes() {
    let f = fixture();
    let a = &f.articles[0];
    let (status, body) = call(&f.state, "POST", "/api/v1/recommend", Some(request(a, "parsing", 5))).await;
    assert_eq!(status, StatusCode::OK);
    let results = body["results"].as_array().unwrap();
    assert_eq!(results.len(), 5);
    for (i, r) in results.iter().enumerate() {
        assert_eq!(r["rank"], i + 1);
    }
    let d: Vec<f64> = results.iter().map(|r| r["distance"].as_f64().unwrap()).collect();
    assert!(d.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(body["model_version"], "abc123");

    let (_, six) = call(&f.state, "POST", "/api/v1/recommend", Some(request(a, "parsing", 6))).await;
    assert_eq!(ids(&six)[..5], ids(&body)[..]);

    let (_, all) = call(&f.state, "POST", "/api/v1/recommend", Some(request(a, "parsing", 10_000))).await;
    assert_eq!(ids(&all).len(), f.articles.len());

    let (_, mut again) = call(&f.state, "POST", "/api/v1/recommend", Some(request(a, "parsing", 5))).await;
    let mut first = body.clone();
    first["latency_ms"] = Value::Null;
    again["latency_ms"] = Value::Null;
    assert_eq!(first, again);
}

#[tokio::test]
async fn recommend_applies_year_filter() {
    let f = fixture();
    let mut req = request(&f.articles[1], "topic words", 10_000);
    req["max_year"] = json!(2010);
    let (_, body) = call(&f.state, "POST", "/api/v1/recommend", Some(req)).await;
    let results = body["results"].as_array().unwrap();
    assert!(!results.is_empty());
    assert!(results.iter().all(|r| r["year"].as_i64().unwrap() < 2010));
    assert_eq!(results.len(), f.articles.iter().filter(|a| a.year < 2010).count());
}

#[tokio::test]
async fn top_hit_is_brute_force_nearest() {
    let f = fixture();
    for a in f.articles.iter().step_by(17) {
        let topic = a.title.split(' ').next().unwrap();
        let (_, body) = call(&f.state, "POST", "/api/v1/recommend", Some(request(a, topic, 1))).await;
        let q = f.params.encode(&query_text(&a.title, &a.abstract_text, topic)).unwrap();
        let nearest = f
            .articles
            .iter()
            .map(|b| (q.l2_distance(&f.params.encode_article(b).unwrap()), &b.id))
            .min_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(y.1)))
            .unwrap();
        assert_eq!(ids(&body), std::slice::from_ref(nearest.1));
    }
}

#[tokio::test]
async fn invalid_requests_are_structured_400s() {
    let f = fixture();
    let a = &f.articles[0];
    let cases = [
        request(a, "   ", 5),
        json!({ "title": "", "abstract": "", "topic_sentence": "x" }),
        request(a, "x", 0),
        json!({ "title": 3 }),
    ];
    for body in cases {
        let (status, resp) = call(&f.state, "POST", "/api/v1/recommend", Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert_eq!(resp["error"]["code"], "invalid_request");
        assert!(resp["error"]["message"].as_str().unwrap().len() > 3);
    }
}

#[tokio::test]
async fn explain_matches_direct_computation() {
    let f = fixture();
    let query = &f.articles[3];
    let mut req = request(query, "a topic sentence", 10_000);
    req["max_year"] = json!(query.year);
    let (_, ranking) = call(&f.state, "POST", "/api/v1/recommend", Some(req.clone())).await;
    let ranked = ids(&ranking);
    let text = query_text(&query.title, &query.abstract_text, "a topic sentence");
    for cand in f.articles.iter().step_by(11) {
        let mut ex = req.clone();
        ex["candidate_id"] = json!(cand.id);
        let (status, body) = call(&f.state, "POST", "/api/v1/explain", Some(ex)).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body["delta_t"], year_gap(query.year, cand.year));
        let j = jaccard(&query_token_set(&text), &token_set(&cand.text())).unwrap();
        assert_eq!(body["jaccard"].as_f64().unwrap(), j);
        let outside = cand.year >= query.year;
        assert_eq!(body["outside_year_filter"], outside);
        if outside {
            assert!(body["rank"].is_null());
        } else {
            let pos = ranked.iter().position(|id| *id == cand.id).unwrap();
            assert_eq!(body["rank"], pos + 1);
            assert_eq!(ranking["results"][pos]["distance"], body["distance"]);
        }
    }
}

#[tokio::test]
async fn explain_identity_and_errors() {
    let f = fixture();
    let a = &f.articles[5];
    let topic = a.title.split(' ').next().unwrap();
    let mut req = request(a, topic, 10);
    req["candidate_id"] = json!(a.id);
    let (_, body) = call(&f.state, "POST", "/api/v1/explain", Some(req.clone())).await;
    assert_eq!(body["jaccard"].as_f64().unwrap(), 1.0);

    req["candidate_id"] = json!("nope");
    let (status, body) = call(&f.state, "POST", "/api/v1/explain", Some(req)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "not_found");

    let (status, _) = call(&f.state, "POST", "/api/v1/explain", Some(json!({ "query_id": "zz", "candidate_id": a.id }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn explain_by_query_id_excludes_citing_article() {
    let f = fixture();
    let citing = f.articles.iter().find(|a| a.id == "a0000").unwrap();
    let (status, body) = call(
        &f.state,
        "POST",
        "/api/v1/explain",
        Some(json!({ "query_id": "a0000-p0", "candidate_id": citing.id })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["outside_year_filter"], true);
    assert_eq!(body["query_year"], citing.year);
}

#[tokio::test]
async fn article_lookup() {
    let f = fixture();
    let a = &f.articles[2];
    let (status, body) = call(&f.state, "GET", &format!("/api/v1/article/{}", a.id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["title"], a.title.as_str());
    assert_eq!(body["abstract"], a.abstract_text.as_str());
    let (status, _) = call(&f.state, "GET", "/api/v1/article/missing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, body) = call(&f.state, "GET", "/api/v2/whatever", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "not_found");
}
