//! HTTP face of a rule set: the stand-in for the real validation service the
//! pipeline queries. Stateless JSON API over an immutable rule set.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use ruletwin::error::{Error, Result};
use ruletwin::pipeline::{
    WireBatchRequest, WireBatchResponse, WireRuleCode, WireValidateRequest, WireValidateResponse,
    WireVersion,
};
use ruletwin::rules::RuleSet;

/// Serve `rules` on 127.0.0.1:`port` until interrupted.
pub fn serve(rules: RuleSet, port: u16) -> Result<()> {
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Query(format!("cannot start async runtime: {e}")))?;
    runtime.block_on(async move {
        let app = router(rules);
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
            .await
            .map_err(|e| Error::Query(format!("cannot bind 127.0.0.1:{port}: {e}")))?;
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| Error::Query(format!("server stopped: {e}")))
    })
}

pub fn router(rules: RuleSet) -> Router {
    let shared = Arc::new(rules);
    Router::new()
        .route("/version", get(version))
        .route("/validate", post(validate))
        .route("/validate-batch", post(validate_batch))
        .with_state(shared)
}

async fn version(State(rules): State<Arc<RuleSet>>) -> Json<WireVersion> {
    Json(WireVersion {
        version: rules.version.clone(),
        rule_ids: rules.rule_ids(),
    })
}

/// Any malformed or mistyped request body is a 400 with a JSON error body;
/// the service never crashes on bad input.
fn bad_request(message: String) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({ "error": message }))).into_response()
}

fn rule_codes(rules: &RuleSet, codes: Vec<ruletwin::rules::ResultCode>) -> Vec<WireRuleCode> {
    rules
        .rule_ids()
        .into_iter()
        .zip(codes)
        .map(|(rule_id, code)| WireRuleCode { rule_id, code })
        .collect()
}

async fn validate(
    State(rules): State<Arc<RuleSet>>,
    body: std::result::Result<Json<WireValidateRequest>, JsonRejection>,
) -> Response {
    let Json(request) = match body {
        Ok(b) => b,
        Err(rejection) => return bad_request(rejection.body_text()),
    };
    match rules.validate_message(&request.message) {
        Ok(report) => Json(WireValidateResponse {
            results: rule_codes(&rules, report.codes),
        })
        .into_response(),
        Err(err) => bad_request(err.to_string()),
    }
}

async fn validate_batch(
    State(rules): State<Arc<RuleSet>>,
    body: std::result::Result<Json<WireBatchRequest>, JsonRejection>,
) -> Response {
    let Json(request) = match body {
        Ok(b) => b,
        Err(rejection) => return bad_request(rejection.body_text()),
    };
    match rules.validate_batch(&request.messages) {
        Ok(reports) => Json(WireBatchResponse {
            results: reports
                .into_iter()
                .map(|r| rule_codes(&rules, r.codes))
                .collect(),
        })
        .into_response(),
        Err(err) => bad_request(err.to_string()),
    }
}
