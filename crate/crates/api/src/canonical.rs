//! Canonical response encoding: compact UTF-8 JSON, struct fields in
//! declaration order, map keys sorted, floats in shortest round-trip form,
//! one trailing newline.

use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use serde::Serialize;

pub const JSON_CONTENT_TYPE: &str = "application/json";

pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec(value).expect("response types serialize");
    out.push(b'\n');
    out
}

/// A canonical JSON response.
pub struct Canonical<T>(pub StatusCode, pub T);

impl<T: Serialize> IntoResponse for Canonical<T> {
    fn into_response(self) -> Response {
        let mut res = (self.0, canonical_json(&self.1)).into_response();
        res.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static(JSON_CONTENT_TYPE));
        res
    }
}

pub fn ok<T: Serialize>(value: T) -> Canonical<T> {
    Canonical(StatusCode::OK, value)
}
