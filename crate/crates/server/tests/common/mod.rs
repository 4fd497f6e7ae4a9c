#![allow(dead_code)]

use reqwest::{Client, Method, StatusCode};
use serde_json::Value;
use std::sync::Arc;
use std::time::Duration;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use mm_core::Studio;
use mm_server::{app, serve_on, ServerConfig};

/// A server on an ephemeral loopback port.
pub struct TestServer {
    pub base: String,
    pub client: Client,
    stop: Option<oneshot::Sender<()>>,
    handle: JoinHandle<std::io::Result<()>>,
}

impl TestServer {
    pub async fn start(studio: Arc<Studio>) -> Self {
        Self::start_with_drain(studio, Duration::from_secs(5)).await
    }

    pub async fn start_with_drain(studio: Arc<Studio>, drain: Duration) -> Self {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (stop, stopped) = oneshot::channel::<()>();
        let router = app(studio, &ServerConfig::default());
        let handle = tokio::spawn(serve_on(
            listener,
            router,
            async {
                let _ = stopped.await;
            },
            drain,
        ));
        Self {
            base,
            client: Client::new(),
            stop: Some(stop),
            handle,
        }
    }

    pub async fn call(&self, method: Method, path: &str, body: Option<Value>) -> (StatusCode, Value) {
        let mut request = self.client.request(method, format!("{}{path}", self.base));
        if let Some(body) = body {
            request = request.json(&body);
        }
        let response = request.send().await.unwrap();
        let status = response.status();
        let bytes = response.bytes().await.unwrap();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or(Value::Null)
        };
        (status, value)
    }

    pub async fn get(&self, path: &str) -> (StatusCode, Value) {
        self.call(Method::GET, path, None).await
    }

    pub async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, path, Some(body)).await
    }

    pub async fn put(&self, path: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::PUT, path, Some(body)).await
    }

    pub async fn patch(&self, path: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::PATCH, path, Some(body)).await
    }

    /// Signals shutdown without waiting.
    pub fn signal_stop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
    }

    /// Signals shutdown and waits for the server task to end.
    pub async fn stop(mut self) -> std::io::Result<()> {
        self.signal_stop();
        self.handle.await.unwrap()
    }
}

pub fn id(value: &Value) -> String {
    value["id"].as_str().expect("id field").to_owned()
}
