use std::net::SocketAddr;
use std::path::Path;
use std::time::{Duration, Instant};

use base64::Engine as _;
use ntd_core::datastore::{AnnotationStore, DatasetManifest, Split};
use ntd_core::neural::TrainConfig;
use ntd_core::pipeline::PipelineConfig;
use ntd_core::raster::{encode_png, load_image};
use ntd_core::synth::{generate_corpus, Category, SceneSpec};
use ntd_service::ServiceConfig;
use serde_json::{json, Value};

struct Server {
    base: String,
    client: reqwest::Client,
    _dir: tempfile::TempDir,
    manifest: DatasetManifest,
    annotations: std::path::PathBuf,
}

fn small_spec() -> SceneSpec {
    SceneSpec {
        frame_size: 128,
        track_count_mean: 3.0,
        ..SceneSpec::preset(Category::Accel0)
    }
}

async fn start(spec: &SceneSpec, count: usize, ui: Option<&Path>) -> Server {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let manifest = generate_corpus(spec, count, 11, &corpus).unwrap();
    let mut manifest = ntd_core::datastore::split_dataset(&manifest, 0.75, 2).unwrap();
    manifest.save(corpus.join("manifest.json")).unwrap();
    manifest = DatasetManifest::load(corpus.join("manifest.json")).unwrap();
    let annotations = dir.path().join("annotations.jsonl");
    let cfg = ServiceConfig {
        manifest: corpus.join("manifest.json"),
        annotations: annotations.clone(),
        models: dir.path().join("models"),
        pipeline: PipelineConfig::default(),
        train: TrainConfig { epochs: 500, ..TrainConfig::default() },
        ui_dir: ui.map(Path::to_path_buf),
    };
    let (tx, rx) = tokio::sync::oneshot::channel::<SocketAddr>();
    tokio::spawn(async move {
        ntd_service::serve(cfg, "127.0.0.1:0".parse().unwrap(), move |a| {
            let _ = tx.send(a);
        })
        .await
        .unwrap();
    });
    let addr = rx.await.unwrap();
    Server {
        base: format!("http://{addr}"),
        client: reqwest::Client::new(),
        _dir: dir,
        manifest,
        annotations,
    }
}

impl Server {
    async fn get(&self, path: &str) -> reqwest::Response {
        self.client.get(format!("{}{path}", self.base)).send().await.unwrap()
    }

    async fn get_json(&self, path: &str) -> (u16, Value) {
        let r = self.get(path).await;
        let status = r.status().as_u16();
        (status, serde_json::from_slice(&r.bytes().await.unwrap()).unwrap())
    }

    async fn post(&self, path: &str, body: &str) -> (u16, Vec<u8>) {
        let r = self
            .client
            .post(format!("{}{path}", self.base))
            .header("content-type", "application/json")
            .body(body.to_string())
            .send()
            .await
            .unwrap();
        (r.status().as_u16(), r.bytes().await.unwrap().to_vec())
    }

    async fn preview(&self, id: &str, t: f64) -> (usize, Vec<u8>) {
        let r = self.get(&format!("/api/frames/{id}/preview?t={t}")).await;
        assert_eq!(r.status().as_u16(), 200);
        assert_eq!(r.headers()["content-type"], "image/png");
        let count = r.headers()["x-peak-count"].to_str().unwrap().parse().unwrap();
        (count, r.bytes().await.unwrap().to_vec())
    }

    async fn foreground(&self, id: &str, t: f64) -> Vec<u8> {
        let (status, v) = self.get_json(&format!("/api/frames/{id}/foreground?t={t}")).await;
        assert_eq!(status, 200);
        base64::engine::general_purpose::STANDARD
            .decode(v["bits"].as_str().unwrap())
            .unwrap()
    }

    fn first(&self, split: Split) -> String {
        self.manifest.frames_in(split).next().unwrap().frame_id.clone()
    }
}

fn is_error_body(bytes: &[u8]) -> bool {
    serde_json::from_slice::<Value>(bytes)
        .map(|v| v["error"].is_string())
        .unwrap_or(false)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn listing_is_sorted_and_stable() {
    let s = start(&small_spec(), 5, None).await;
    let (status, a) = s.get_json("/api/frames").await;
    assert_eq!(status, 200);
    let items = a.as_array().unwrap();
    assert_eq!(items.len(), 5);
    let ids: Vec<&str> = items.iter().map(|i| i["frame_id"].as_str().unwrap()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    for i in items {
        assert_eq!(i["category"], "accel0");
        assert_eq!(i["annotated"], false);
    }
    let (_, b) = s.get_json("/api/frames").await;
    assert_eq!(a, b);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn preview_behaves_like_a_threshold_slider() {
    let s = start(&small_spec(), 4, None).await;
    let id = s.first(Split::Train);
    let (status, stats) = s.get_json(&format!("/api/frames/{id}/stats")).await;
    assert_eq!(status, 200);
    let max = stats["max_response"].as_f64().unwrap();
    assert!(max > 0.0);

    let (count, png) = s.preview(&id, max).await;
    assert_eq!(count, 0);
    let entry = s.manifest.find(&id).unwrap();
    let original = load_image(s.manifest.image_path(entry)).unwrap();
    assert_eq!(png, encode_png(&original).unwrap());

    let (c1, p1) = s.preview(&id, 0.6 * max).await;
    let (c2, p2) = s.preview(&id, 0.6 * max).await;
    assert_eq!(c1, c2);
    assert_eq!(p1, p2);

    let thresholds = [0.9 * max, 0.6 * max, 0.3 * max, 0.0];
    let maps: Vec<Vec<u8>> = {
        let mut v = Vec::new();
        for t in thresholds {
            v.push(s.foreground(&id, t).await);
        }
        v
    };
    for w in maps.windows(2) {
        for (hi, lo) in w[0].iter().zip(&w[1]) {
            assert_eq!(hi & !lo, 0, "lowering the threshold removed foreground pixels");
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn bad_requests_get_json_errors() {
    let s = start(&small_spec(), 4, None).await;
    let id = s.first(Split::Train);

    let r = s.get("/api/frames/nope/preview?t=1").await;
    assert_eq!(r.status().as_u16(), 404);
    assert!(is_error_body(&r.bytes().await.unwrap()));
    for q in ["", "?t=abc", "?t=NaN"] {
        let r = s.get(&format!("/api/frames/{id}/preview{q}")).await;
        assert_eq!(r.status().as_u16(), 400, "query {q:?}");
        assert!(is_error_body(&r.bytes().await.unwrap()));
    }

    let (status, body) = s.post(&format!("/api/frames/{id}/annotation"), "{\"t\": 1}").await;
    assert_eq!(status, 400);
    assert!(is_error_body(&body));
    let (status, _) = s.post("/api/frames/nope/annotation", "{\"threshold\": 1}").await;
    assert_eq!(status, 404);

    let test_id = s.first(Split::Test);
    let (status, body) = s
        .post(&format!("/api/frames/{test_id}/annotation"), "{\"threshold\": 1}")
        .await;
    assert_eq!(status, 409);
    assert!(is_error_body(&body));

    let (status, _) = s.get_json(&format!("/api/frames/{test_id}/prediction")).await;
    assert_eq!(status, 409);

    let (status, body) = s.post("/api/train", "{\"category\": \"accel0\"}").await;
    assert_eq!(status, 400);
    assert!(is_error_body(&body));
    let (status, _) = s.post("/api/train", "{\"category\": \"field\"}").await;
    assert_eq!(status, 400);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn annotate_train_predict() {
    let s = start(&small_spec(), 4, None).await;
    let train: Vec<String> = s.manifest.frames_in(Split::Train).map(|f| f.frame_id.clone()).collect();
    assert_eq!(train.len(), 3);

    let mut maxes = Vec::new();
    for id in &train {
        let (_, stats) = s.get_json(&format!("/api/frames/{id}/stats")).await;
        maxes.push(stats["max_response"].as_f64().unwrap());
    }
    // First post is superseded by the second.
    let (status, _) = s
        .post(&format!("/api/frames/{}/annotation", train[0]), &json!({"threshold": 1.0}).to_string())
        .await;
    assert_eq!(status, 204);
    for (id, max) in train.iter().zip(&maxes) {
        let (status, _) = s
            .post(&format!("/api/frames/{id}/annotation"), &json!({"threshold": 0.5 * max}).to_string())
            .await;
        assert_eq!(status, 204);
    }
    let (_, list) = s.get_json("/api/frames").await;
    for item in list.as_array().unwrap() {
        let id = item["frame_id"].as_str().unwrap();
        assert_eq!(item["annotated"].as_bool().unwrap(), train.iter().any(|t| t == id));
    }

    let stored = AnnotationStore::open(&s.annotations).load(&s.manifest).unwrap();
    assert_eq!(stored.len(), 3);
    let first = stored.iter().find(|a| a.record.frame_id == train[0]).unwrap();
    assert_eq!(first.record.manual_threshold, 0.5 * maxes[0]);

    let (status, body) = s.post("/api/train", "{\"category\": \"accel0\"}").await;
    assert_eq!(status, 200, "{}", String::from_utf8_lossy(&body));
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["n_records"], 3);
    assert!(v["final_rmse"].as_f64().unwrap().is_finite());

    let test_id = s.first(Split::Test);
    let (status, p1) = s.get_json(&format!("/api/frames/{test_id}/prediction")).await;
    assert_eq!(status, 200);
    let (_, p2) = s.get_json(&format!("/api/frames/{test_id}/prediction")).await;
    assert_eq!(p1, p2);
    assert_eq!(
        p1["count"].as_u64().unwrap() as usize,
        p1["centroids"].as_array().unwrap().len()
    );
    assert!(p1["threshold"].as_f64().unwrap().is_finite());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn cached_preview_is_fast_on_full_frames() {
    let spec = SceneSpec::preset(Category::Accel0);
    let s = start(&spec, 1, None).await;
    let id = s.manifest.frames[0].frame_id.clone();
    let (_, stats) = s.get_json(&format!("/api/frames/{id}/stats")).await;
    let max = stats["max_response"].as_f64().unwrap();
    let mut best = Duration::MAX;
    for k in 1..=5 {
        let t0 = Instant::now();
        s.preview(&id, max * k as f64 / 6.0).await;
        best = best.min(t0.elapsed());
    }
    assert!(best < Duration::from_millis(100), "preview took {best:?}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn serves_static_ui_assets() {
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<html>ok</html>").unwrap();
    let s = start(&small_spec(), 2, Some(ui.path())).await;
    let r = s.get("/index.html").await;
    assert_eq!(r.status().as_u16(), 200);
    assert_eq!(r.bytes().await.unwrap().as_ref(), b"<html>ok</html>");
    let (status, _) = s.get_json("/api/frames").await;
    assert_eq!(status, 200);
}
