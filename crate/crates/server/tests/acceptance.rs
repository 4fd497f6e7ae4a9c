//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Run with
//! `cargo test -p mm-server --test acceptance`.

mod common;

use common::{id, TestServer};
use image::{ImageFormat, Rgb, RgbImage};
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use reqwest::StatusCode;
use serde_json::{json, Value};
use std::collections::BTreeSet;
use std::io::Cursor;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use mm_core::palette::{extract_palette, DEFAULT_K};
use mm_core::providers::mock::MockImage;
use mm_core::providers::transport::{HttpResponse, RecordingTransport};
use mm_core::store::validate_bundle;
use mm_core::testkit::{
    check_fault_run, check_round_trip, check_story_run, fault_op, layout_op, story_op, synthetic_photo,
};
use mm_core::{
    BundleStore, FilterOrigin, FilterRequest, GenerationSettings, MeaningType, MetaphorEngine, MetaphorSpec,
    ProviderConfig, ProviderMode, Providers, SceneKind, ScenePatch, Studio, VisualStructure,
};

const FIDELITY_BUDGET: Duration = Duration::from_secs(5);
const PALETTE_BUDGET: Duration = Duration::from_secs(1);
const SCENARIO_BUDGET: Duration = Duration::from_secs(10);
const WEIGHT_TOLERANCE: f64 = 0.01;
const COLOR_TOLERANCE: f64 = 2.0;
const IMAGE_EDGE: u64 = 512;
const IMAGE_STEPS: u64 = 30;
const SUGGESTION_TEMPERATURE: f64 = 1.0;
const DEPICTION_TEMPERATURE: f64 = 0.7;
const INVARIANT_CASES: u32 = 1000;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap()
}

fn png(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).unwrap();
    out.into_inner()
}

/// sRGB (D65) to CIELAB from the textbook definitions, kept apart from the
/// crate's own conversion.
fn oracle_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| {
        let v = c as f64 / 255.0;
        if v > 0.04045 {
            ((v + 0.055) / 1.055).powf(2.4)
        } else {
            v / 12.92
        }
    });
    let x = 0.4124564 * lin[0] + 0.3575761 * lin[1] + 0.1804375 * lin[2];
    let y = 0.2126729 * lin[0] + 0.7151522 * lin[1] + 0.0721750 * lin[2];
    let z = 0.0193339 * lin[0] + 0.1191920 * lin[1] + 0.9503041 * lin[2];
    let delta: f64 = 6.0 / 29.0;
    let f = |t: f64| {
        if t > delta.powi(3) {
            t.cbrt()
        } else {
            t / (3.0 * delta * delta) + 4.0 / 29.0
        }
    };
    let (fx, fy, fz) = (f(x / 0.95047), f(y), f(z / 1.08883));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

fn oracle_delta_e(a: [u8; 3], b: [u8; 3]) -> f64 {
    let (p, q) = (oracle_lab(a), oracle_lab(b));
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
}

fn crush_spec(concept: &str) -> MetaphorSpec {
    MetaphorSpec {
        affective_element: "old crush holding my hands".into(),
        adjectives: vec!["exciting".into()],
        metaphor_concept: concept.into(),
        meaning_type: MeaningType::Connection,
        visual_structure: VisualStructure::Fusion,
        extra_prompt: Some("sunset on the beach".into()),
    }
}

// Live providers behind a recording transport; the responder plays both
// services.
fn parameter_fidelity() -> Outcome {
    let started = Instant::now();
    let image_bytes = MockImage::render("fidelity", Some(1), 512, 512);
    let transport = Arc::new(RecordingTransport::new(move |req| {
        if req.url.contains("chat.test") {
            Ok(HttpResponse::json(
                200,
                &json!({"choices": [{"message": {"content": "1. Electric Sparks\n2. Nostalgic Embrace\n3. Entangled Fingers"}}]}),
            ))
        } else {
            Ok(HttpResponse::bytes(200, "image/png", image_bytes.clone()))
        }
    }));
    let cfg = ProviderConfig {
        chat_mode: ProviderMode::Live,
        image_mode: ProviderMode::Live,
        chat_base_url: "http://chat.test/v1".into(),
        chat_api_key: Some("sk-acceptance".into()),
        image_base_url: Some("http://image.test/generate".into()),
        ..ProviderConfig::default()
    };
    let providers = Providers::from_config_with_transport(&cfg, transport.clone()).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().unwrap();
    let studio = Studio::open(
        BundleStore::open(dir.path()).map_err(|e| e.to_string())?,
        providers,
        MetaphorEngine::default(),
        GenerationSettings::from_config(&cfg),
    )
    .map_err(|e| e.to_string())?;

    runtime().block_on(async {
        let story = studio.create_story("Fidelity").await?;
        let scene = studio.add_scene(story.id, SceneKind::Metaphorical, None).await?;
        studio
            .patch_scene(scene.id, ScenePatch { text: None, metaphor: Some(crush_spec("Electric Sparks")) })
            .await?;
        studio.request_suggestions(scene.id, None, None).await?;
        let record = studio.request_generation(scene.id, None).await?;
        studio.finalize_acceptance(scene.id, record.id).await?;
        Ok::<_, mm_core::Error>(())
    })
    .map_err(|e| e.to_string())?;

    let requests = transport.requests();
    let bodies = |host: &str| -> Vec<Value> {
        requests
            .iter()
            .filter(|r| r.url.contains(host))
            .filter_map(|r| r.body.clone())
            .collect()
    };
    let (chat, image) = (bodies("chat.test"), bodies("image.test"));
    ensure!(chat.len() == 2, "expected 2 chat requests, saw {}", chat.len());
    ensure!(image.len() == 1, "expected 1 image request, saw {}", image.len());
    let img = &image[0];
    ensure!(img["width"] == json!(IMAGE_EDGE), "width {}", img["width"]);
    ensure!(img["height"] == json!(IMAGE_EDGE), "height {}", img["height"]);
    ensure!(img["num_inference_steps"] == json!(IMAGE_STEPS), "steps {}", img["num_inference_steps"]);
    ensure!(
        chat[0]["temperature"] == json!(SUGGESTION_TEMPERATURE),
        "suggestion temperature {}",
        chat[0]["temperature"]
    );
    ensure!(
        chat[1]["temperature"] == json!(DEPICTION_TEMPERATURE),
        "depiction temperature {}",
        chat[1]["temperature"]
    );
    let elapsed = started.elapsed();
    ensure!(elapsed < FIDELITY_BUDGET, "took {elapsed:?}");
    Ok(format!(
        "512x512/30 steps, temperatures {SUGGESTION_TEMPERATURE}/{DEPICTION_TEMPERATURE}, {elapsed:.2?}"
    ))
}

fn palette_correctness() -> Outcome {
    let mut slowest = Duration::ZERO;
    let mut timed = |bytes: &[u8]| {
        let started = Instant::now();
        let result = extract_palette(bytes, DEFAULT_K);
        slowest = slowest.max(started.elapsed());
        result.map_err(|e| e.to_string())
    };

    // 75% blue, 25% yellow.
    let blue = [0u8, 0, 255];
    let yellow = [255u8, 255, 0];
    let two = RgbImage::from_fn(512, 512, |_, y| Rgb(if y < 384 { blue } else { yellow }));
    let total = two.pixels().len() as f64;
    let blue_share = two.pixels().filter(|p| p.0 == blue).count() as f64 / total;
    let yellow_share = two.pixels().filter(|p| p.0 == yellow).count() as f64 / total;
    let palette = timed(&png(&two))?;
    ensure!(palette.entries.len() == 2, "two-tone gave {} entries", palette.entries.len());
    for (entry, (truth, share)) in palette.entries.iter().zip([(blue, blue_share), (yellow, yellow_share)]) {
        let got = [entry.color.r, entry.color.g, entry.color.b];
        let de = oracle_delta_e(got, truth);
        ensure!((entry.weight - share).abs() <= WEIGHT_TOLERANCE, "weight {} vs {share}", entry.weight);
        ensure!(de <= COLOR_TOLERANCE, "{} is {de:.2} from {truth:?}", entry.color.hex());
    }

    let uniform = RgbImage::from_pixel(512, 512, Rgb([255, 0, 0]));
    let palette = timed(&png(&uniform))?;
    ensure!(palette.entries.len() == 1, "uniform gave {} entries", palette.entries.len());
    ensure!(palette.entries[0].weight == 1.0, "uniform weight {}", palette.entries[0].weight);
    ensure!(palette.entries[0].color.hex() == "#FF0000", "uniform colour {}", palette.entries[0].color.hex());

    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    let noise = RgbImage::from_fn(640, 480, |_, _| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        Rgb([state as u8, (state >> 8) as u8, (state >> 16) as u8])
    });
    for img in [noise, synthetic_photo(800, 600, 1), synthetic_photo(512, 512, 2)] {
        let palette = timed(&png(&img))?;
        ensure!(palette.entries.len() <= DEFAULT_K, "{} entries", palette.entries.len());
    }
    ensure!(slowest < PALETTE_BUDGET, "slowest extraction {slowest:?}");
    Ok(format!("weights within {WEIGHT_TOLERANCE}, colours within dE {COLOR_TOLERANCE}, slowest {slowest:.2?}"))
}

fn design_space() -> Outcome {
    let engine = MetaphorEngine::default();
    let fixture = MetaphorSpec {
        adjectives: vec!["thrilling".into(), "a bit worrying".into()],
        ..crush_spec("Electric Sparks")
    };
    let phrases: Vec<&str> = [
        fixture.affective_element.as_str(),
        fixture.metaphor_concept.as_str(),
        fixture.extra_prompt.as_deref().unwrap(),
    ]
    .into_iter()
    .chain(fixture.adjectives.iter().map(String::as_str))
    .collect();
    let mut prompts = BTreeSet::new();
    for meaning_type in MeaningType::ALL {
        for visual_structure in VisualStructure::ALL {
            let spec = MetaphorSpec { meaning_type, visual_structure, ..fixture.clone() };
            let first = engine.image_prompt(&spec).map_err(|e| e.to_string())?;
            let again = MetaphorEngine::default().image_prompt(&spec).map_err(|e| e.to_string())?;
            ensure!(first == again, "{meaning_type:?}/{visual_structure:?} not deterministic");
            for phrase in &phrases {
                ensure!(first.full.contains(phrase), "{meaning_type:?}/{visual_structure:?} lacks {phrase:?}");
            }
            prompts.insert(first.full);
        }
    }
    ensure!(prompts.len() == 9, "only {} distinct prompts", prompts.len());
    Ok("9 distinct deterministic prompts".into())
}

async fn scene_flow(
    server: &TestServer,
    story: &str,
    text: &str,
    spec: MetaphorSpec,
    wanted: &str,
) -> Result<(), String> {
    let (status, scene) = server
        .post(&format!("/stories/{story}/scenes"), json!({"kind": "metaphorical"}))
        .await;
    ensure!(status == StatusCode::CREATED, "add scene: {status}");
    let scene = id(&scene);
    let blank = MetaphorSpec { metaphor_concept: String::new(), ..spec.clone() };
    let (status, _) = server
        .patch(&format!("/scenes/{scene}"), json!({"text": text, "metaphor": blank}))
        .await;
    ensure!(status == StatusCode::OK, "patch: {status}");
    let (status, list) = server.post(&format!("/scenes/{scene}/suggestions"), json!({})).await;
    ensure!(status == StatusCode::OK, "suggestions: {status} {list}");
    let concepts: Vec<&str> = list["suggestions"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(|s| s["concept"].as_str())
        .collect();
    ensure!(concepts.contains(&wanted), "{wanted:?} not among {concepts:?}");
    let (status, _) = server
        .patch(&format!("/scenes/{scene}"), json!({"metaphor": spec}))
        .await;
    ensure!(status == StatusCode::OK, "patch concept: {status}");
    let (status, record) = server.post(&format!("/scenes/{scene}/generations"), json!({})).await;
    ensure!(status == StatusCode::CREATED, "generate: {status} {record}");
    let (status, outcome) = server
        .post(&format!("/scenes/{scene}/generations/{}/accept", id(&record)), json!({}))
        .await;
    ensure!(status == StatusCode::OK, "accept: {status} {outcome}");
    ensure!(outcome["depiction_error"].is_null(), "depiction failed: {}", outcome["depiction_error"]);
    let depictions = outcome["scene"]["depictions"].as_array().cloned().unwrap_or_default();
    ensure!(
        depictions.len() == 1 && !depictions[0]["text"].as_str().unwrap_or("").is_empty(),
        "depictions {depictions:?}"
    );
    let (status, view) = server.get(&format!("/scenes/{scene}/palette")).await;
    ensure!(status == StatusCode::OK, "palette: {status}");
    let entries = view["palette"]["entries"].as_array().cloned().unwrap_or_default();
    ensure!(!entries.is_empty() && entries.len() <= DEFAULT_K, "{} palette entries", entries.len());
    ensure!(view["filter"]["origin"] == "palette_default", "filter {}", view["filter"]);
    ensure!(view["filter"]["color"] == entries[0]["color"], "default filter is not the dominant colour");
    Ok(())
}

async fn literal(server: &TestServer, story: &str, text: &str) -> Result<(), String> {
    let (status, scene) = server
        .post(&format!("/stories/{story}/scenes"), json!({"kind": "literal"}))
        .await;
    ensure!(status == StatusCode::CREATED, "add literal: {status}");
    let (status, _) = server
        .patch(&format!("/scenes/{}", id(&scene)), json!({"text": text}))
        .await;
    ensure!(status == StatusCode::OK, "literal text: {status}");
    Ok(())
}

fn frame_kinds(manifest: &Value) -> Vec<String> {
    manifest["frames"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|f| f["kind"].as_str().unwrap_or("?").to_owned())
        .collect()
}

fn end_to_end() -> Outcome {
    let started = Instant::now();
    let expected = ["literal", "metaphorical", "metaphorical", "literal"];
    let dir = tempfile::tempdir().unwrap();
    let studio = Arc::new(Studio::mock(dir.path()).map_err(|e| e.to_string())?);
    let rt = runtime();
    rt.block_on(async {
        let server = TestServer::start(studio.clone()).await;
        let (status, story) = server.post("/stories", json!({"title": "A reunion by the sea"})).await;
        ensure!(status == StatusCode::CREATED, "create story: {status}");
        let story = id(&story);
        literal(&server, &story, "A class reunion on a beach, around a bonfire.").await?;
        scene_flow(
            &server,
            &story,
            "An old crush takes both of my hands.",
            crush_spec("Electric Sparks"),
            "Electric Sparks",
        )
        .await?;
        let hug = MetaphorSpec {
            affective_element: "hugging and kissing".into(),
            adjectives: vec!["thrilling".into(), "worrying".into()],
            metaphor_concept: "Embracing Flames".into(),
            meaning_type: MeaningType::Similarity,
            visual_structure: VisualStructure::Juxtaposition,
            extra_prompt: None,
        };
        scene_flow(&server, &story, "We hug, then kiss.", hug, "Embracing Flames").await?;
        literal(&server, &story, "The tide comes in and I wake up.").await?;
        let (status, manifest) = server.get(&format!("/stories/{story}/playback")).await;
        ensure!(status == StatusCode::OK, "playback: {status}");
        let kinds = frame_kinds(&manifest);
        ensure!(kinds == expected, "frames {kinds:?}");
        server.stop().await.map_err(|e| e.to_string())?;
        let report = validate_bundle(&studio.store().bundle_dir(story.parse().unwrap()));
        ensure!(report.is_clean(), "API bundle: {:?}", report.violations);
        Ok(())
    })?;

    // The seeded demo goes through the same checks.
    let seeded = tempfile::tempdir().unwrap();
    let bundle = rt
        .block_on(mm_core::demo::seed_demo(seeded.path()))
        .map_err(|e| e.to_string())?;
    let report = validate_bundle(&bundle);
    ensure!(report.is_clean(), "demo bundle: {:?}", report.violations);
    let story = BundleStore::load_path(&bundle).map_err(|e| e.to_string())?;
    let manifest = serde_json::to_value(mm_core::store::export_playback(&story)).unwrap();
    let kinds = frame_kinds(&manifest);
    ensure!(kinds == expected, "demo frames {kinds:?}");

    let elapsed = started.elapsed();
    ensure!(elapsed < SCENARIO_BUDGET, "took {elapsed:?}");
    Ok(format!("4 frames, bundles clean, {elapsed:.2?}"))
}

fn run_cases<S: proptest::strategy::Strategy>(
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases: INVARIANT_CASES,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn invariant_suites() -> Outcome {
    use proptest::collection::vec;
    let started = Instant::now();
    run_cases(vec(story_op(), 1..40), |ops| {
        check_story_run(&ops).map(drop).map_err(TestCaseError::fail)
    })
    .map_err(|e| format!("story: {e}"))?;
    run_cases(vec(layout_op(), 1..40), |ops| {
        check_story_run(&ops).map(drop).map_err(TestCaseError::fail)
    })
    .map_err(|e| format!("layout: {e}"))?;
    run_cases(vec(story_op(), 0..30), |ops| {
        let model = check_story_run(&ops).map_err(TestCaseError::fail)?;
        let dir = tempfile::tempdir().unwrap();
        check_round_trip(&model, dir.path()).map_err(TestCaseError::fail)
    })
    .map_err(|e| format!("store: {e}"))?;
    run_cases(vec(fault_op(), 1..20), |ops| {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        let dir = tempfile::tempdir().unwrap();
        rt.block_on(check_fault_run(&ops, dir.path())).map_err(TestCaseError::fail)
    })
    .map_err(|e| format!("faults: {e}"))?;
    Ok(format!("4 suites x {INVARIANT_CASES} cases, {:.2?}", started.elapsed()))
}

fn chain_semantics() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let studio = Studio::mock(dir.path()).map_err(|e| e.to_string())?;
    runtime()
        .block_on(async {
            let story = studio.create_story("Chain").await.map_err(|e| e.to_string())?;
            let scene = studio
                .add_scene(story.id, SceneKind::Metaphorical, None)
                .await
                .map_err(|e| e.to_string())?
                .id;
            studio
                .patch_scene(scene, ScenePatch { text: None, metaphor: Some(crush_spec("Electric Sparks")) })
                .await
                .map_err(|e| e.to_string())?;
            let generate = |seed| studio.request_generation(scene, Some(seed));
            let accept = |gid| studio.finalize_acceptance(scene, gid);

            // Idempotent finalize.
            let first = generate(1).await.map_err(|e| e.to_string())?;
            let once = accept(first.id).await.map_err(|e| e.to_string())?;
            let twice = accept(first.id).await.map_err(|e| e.to_string())?;
            ensure!(once.newly_accepted && !twice.newly_accepted, "replay reported as new");
            ensure!(once.scene == twice.scene, "replayed finalize changed the scene");
            ensure!(
                twice.scene.depictions.len() == 1 && twice.scene.palettes.len() == 1,
                "replay duplicated depictions or palettes"
            );

            // User-chosen filters survive re-acceptance.
            let custom = FilterRequest { origin: FilterOrigin::CustomHex, color: Some("#808080".into()) };
            let chosen = studio.set_filter(scene, custom).await.map_err(|e| e.to_string())?.filter;
            let second = generate(2).await.map_err(|e| e.to_string())?;
            let after = accept(second.id).await.map_err(|e| e.to_string())?.scene;
            ensure!(after.filter == chosen, "custom filter replaced: {:?}", after.filter);
            let pick = after.palettes[0].palette.entries.last().unwrap().color;
            let request = FilterRequest { origin: FilterOrigin::PalettePick, color: Some(pick.hex()) };
            let chosen = studio.set_filter(scene, request).await.map_err(|e| e.to_string())?.filter;
            let third = generate(3).await.map_err(|e| e.to_string())?;
            let after = accept(third.id).await.map_err(|e| e.to_string())?.scene;
            ensure!(after.filter == chosen, "palette pick replaced: {:?}", after.filter);
            ensure!(after.palettes.len() == 3, "{} palettes after three acceptances", after.palettes.len());

            // Display switching never touches palettes or acceptance.
            let fourth = generate(4).await.map_err(|e| e.to_string())?;
            let before = studio.scene(scene).map_err(|e| e.to_string())?;
            for gid in [first.id, fourth.id, second.id, third.id] {
                let shown = studio.switch_display(scene, gid).await.map_err(|e| e.to_string())?;
                ensure!(shown.displayed_generation == Some(gid), "display not switched");
                ensure!(shown.palettes == before.palettes, "display switch changed palettes");
                ensure!(shown.filter == before.filter, "display switch changed the filter");
                ensure!(shown.depictions == before.depictions, "display switch changed depictions");
                let accepted = |s: &mm_core::Scene| s.generations.iter().map(|g| g.accepted).collect::<Vec<_>>();
                ensure!(accepted(&shown) == accepted(&before), "display switch changed acceptance");
            }
            Ok("idempotent finalize, user filters kept, display switches inert".to_owned())
        })
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 6] = [
        ("parameter fidelity", parameter_fidelity),
        ("palette correctness", palette_correctness),
        ("design-space coverage", design_space),
        ("end-to-end scenario", end_to_end),
        ("invariant suites", invariant_suites),
        ("acceptance-chain semantics", chain_semantics),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = std::panic::catch_unwind(check)
            .unwrap_or_else(|panic| Err(format!("panicked: {:?}", panic.downcast_ref::<String>())));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}: {reason}");
            }
        }
    }
    println!("{} of {} criteria passed", 6 - failed, 6);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
