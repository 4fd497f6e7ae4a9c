//! Deterministic offline providers and a fault-injection wrapper.

use async_trait::async_trait;
use image::{ImageEncoder, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::{ChatProvider, ChatPurpose, ChatRequest, ImageProvider, ImageRequest, ImageResult, ProviderError, ProviderStatus};
use crate::engine::render_numbered_list;
use crate::error::{Error, Result};
use crate::palette::Color;

const BUILTIN_FIXTURES: &str = include_str!("../../fixtures/chat.toml");

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ChatFixture {
    pub purpose: ChatPurpose,
    #[serde(rename = "match", default)]
    pub needles: Vec<String>,
    pub response: String,
}

impl ChatFixture {
    fn matches(&self, request: &ChatRequest) -> bool {
        self.purpose == request.purpose
            && self.needles.iter().all(|n| request.prompt.full.contains(n.as_str()))
    }
}

#[derive(Debug, Deserialize)]
struct FixtureFile {
    #[serde(default)]
    fixture: Vec<ChatFixture>,
}

fn parse_fixtures(text: &str, origin: &Path) -> Result<Vec<ChatFixture>> {
    toml::from_str::<FixtureFile>(text)
        .map(|f| f.fixture)
        .map_err(|e| Error::io(origin, e))
}

fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p);
    }
    hasher.finalize().into()
}

const MOODS: [&str; 8] = [
    "Silver", "Drifting", "Burning", "Hollow", "Velvet", "Shattered", "Midnight", "Golden",
];
const THINGS: [&str; 8] = [
    "Tide", "Lantern", "Orchard", "Storm", "Mirror", "Feather", "Bridge", "Comet",
];

/// Chat provider answering from fixtures, falling back to text derived
/// deterministically from the prompt.
#[derive(Debug, Clone)]
pub struct MockChat {
    fixtures: Vec<ChatFixture>,
    latency: Duration,
    calls: Arc<AtomicUsize>,
}

impl MockChat {
    pub fn builtin() -> Self {
        Self {
            fixtures: parse_fixtures(BUILTIN_FIXTURES, Path::new("fixtures/chat.toml"))
                .expect("builtin fixtures are valid"),
            latency: Duration::ZERO,
            calls: Arc::default(),
        }
    }

    /// Fixtures from every `*.toml` file in `dir` take precedence over the
    /// ones already loaded.
    pub fn with_fixture_dir(mut self, dir: &Path) -> Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        paths.sort();
        let mut loaded = Vec::new();
        for path in paths {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            loaded.extend(parse_fixtures(&text, &path)?);
        }
        loaded.append(&mut self.fixtures);
        self.fixtures = loaded;
        Ok(self)
    }

    /// Adds a fixture ahead of all others.
    pub fn with_fixture(mut self, fixture: ChatFixture) -> Self {
        self.fixtures.insert(0, fixture);
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn fallback(request: &ChatRequest) -> String {
        let seed = digest(&[request.prompt.full.as_bytes()]);
        match request.purpose {
            ChatPurpose::Suggestion => {
                let items: Vec<String> = (0..5)
                    .map(|i| {
                        let a = MOODS[seed[2 * i] as usize % MOODS.len()];
                        let b = THINGS[seed[2 * i + 1] as usize % THINGS.len()];
                        format!("{a} {b}")
                    })
                    .collect();
                render_numbered_list(&items)
            }
            ChatPurpose::Depiction => {
                let quoted: Vec<&str> = request.prompt.body.split('"').skip(1).step_by(2).collect();
                match (quoted.first(), quoted.last()) {
                    (Some(subject), Some(concept)) if quoted.len() >= 2 => format!(
                        "In that moment {subject} became {concept} for me. I could feel it settle \
                         in my chest, strange and familiar at once, the way a dream insists on \
                         its own logic."
                    ),
                    _ => "I carried the feeling like a stone in my pocket, heavy and smooth, \
                          long after the dream let go of me."
                        .to_owned(),
                }
            }
        }
    }
}

impl Default for MockChat {
    fn default() -> Self {
        Self::builtin()
    }
}

#[async_trait]
impl ChatProvider for MockChat {
    async fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if !self.latency.is_zero() {
            tokio::time::sleep(self.latency).await;
        }
        let answer = self
            .fixtures
            .iter()
            .find(|f| f.matches(request))
            .map(|f| f.response.trim().to_owned())
            .unwrap_or_else(|| Self::fallback(request));
        Ok(answer)
    }

    async fn health(&self) -> ProviderStatus {
        ProviderStatus::Reachable
    }
}

/// One solid horizontal band of a mock image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Band {
    pub color: Color,
    pub rows: u32,
}

/// Image provider drawing 2–4 solid horizontal colour bands chosen from a
/// hash of the prompt (and seed), so identical requests give identical bytes
/// and the dominant colours are known in advance.
#[derive(Debug, Clone, Default)]
pub struct MockImage {
    latency: Duration,
    /// When set, images are rendered at this size regardless of the request.
    force_size: Option<(u32, u32)>,
    calls: Arc<AtomicUsize>,
}

impl MockImage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    /// Misbehaves by ignoring the requested size.
    pub fn with_forced_size(mut self, width: u32, height: u32) -> Self {
        self.force_size = Some((width, height));
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn bands(prompt: &str, seed: Option<u64>, height: u32) -> Vec<Band> {
        let seed_bytes = seed.map(|s| s.to_le_bytes()).unwrap_or_default();
        let mut rng = ChaCha8Rng::from_seed(digest(&[prompt.as_bytes(), &seed_bytes]));
        let n = rng.random_range(2..=4usize);
        let mut colors: Vec<Color> = Vec::with_capacity(n);
        while colors.len() < n {
            let c = Color::new(rng.random(), rng.random(), rng.random());
            if colors.iter().all(|o| o.to_lab().delta_e(c.to_lab()) >= 30.0) {
                colors.push(c);
            }
        }
        // Each band gets at least an eighth of the rows; the rest is spread
        // at random.
        let min_rows = (height / 8).max(1);
        let mut rows = vec![min_rows; n];
        let mut spare = height.saturating_sub(min_rows * n as u32);
        for (i, r) in rows.iter_mut().enumerate() {
            let take = if i + 1 == n { spare } else { rng.random_range(0..=spare) };
            *r += take;
            spare -= take;
        }
        colors
            .into_iter()
            .zip(rows)
            .map(|(color, rows)| Band { color, rows })
            .collect()
    }

    pub fn render(prompt: &str, seed: Option<u64>, width: u32, height: u32) -> Vec<u8> {
        let bands = Self::bands(prompt, seed, height);
        let mut img = RgbImage::new(width, height);
        let mut y0 = 0;
        for band in bands {
            let c = band.color;
            for y in y0..(y0 + band.rows).min(height) {
                for x in 0..width {
                    img.put_pixel(x, y, Rgb([c.r, c.g, c.b]));
                }
            }
            y0 += band.rows;
        }
        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(&mut out)
            .write_image(img.as_raw(), width, height, image::ExtendedColorType::Rgb8)
            .expect("in-memory png encoding");
        out
    }
}

#[async_trait]
impl ImageProvider for MockImage {
    async fn generate(&self, request: &ImageRequest) -> Result<ImageResult, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if !self.latency.is_zero() {
            tokio::time::sleep(self.latency).await;
        }
        let (w, h) = self.force_size.unwrap_or((request.width, request.height));
        let bytes = Self::render(&request.prompt.full, request.seed, w, h);
        let mut meta = BTreeMap::new();
        meta.insert("provider".into(), "mock".into());
        meta.insert("steps".into(), request.steps.to_string());
        Ok(ImageResult::new(bytes, meta))
    }

    async fn health(&self) -> ProviderStatus {
        ProviderStatus::Reachable
    }
}

/// Shared switch controlling a [`Faulty`] provider.
#[derive(Debug)]
pub struct FaultPlan {
    fail_next: AtomicUsize,
    down: AtomicBool,
    error: Mutex<ProviderError>,
}

impl Default for FaultPlan {
    fn default() -> Self {
        Self {
            fail_next: AtomicUsize::new(0),
            down: AtomicBool::new(false),
            error: Mutex::new(ProviderError::Timeout),
        }
    }
}

impl FaultPlan {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn fail_next(&self, calls: usize) {
        self.fail_next.store(calls, Ordering::SeqCst);
    }

    pub fn set_down(&self, down: bool) {
        self.down.store(down, Ordering::SeqCst);
    }

    pub fn set_error(&self, error: ProviderError) {
        *self.error.lock().expect("fault plan lock") = error;
    }

    fn trip(&self) -> Option<ProviderError> {
        let scheduled = self
            .fail_next
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        (scheduled || self.down.load(Ordering::SeqCst))
            .then(|| self.error.lock().expect("fault plan lock").clone())
    }
}

/// Wraps a provider and fails calls according to a [`FaultPlan`].
pub struct Faulty<P> {
    inner: P,
    plan: Arc<FaultPlan>,
}

impl<P> Faulty<P> {
    pub fn new(inner: P, plan: Arc<FaultPlan>) -> Self {
        Self { inner, plan }
    }
}

#[async_trait]
impl<P: ChatProvider> ChatProvider for Faulty<P> {
    async fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        match self.plan.trip() {
            Some(e) => Err(e),
            None => self.inner.complete(request).await,
        }
    }

    async fn health(&self) -> ProviderStatus {
        if self.plan.down.load(Ordering::SeqCst) {
            ProviderStatus::Degraded("fault injected".into())
        } else {
            self.inner.health().await
        }
    }
}

#[async_trait]
impl<P: ImageProvider> ImageProvider for Faulty<P> {
    async fn generate(&self, request: &ImageRequest) -> Result<ImageResult, ProviderError> {
        match self.plan.trip() {
            Some(e) => Err(e),
            None => self.inner.generate(request).await,
        }
    }

    async fn health(&self) -> ProviderStatus {
        if self.plan.down.load(Ordering::SeqCst) {
            ProviderStatus::Degraded("fault injected".into())
        } else {
            self.inner.health().await
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::PromptText;

    fn req(body: &str, purpose: ChatPurpose) -> ChatRequest {
        ChatRequest {
            prompt: PromptText {
                role_preamble: String::new(),
                body: body.into(),
                full: body.into(),
            },
            temperature: 1.0,
            max_tokens: 10,
            purpose,
        }
    }

    #[tokio::test]
    async fn scenario_fixture() {
        let chat = MockChat::builtin();
        let text = chat
            .complete(&req(
                "\"old crush holding my hands\" felt exciting",
                ChatPurpose::Suggestion,
            ))
            .await
            .unwrap();
        for name in ["Electric Sparks", "Nostalgic Embrace", "Entangled Fingers"] {
            assert!(text.contains(name));
        }
    }

    #[tokio::test]
    async fn fallback_is_deterministic_list() {
        let chat = MockChat::builtin();
        let r = req("something else entirely", ChatPurpose::Suggestion);
        let a = chat.complete(&r).await.unwrap();
        assert_eq!(a, chat.complete(&r).await.unwrap());
        assert_eq!(crate::engine::parse_suggestions(&a).unwrap().len(), 5);
    }

    #[test]
    fn mock_image_is_deterministic_and_sized() {
        let a = MockImage::render("prompt", None, 64, 48);
        assert_eq!(a, MockImage::render("prompt", None, 64, 48));
        assert_ne!(a, MockImage::render("prompt 2", None, 64, 48));
        let img = image::load_from_memory(&a).unwrap();
        assert_eq!((img.width(), img.height()), (64, 48));
        let bands = MockImage::bands("prompt", None, 48);
        assert!((2..=4).contains(&bands.len()));
        assert_eq!(bands.iter().map(|b| b.rows).sum::<u32>(), 48);
    }

    #[test]
    fn fault_plan_counts_down() {
        let plan = FaultPlan::new();
        plan.fail_next(2);
        assert!(plan.trip().is_some());
        assert!(plan.trip().is_some());
        assert!(plan.trip().is_none());
        plan.set_down(true);
        assert!(plan.trip().is_some());
    }
}
