//! Dominant-colour extraction and colour filters.
//!
//! Extraction runs k-means in CIELAB. Seeds come from a 16×16×16 RGB
//! histogram, most populated bins first, skipping bins closer than
//! [`MIN_SEED_DISTANCE`] to an existing seed. Clustering runs on the set of
//! distinct colours weighted by pixel count, so the result depends only on
//! the pixel multiset, never on pixel order.

mod color;

pub use color::{Color, Lab};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::story::ImageRef;

pub const DEFAULT_K: usize = 8;
/// Longest edge after box-filter downsampling.
pub const MAX_EDGE: u32 = 256;
pub const MIN_SEED_DISTANCE: f64 = 15.0;
pub const MAX_ITERATIONS: usize = 50;
pub const CONVERGENCE_DELTA_E: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub color: Color,
    pub weight: f64,
}

/// Dominance-ordered colours: weight descending, ties by hex ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub entries: Vec<PaletteEntry>,
    pub source_image: ImageRef,
}

impl Palette {
    pub fn contains(&self, color: &Color) -> bool {
        self.entries.iter().any(|e| e.color == *color)
    }

    pub fn dominant(&self) -> Option<Color> {
        self.entries.first().map(|e| e.color)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.entries.is_empty() {
            out.push("no entries".to_owned());
        }
        if self.entries.len() > DEFAULT_K {
            out.push(format!("{} entries exceed {DEFAULT_K}", self.entries.len()));
        }
        let sum: f64 = self.entries.iter().map(|e| e.weight).sum();
        if !self.entries.is_empty() && (sum - 1.0).abs() > 1e-6 {
            out.push(format!("weights sum to {sum}"));
        }
        if self.entries.iter().any(|e| !(0.0..=1.0).contains(&e.weight)) {
            out.push("weight outside [0, 1]".to_owned());
        }
        let sorted = self
            .entries
            .windows(2)
            .all(|w| entry_order(&w[0], &w[1]) != std::cmp::Ordering::Greater);
        if !sorted {
            out.push("entries are not in dominance order".to_owned());
        }
        out
    }
}

fn entry_order(a: &PaletteEntry, b: &PaletteEntry) -> std::cmp::Ordering {
    b.weight
        .total_cmp(&a.weight)
        .then_with(|| a.color.hex().cmp(&b.color.hex()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOrigin {
    PaletteDefault,
    PalettePick,
    CustomHex,
}

/// The colour used to tint the interface for a focused scene.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorFilter {
    pub color: Color,
    pub origin: FilterOrigin,
}

/// The most dominant colour. Ties were already broken by hex when the
/// palette was sorted.
pub fn default_filter(palette: &Palette) -> Result<ColorFilter> {
    let color = palette.dominant().ok_or(Error::EmptyPalette)?;
    Ok(ColorFilter {
        color,
        origin: FilterOrigin::PaletteDefault,
    })
}

pub fn decode(bytes: &[u8]) -> Result<RgbImage> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::UndecodableImage(e.to_string()))?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::EmptyImage);
    }
    Ok(img.to_rgb8())
}

/// Box-filter downsample so that neither edge exceeds [`MAX_EDGE`]. Images
/// already small enough are returned unchanged.
pub fn downsample(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    if w <= MAX_EDGE && h <= MAX_EDGE {
        return img.clone();
    }
    let longest = w.max(h) as u64;
    let ow = ((w as u64 * MAX_EDGE as u64).div_ceil(longest)).max(1) as u32;
    let oh = ((h as u64 * MAX_EDGE as u64).div_ceil(longest)).max(1) as u32;
    let mut out = RgbImage::new(ow, oh);
    for oy in 0..oh {
        let y0 = (oy as u64 * h as u64 / oh as u64) as u32;
        let y1 = (((oy as u64 + 1) * h as u64 / oh as u64) as u32).max(y0 + 1);
        for ox in 0..ow {
            let x0 = (ox as u64 * w as u64 / ow as u64) as u32;
            let x1 = (((ox as u64 + 1) * w as u64 / ow as u64) as u32).max(x0 + 1);
            let mut sum = [0u64; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = img.get_pixel(x, y);
                    for c in 0..3 {
                        sum[c] += p[c] as u64;
                    }
                }
            }
            let n = ((y1 - y0) * (x1 - x0)) as u64;
            let avg = sum.map(|s| ((s + n / 2) / n) as u8);
            out.put_pixel(ox, oy, image::Rgb(avg));
        }
    }
    out
}

/// Decodes `bytes` and extracts up to `k` dominant colours.
pub fn extract_palette(bytes: &[u8], k: usize) -> Result<Palette> {
    let img = decode(bytes)?;
    extract_from_rgb(&img, k, ImageRef::from_bytes(bytes))
}

/// Extraction on an already decoded image.
pub fn extract_from_rgb(img: &RgbImage, k: usize, source_image: ImageRef) -> Result<Palette> {
    if k == 0 {
        return Err(Error::InvalidRequest("k must be at least 1".into()));
    }
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::EmptyImage);
    }
    let small = downsample(img);
    let samples = distinct_colors(&small);
    let clusters = kmeans(&samples, k);
    let total: u64 = clusters.iter().map(|c| c.1).sum();

    let mut merged: BTreeMap<Color, u64> = BTreeMap::new();
    for (lab, count) in clusters {
        *merged.entry(lab.to_color()).or_default() += count;
    }
    let mut entries: Vec<PaletteEntry> = merged
        .into_iter()
        .map(|(color, count)| PaletteEntry {
            color,
            weight: count as f64 / total as f64,
        })
        .collect();
    entries.sort_by(entry_order);
    Ok(Palette {
        entries,
        source_image,
    })
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    rgb: [u8; 3],
    lab: Lab,
    count: u64,
}

fn distinct_colors(img: &RgbImage) -> Vec<Sample> {
    let mut counts: BTreeMap<[u8; 3], u64> = BTreeMap::new();
    for p in img.pixels() {
        *counts.entry(p.0).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(rgb, count)| Sample {
            rgb,
            lab: Lab::from_rgb(rgb[0], rgb[1], rgb[2]),
            count,
        })
        .collect()
}

fn bin_index(rgb: [u8; 3]) -> usize {
    ((rgb[0] as usize >> 4) << 8) | ((rgb[1] as usize >> 4) << 4) | (rgb[2] as usize >> 4)
}

fn weighted_mean(items: impl Iterator<Item = (Lab, u64)>) -> Option<Lab> {
    let mut sum = Lab::default();
    let mut total = 0u64;
    for (lab, count) in items {
        let w = count as f64;
        sum.l += lab.l * w;
        sum.a += lab.a * w;
        sum.b += lab.b * w;
        total += count;
    }
    (total > 0).then(|| {
        let t = total as f64;
        Lab {
            l: sum.l / t,
            a: sum.a / t,
            b: sum.b / t,
        }
    })
}

/// Histogram seeds: bin means in order of population, spaced at least
/// [`MIN_SEED_DISTANCE`] apart. If that leaves fewer than `min(k, bins)`
/// seeds, the skipped bins fill the remainder in the same order.
fn histogram_seeds(samples: &[Sample], k: usize) -> Vec<Lab> {
    let mut bins: BTreeMap<usize, Vec<(Lab, u64)>> = BTreeMap::new();
    for s in samples {
        bins.entry(bin_index(s.rgb)).or_default().push((s.lab, s.count));
    }
    let mut ranked: Vec<(usize, u64, Lab)> = bins
        .into_iter()
        .filter_map(|(idx, members)| {
            let count = members.iter().map(|m| m.1).sum();
            weighted_mean(members.into_iter()).map(|mean| (idx, count, mean))
        })
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    let target = k.min(ranked.len());
    let min_sq = MIN_SEED_DISTANCE * MIN_SEED_DISTANCE;
    let mut seeds: Vec<Lab> = Vec::with_capacity(target);
    let mut skipped = Vec::new();
    for (_, _, mean) in &ranked {
        if seeds.len() == target {
            break;
        }
        if seeds.iter().all(|s| s.distance_sq(*mean) >= min_sq) {
            seeds.push(*mean);
        } else {
            skipped.push(*mean);
        }
    }
    for mean in skipped {
        if seeds.len() == target {
            break;
        }
        if !seeds.contains(&mean) {
            seeds.push(mean);
        }
    }
    seeds
}

fn nearest(centroids: &[Lab], lab: Lab) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = c.distance_sq(lab);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Weighted k-means over distinct colours. Returns non-empty clusters as
/// (centroid, pixel count).
fn kmeans(samples: &[Sample], k: usize) -> Vec<(Lab, u64)> {
    let mut centroids = histogram_seeds(samples, k);
    if centroids.is_empty() {
        return Vec::new();
    }
    let mut assignment = vec![0usize; samples.len()];

    for _ in 0..MAX_ITERATIONS {
        assign(samples, &centroids, &mut assignment);
        if reseed_empty(samples, &mut centroids, &mut assignment) {
            continue;
        }
        let mut moved = 0.0f64;
        for (ci, centroid) in centroids.iter_mut().enumerate() {
            let members = samples
                .iter()
                .zip(&assignment)
                .filter(|(_, a)| **a == ci)
                .map(|(s, _)| (s.lab, s.count));
            if let Some(mean) = weighted_mean(members) {
                moved = moved.max(centroid.delta_e(mean));
                *centroid = mean;
            }
        }
        if moved < CONVERGENCE_DELTA_E {
            break;
        }
    }

    assign(samples, &centroids, &mut assignment);
    let mut counts = vec![0u64; centroids.len()];
    for (s, a) in samples.iter().zip(&assignment) {
        counts[*a] += s.count;
    }
    centroids
        .into_iter()
        .zip(counts)
        .filter(|(_, n)| *n > 0)
        .collect()
}

fn assign(samples: &[Sample], centroids: &[Lab], assignment: &mut [usize]) {
    for (s, a) in samples.iter().zip(assignment.iter_mut()) {
        *a = nearest(centroids, s.lab);
    }
}

/// Moves each empty centroid onto the distinct colour farthest from its own
/// centroid. Returns whether anything moved.
fn reseed_empty(samples: &[Sample], centroids: &mut [Lab], assignment: &mut [usize]) -> bool {
    let mut counts = vec![0u64; centroids.len()];
    for a in assignment.iter() {
        counts[*a] += 1;
    }
    let mut changed = false;
    for ci in 0..centroids.len() {
        if counts[ci] > 0 {
            continue;
        }
        let farthest = samples
            .iter()
            .enumerate()
            .filter(|(i, _)| counts[assignment[*i]] > 1)
            .map(|(i, s)| (i, s.lab.distance_sq(centroids[assignment[i]])))
            .filter(|(_, d)| *d > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        if let Some((i, _)) = farthest {
            counts[assignment[i]] -= 1;
            counts[ci] = 1;
            assignment[i] = ci;
            centroids[ci] = samples[i].lab;
            changed = true;
        }
    }
    changed
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn uniform(w: u32, h: u32, c: [u8; 3]) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb(c))
    }

    fn dummy_ref() -> ImageRef {
        ImageRef::from_bytes(b"test")
    }

    #[test]
    fn uniform_red_is_one_entry() {
        let p = extract_from_rgb(&uniform(512, 512, [255, 0, 0]), 8, dummy_ref()).unwrap();
        assert_eq!(p.entries.len(), 1);
        assert_eq!(p.entries[0].color.hex(), "#FF0000");
        assert_eq!(p.entries[0].weight, 1.0);
    }

    #[test]
    fn default_filter_picks_first() {
        let p = extract_from_rgb(&uniform(4, 4, [255, 0, 0]), 8, dummy_ref()).unwrap();
        let f = default_filter(&p).unwrap();
        assert_eq!(f.color.hex(), "#FF0000");
        assert_eq!(f.origin, FilterOrigin::PaletteDefault);
    }

    #[test]
    fn tie_breaks_on_hex() {
        // Half black, half white: equal weights, so #000000 sorts first.
        let mut img = uniform(8, 8, [255, 255, 255]);
        for y in 0..8 {
            for x in 0..4 {
                img.put_pixel(x, y, Rgb([0, 0, 0]));
            }
        }
        let p = extract_from_rgb(&img, 8, dummy_ref()).unwrap();
        assert_eq!(p.entries.len(), 2);
        assert_eq!(p.entries[0].weight, p.entries[1].weight);
        assert_eq!(default_filter(&p).unwrap().color.hex(), "#000000");
    }

    #[test]
    fn empty_palette_has_no_default() {
        let p = Palette {
            entries: vec![],
            source_image: dummy_ref(),
        };
        assert!(matches!(default_filter(&p), Err(Error::EmptyPalette)));
    }

    #[test]
    fn garbage_bytes_are_undecodable() {
        assert!(matches!(
            extract_palette(b"not an image", 8),
            Err(Error::UndecodableImage(_))
        ));
    }

    #[test]
    fn k_zero_is_rejected() {
        assert!(extract_from_rgb(&uniform(2, 2, [0, 0, 0]), 0, dummy_ref()).is_err());
    }

    #[test]
    fn fewer_distinct_colours_than_k() {
        let mut img = uniform(30, 10, [255, 0, 0]);
        for y in 0..10 {
            for x in 10..20 {
                img.put_pixel(x, y, Rgb([0, 255, 0]));
            }
            for x in 20..30 {
                img.put_pixel(x, y, Rgb([0, 0, 255]));
            }
        }
        let p = extract_from_rgb(&img, 8, dummy_ref()).unwrap();
        assert_eq!(p.entries.len(), 3);
        assert!(p.violations().is_empty());
    }

    #[test]
    fn downsample_caps_longest_edge() {
        let small = downsample(&uniform(1000, 300, [1, 2, 3]));
        assert_eq!(small.dimensions(), (256, 77));
        assert_eq!(small.get_pixel(10, 10).0, [1, 2, 3]);
        let untouched = downsample(&uniform(100, 50, [0, 0, 0]));
        assert_eq!(untouched.dimensions(), (100, 50));
    }

    #[test]
    fn many_colours_give_exactly_k() {
        let mut img = RgbImage::new(64, 64);
        for (x, y, p) in img.enumerate_pixels_mut() {
            *p = Rgb([(x * 4) as u8, (y * 4) as u8, ((x + y) * 2) as u8]);
        }
        let p = extract_from_rgb(&img, 8, dummy_ref()).unwrap();
        assert_eq!(p.entries.len(), 8);
        assert!(p.violations().is_empty(), "{:?}", p.violations());
    }
}
