//! Synthetic corpora standing in for real video features.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use super::features::write_features;
use super::manifest::{write_captions, CaptionRecord, Manifest, ManifestEntry, Split};
use crate::error::Result;
use crate::numeric::{RngState, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthVideo {
    pub id: String,
    /// Values are exactly representable in f32, so they survive a trip
    /// through a feature file unchanged.
    pub features: Tensor<f64>,
    pub label: Option<usize>,
    pub split: Split,
    pub caption: Option<String>,
    /// Per-frame regime of multirate sequences (`true` = fast); empty for
    /// other kinds.
    pub fast: Vec<bool>,
}

fn f32_exact(v: f64) -> f64 {
    v as f32 as f64
}

fn matrix(frames: usize, dim: usize, data: Vec<f64>) -> Tensor<f64> {
    Tensor::matrix(frames, dim, data.into_iter().map(f32_exact).collect()).expect("consistent shape")
}

#[derive(Debug, Clone)]
pub struct MultirateSpec {
    pub count: usize,
    pub frames: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for MultirateSpec {
    fn default() -> Self {
        Self { count: 200, frames: 40, dim: 8, seed: 0 }
    }
}

/// Slow period in frames; the fast regime runs eight times faster.
const SLOW_PERIOD: f64 = 64.0;
const FAST_FACTOR: f64 = 8.0;

/// Sinusoidal sequences whose shared phase advances slowly or quickly in
/// alternating regimes of 6 to 14 frames.
pub fn multirate(spec: &MultirateSpec) -> Vec<SynthVideo> {
    let root = RngState::new(spec.seed);
    (0..spec.count)
        .map(|v| {
            let mut rng = root.fork(v as u64);
            let amp: Vec<f64> = (0..spec.dim).map(|_| rng.uniform_in(0.5, 1.5)).collect();
            let harmonic: Vec<f64> = (0..spec.dim).map(|_| 1.0 + rng.below(2) as f64).collect();
            let offset: Vec<f64> = (0..spec.dim).map(|_| rng.uniform_in(0.0, 2.0 * PI)).collect();
            let mut fast = rng.bernoulli(0.5);
            let mut left = 6 + rng.below(9);
            let mut phase = rng.uniform_in(0.0, 2.0 * PI);
            let mut data = Vec::with_capacity(spec.frames * spec.dim);
            let mut regimes = Vec::with_capacity(spec.frames);
            for _ in 0..spec.frames {
                if left == 0 {
                    fast = !fast;
                    left = 6 + rng.below(9);
                }
                left -= 1;
                let rate = if fast { FAST_FACTOR } else { 1.0 };
                phase += rate * 2.0 * PI / SLOW_PERIOD;
                regimes.push(fast);
                for d in 0..spec.dim {
                    data.push(amp[d] * (harmonic[d] * phase + offset[d]).sin() + 0.005 * rng.normal());
                }
            }
            SynthVideo {
                id: format!("mr_{v:04}"),
                features: matrix(spec.frames, spec.dim, data),
                label: None,
                split: Split::Train,
                caption: None,
                fast: regimes,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EventSpec {
    pub classes: usize,
    pub train: usize,
    pub test: usize,
    pub frames: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for EventSpec {
    fn default() -> Self {
        Self { classes: 3, train: 60, test: 30, frames: 40, dim: 8, seed: 0 }
    }
}

/// Labeled sequences: class `c` oscillates around its own mean along its
/// own direction at its own frequency; background (label 0) is noise
/// around a random per-video mean. Labels cycle `0, 1, .., classes`.
pub fn events(spec: &EventSpec) -> Vec<SynthVideo> {
    let root = RngState::new(spec.seed);
    let mut protos = root.fork(u64::MAX);
    let means: Vec<Vec<f64>> = (0..=spec.classes)
        .map(|_| (0..spec.dim).map(|_| 0.8 * protos.normal()).collect())
        .collect();
    let dirs: Vec<Vec<f64>> = (0..=spec.classes)
        .map(|_| {
            let mut u: Vec<f64> = (0..spec.dim).map(|_| protos.normal()).collect();
            let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            u.iter_mut().for_each(|x| *x /= n);
            u
        })
        .collect();
    (0..spec.train + spec.test)
        .map(|v| {
            let mut rng = root.fork(v as u64);
            let label = v % (spec.classes + 1);
            let split = if v < spec.train { Split::Train } else { Split::Test };
            let mut data = Vec::with_capacity(spec.frames * spec.dim);
            if label == 0 {
                let mean: Vec<f64> = (0..spec.dim).map(|_| 0.5 * rng.normal()).collect();
                for _ in 0..spec.frames {
                    data.extend(mean.iter().map(|m| m + 0.3 * rng.normal()));
                }
            } else {
                let omega = 0.15 + 0.12 * label as f64;
                let amp = rng.uniform_in(0.8, 1.2);
                let theta = rng.uniform_in(0.0, 2.0 * PI);
                for t in 0..spec.frames {
                    let s = amp * (omega * t as f64 + theta).sin();
                    for d in 0..spec.dim {
                        data.push(means[label][d] + s * dirs[label][d] + 0.3 * rng.normal());
                    }
                }
            }
            SynthVideo {
                id: format!("ev_{v:04}"),
                features: matrix(spec.frames, spec.dim, data),
                label: Some(label),
                split,
                caption: None,
                fast: Vec::new(),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CaptionSpec {
    pub count: usize,
    pub frames: usize,
    pub seed: u64,
}

impl Default for CaptionSpec {
    fn default() -> Self {
        Self { count: 10, frames: 12, seed: 0 }
    }
}

pub const CAPTION_OBJECTS: [&str; 5] = ["man", "woman", "dog", "cat", "bird"];
pub const CAPTION_ACTIONS: [&str; 4] = ["running", "jumping", "swimming", "sitting"];
pub const CAPTION_PLACES: [&str; 2] = ["outside", "inside"];

/// Width of caption-corpus features: object one-hot, action oscillation
/// (two dims), place sign.
pub const CAPTION_DIM: usize = 8;

/// Videos whose latent (object, action, place) triple determines both the
/// features and the caption `a <object> is <action> <place>`. Triples are
/// distinct while `count` allows.
pub fn captions(spec: &CaptionSpec) -> Vec<SynthVideo> {
    let root = RngState::new(spec.seed);
    let mut combos: Vec<(usize, usize, usize)> = (0..CAPTION_OBJECTS.len())
        .flat_map(|o| (0..CAPTION_ACTIONS.len()).flat_map(move |a| (0..CAPTION_PLACES.len()).map(move |p| (o, a, p))))
        .collect();
    root.fork(u64::MAX).shuffle(&mut combos);
    (0..spec.count)
        .map(|v| {
            let (o, a, p) = combos[v % combos.len()];
            let mut rng = root.fork(v as u64);
            let omega = 0.4 + 0.5 * a as f64;
            let theta = rng.uniform_in(0.0, 2.0 * PI);
            let place = if p == 0 { 1.0 } else { -1.0 };
            let mut data = Vec::with_capacity(spec.frames * CAPTION_DIM);
            for t in 0..spec.frames {
                for d in 0..5 {
                    data.push(if d == o { 1.0 } else { 0.0 } + 0.05 * rng.normal());
                }
                let phase = omega * t as f64 + theta;
                data.push(phase.sin() + 0.05 * rng.normal());
                data.push(phase.cos() + 0.05 * rng.normal());
                data.push(place + 0.05 * rng.normal());
            }
            SynthVideo {
                id: format!("cap_{v:04}"),
                features: matrix(spec.frames, CAPTION_DIM, data),
                label: Some(o + 1),
                split: Split::Train,
                caption: Some(format!("a {} is {} {}", CAPTION_OBJECTS[o], CAPTION_ACTIONS[a], CAPTION_PLACES[p])),
                fast: Vec::new(),
            }
        })
        .collect()
}

/// Writes `features/<id>.fvec`, `manifest.jsonl` and, when any video has
/// one, `captions.jsonl` under `dir`.
pub fn write_corpus(dir: &Path, videos: &[SynthVideo]) -> Result<Manifest> {
    fs::create_dir_all(dir.join("features"))?;
    let mut entries = Vec::with_capacity(videos.len());
    let mut caps = Vec::new();
    for v in videos {
        let rel = format!("features/{}.fvec", v.id);
        write_features(&dir.join(&rel), &v.features)?;
        entries.push(ManifestEntry { id: v.id.clone(), path: rel, label: v.label, split: v.split });
        if let Some(c) = &v.caption {
            caps.push(CaptionRecord { id: v.id.clone(), caption: c.clone() });
        }
    }
    let manifest = Manifest { entries, base: dir.to_path_buf() };
    manifest.save(&dir.join("manifest.jsonl"))?;
    if !caps.is_empty() {
        write_captions(&dir.join("captions.jsonl"), &caps)?;
    }
    Ok(manifest)
}
