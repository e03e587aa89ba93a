//! Deterministic synthetic video datasets with motion-class labels.
//!
//! Two closed-form renderers stand in for real video corpora at desk scale:
//!
//! - `bouncing_ball` — a soft disc of radius 2 travelling at constant speed
//!   and reflecting off the frame borders; class `k` fixes the speed
//!   `0.75 * (k + 1)`, the per-sample seed fixes launch angle and position.
//! - `moving_bar` — a periodic soft stripe translating along its normal with
//!   wraparound; class `k` fixes the direction `2*pi*k / K` (class 0 moves
//!   rightward), the per-sample seed fixes the phase.
//!
//! The class therefore fully determines the motion law and the seed only the
//! phase/position, so a classifier can recover the class from any sample.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::seeded_rng;
use crate::tensor::Tensor;

const BALL_RADIUS: f64 = 2.0;
const BALL_BASE_SPEED: f64 = 0.75;
const BAR_HALF_WIDTH: f64 = 1.5;
const BAR_SPEED: f64 = 1.25;

// ---------------------------------------------------------------------------
// Video carrier
// ---------------------------------------------------------------------------

/// A single-channel video: `frames x 1 x height x width`, pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl VideoTensor {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::contract("video dimensions must be positive"));
        }
        if data.len() != frames * height * width {
            return Err(Error::contract(format!(
                "video data length {} does not match {}x1x{}x{}",
                data.len(),
                frames,
                height,
                width
            )));
        }
        if !data.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)) {
            return Err(Error::contract("video pixels must lie in [0, 1]"));
        }
        Ok(VideoTensor { frames, height, width, data })
    }

    /// Assembles a video from per-frame tensors of shape `[1, H, W]`.
    pub fn from_frame_tensors(frames: &[Tensor]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::contract("a video needs at least one frame"))?;
        let shape = first.shape().to_vec();
        if shape.len() != 3 || shape[0] != 1 {
            return Err(Error::contract(format!(
                "expected frames of shape [1, H, W], got {shape:?}"
            )));
        }
        let mut data = Vec::with_capacity(frames.len() * shape[1] * shape[2]);
        for frame in frames {
            if frame.shape() != shape.as_slice() {
                return Err(Error::contract("all frames must share one shape"));
            }
            data.extend_from_slice(frame.data());
        }
        VideoTensor::new(frames.len(), shape[1], shape[2], data)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Flat pixel data in `(t, h, w)` row-major order.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, t: usize, y: usize, x: usize) -> f64 {
        self.data[(t * self.height + y) * self.width + x]
    }

    /// The pixels of frame `t`.
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }

    /// The video as a `[1, T, H, W]` tensor, the discriminator's input layout.
    /// The flat data order is unchanged — channel is the leading axis of size
    /// one.
    pub fn conv_input(&self) -> Tensor {
        Tensor::new(vec![1, self.frames, self.height, self.width], self.data.clone())
            .expect("video data length matches its shape")
    }
}

// ---------------------------------------------------------------------------
// Dataset specification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    BouncingBall,
    MovingBar,
}

impl DatasetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::BouncingBall => "bouncing_ball",
            DatasetKind::MovingBar => "moving_bar",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bouncing_ball" => Ok(DatasetKind::BouncingBall),
            "moving_bar" => Ok(DatasetKind::MovingBar),
            other => Err(Error::config(format!(
                "unknown dataset kind `{other}`; valid kinds: bouncing_ball, moving_bar"
            ))),
        }
    }
}

/// Full description of a synthetic dataset; equal specs render equal data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub kind: DatasetKind,
    /// Number of motion classes `K`.
    pub num_classes: usize,
    /// Frames per video.
    pub seq_len: usize,
    pub height: usize,
    pub width: usize,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        if self.seq_len < 2 {
            return Err(Error::config("videos need at least 2 frames"));
        }
        if self.samples_per_class == 0 {
            return Err(Error::config("samples_per_class must be positive"));
        }
        let min_side = self.height.min(self.width);
        match self.kind {
            DatasetKind::BouncingBall => {
                // The disc (radius 2, soft edge) plus travel room needs 6 px.
                if min_side < 6 {
                    return Err(Error::config(format!(
                        "bouncing_ball geometry does not fit {}x{}: the ball needs height and width >= 6",
                        self.height, self.width
                    )));
                }
            }
            DatasetKind::MovingBar => {
                // Bar footprint is ~4 px; the period needs room for a gap.
                if min_side < 8 {
                    return Err(Error::config(format!(
                        "moving_bar geometry does not fit {}x{}: the bar needs height and width >= 8",
                        self.height, self.width
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.num_classes * self.samples_per_class
    }
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// Reflects `x` into `[lo, hi]` (triangle-wave fold), the closed form of
/// constant-velocity motion bouncing between two walls.
fn fold(x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    let mut y = (x - lo).rem_euclid(2.0 * span);
    if y > span {
        y = 2.0 * span - y;
    }
    lo + y
}

fn render_ball(spec: &SyntheticSpec, class: usize, rng: &mut impl Rng) -> VideoTensor {
    let (h, w, t_len) = (spec.height, spec.width, spec.seq_len);
    let speed = BALL_BASE_SPEED * (class + 1) as f64;
    let angle: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
    let (lo_x, hi_x) = (BALL_RADIUS, (w - 1) as f64 - BALL_RADIUS);
    let (lo_y, hi_y) = (BALL_RADIUS, (h - 1) as f64 - BALL_RADIUS);
    let px = lo_x + rng.gen::<f64>() * (hi_x - lo_x);
    let py = lo_y + rng.gen::<f64>() * (hi_y - lo_y);
    let (vx, vy) = (speed * angle.cos(), speed * angle.sin());

    let mut data = Vec::with_capacity(t_len * h * w);
    for t in 0..t_len {
        let cx = fold(px + vx * t as f64, lo_x, hi_x);
        let cy = fold(py + vy * t as f64, lo_y, hi_y);
        for y in 0..h {
            for x in 0..w {
                let d = (x as f64 - cx).hypot(y as f64 - cy);
                data.push((BALL_RADIUS + 0.5 - d).clamp(0.0, 1.0));
            }
        }
    }
    VideoTensor::new(t_len, h, w, data).expect("renderer output is clamped to [0, 1]")
}

fn render_bar(spec: &SyntheticSpec, class: usize, rng: &mut impl Rng) -> VideoTensor {
    let (h, w, t_len) = (spec.height, spec.width, spec.seq_len);
    let theta = std::f64::consts::TAU * class as f64 / spec.num_classes as f64;
    let (nx, ny) = (theta.cos(), theta.sin());
    let period = h.max(w) as f64;
    let phase: f64 = rng.gen::<f64>() * period;

    let mut data = Vec::with_capacity(t_len * h * w);
    for t in 0..t_len {
        let center = (phase + BAR_SPEED * t as f64).rem_euclid(period);
        for y in 0..h {
            for x in 0..w {
                let s = x as f64 * nx + y as f64 * ny;
                let d0 = (s - center).rem_euclid(period);
                let dist = d0.min(period - d0);
                data.push((BAR_HALF_WIDTH + 0.5 - dist).clamp(0.0, 1.0));
            }
        }
    }
    VideoTensor::new(t_len, h, w, data).expect("renderer output is clamped to [0, 1]")
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// A rendered collection, class-major: sample `i` of class `k` sits at index
/// `k * samples_per_class + i`.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    spec: SyntheticSpec,
    videos: Vec<VideoTensor>,
    labels: Vec<usize>,
}

/// Renders the dataset described by `spec`. Deterministic: the per-sample
/// generator stream is derived from `(spec.seed, class, sample)`.
pub fn synth_dataset(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut videos = Vec::with_capacity(spec.total_samples());
    let mut labels = Vec::with_capacity(spec.total_samples());
    for class in 0..spec.num_classes {
        for sample in 0..spec.samples_per_class {
            let mut rng = seeded_rng(spec.seed, class as u64, sample as u64);
            let video = match spec.kind {
                DatasetKind::BouncingBall => render_ball(spec, class, &mut rng),
                DatasetKind::MovingBar => render_bar(spec, class, &mut rng),
            };
            videos.push(video);
            labels.push(class);
        }
    }
    Ok(SyntheticDataset { spec: spec.clone(), videos, labels })
}

impl SyntheticDataset {
    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn video(&self, i: usize) -> &VideoTensor {
        &self.videos[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn videos(&self) -> &[VideoTensor] {
        &self.videos
    }

    /// Splits off the last `per_class` samples of every class as a held-out
    /// set, keeping both halves balanced and class-major.
    pub fn split_heldout(&self, per_class: usize) -> Result<(SyntheticDataset, SyntheticDataset)> {
        let spc = self.spec.samples_per_class;
        if per_class == 0 || per_class >= spc {
            return Err(Error::contract(format!(
                "held-out size {per_class} per class must be in 1..{spc}"
            )));
        }
        let mut train = SyntheticDataset {
            spec: SyntheticSpec { samples_per_class: spc - per_class, ..self.spec.clone() },
            videos: Vec::new(),
            labels: Vec::new(),
        };
        let mut heldout = SyntheticDataset {
            spec: SyntheticSpec { samples_per_class: per_class, ..self.spec.clone() },
            videos: Vec::new(),
            labels: Vec::new(),
        };
        for class in 0..self.spec.num_classes {
            for sample in 0..spc {
                let idx = class * spc + sample;
                let dst = if sample < spc - per_class { &mut train } else { &mut heldout };
                dst.videos.push(self.videos[idx].clone());
                dst.labels.push(self.labels[idx]);
            }
        }
        Ok((train, heldout))
    }
}

/// Circular horizontal centroid of frame `t` in `[0, W)`: the phase of the
/// intensity-weighted mean unit phasor over columns. Wraparound-safe, which a
/// plain weighted mean is not.
pub fn horizontal_centroid(video: &VideoTensor, t: usize) -> f64 {
    let w = video.width() as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for y in 0..video.height() {
        for x in 0..video.width() {
            let p = video.pixel(t, y, x);
            let phase = std::f64::consts::TAU * x as f64 / w;
            re += p * phase.cos();
            im += p * phase.sin();
        }
    }
    (im.atan2(re) * w / std::f64::consts::TAU).rem_euclid(w)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn bar_spec() -> SyntheticSpec {
        SyntheticSpec {
            kind: DatasetKind::MovingBar,
            num_classes: 2,
            seq_len: 8,
            height: 16,
            width: 16,
            samples_per_class: 3,
            seed: 11,
        }
    }

    #[test]
    fn rendering_is_deterministic_and_in_range() {
        let a = synth_dataset(&bar_spec()).unwrap();
        let b = synth_dataset(&bar_spec()).unwrap();
        assert_eq!(a.len(), 6);
        for i in 0..a.len() {
            assert_eq!(a.video(i).data(), b.video(i).data());
            assert_eq!(a.video(i).frames(), 8);
            assert_eq!(a.video(i).height(), 16);
            assert!(a.video(i).data().iter().all(|p| (0.0..=1.0).contains(p)));
        }
        let balls = synth_dataset(&SyntheticSpec {
            kind: DatasetKind::BouncingBall,
            ..bar_spec()
        })
        .unwrap();
        assert!(balls.videos().iter().all(|v| v.data().iter().all(|p| (0.0..=1.0).contains(p))));
    }

    #[test]
    fn classes_are_balanced_and_class_major() {
        let spec = SyntheticSpec { num_classes: 3, ..bar_spec() };
        let ds = synth_dataset(&spec).unwrap();
        let labels: Vec<usize> = (0..ds.len()).map(|i| ds.label(i)).collect();
        assert_eq!(labels, vec![0, 0, 0, 1, 1, 1, 2, 2, 2]);
    }

    #[test]
    fn rightward_bar_centroid_strictly_increases_modulo_width() {
        let ds = synth_dataset(&bar_spec()).unwrap();
        let w = 16.0;
        // Class 0 is the rightward direction.
        for i in 0..ds.spec().samples_per_class {
            let video = ds.video(i);
            for t in 1..video.frames() {
                let prev = horizontal_centroid(video, t - 1);
                let curr = horizontal_centroid(video, t);
                let diff = (curr - prev).rem_euclid(w);
                assert!(
                    diff > 0.0 && diff < w / 2.0,
                    "frame {t}: centroid moved by {diff}, expected a small rightward step"
                );
            }
        }
    }

    #[test]
    fn ball_mass_is_conserved_within_the_frame() {
        let spec = SyntheticSpec {
            kind: DatasetKind::BouncingBall,
            num_classes: 2,
            seq_len: 12,
            height: 16,
            width: 16,
            samples_per_class: 2,
            seed: 5,
        };
        let ds = synth_dataset(&spec).unwrap();
        for video in ds.videos() {
            let base: f64 = video.frame(0).iter().sum();
            assert!(base > 1.0);
            for t in 1..video.frames() {
                let mass: f64 = video.frame(t).iter().sum();
                // The fold keeps the disc fully inside, so only subpixel
                // antialiasing moves the total.
                assert!(
                    (mass / base - 1.0).abs() < 0.3,
                    "frame {t} mass {mass} drifted from {base}"
                );
            }
        }
    }

    #[test]
    fn too_small_canvas_is_a_config_error() {
        let tiny = SyntheticSpec { height: 4, width: 4, ..bar_spec() };
        assert!(matches!(synth_dataset(&tiny), Err(Error::Config(_))));
        let tiny_ball = SyntheticSpec {
            kind: DatasetKind::BouncingBall,
            height: 5,
            width: 16,
            ..bar_spec()
        };
        assert!(matches!(synth_dataset(&tiny_ball), Err(Error::Config(_))));
    }

    #[test]
    fn heldout_split_is_balanced() {
        let spec = SyntheticSpec { samples_per_class: 5, ..bar_spec() };
        let ds = synth_dataset(&spec).unwrap();
        let (train, held) = ds.split_heldout(2).unwrap();
        assert_eq!(train.len(), 6);
        assert_eq!(held.len(), 4);
        for class in 0..2 {
            assert_eq!((0..train.len()).filter(|&i| train.label(i) == class).count(), 3);
            assert_eq!((0..held.len()).filter(|&i| held.label(i) == class).count(), 2);
        }
        // The held-out samples are the tail of each class, so they never
        // appear in the training half.
        assert!(ds.split_heldout(0).is_err());
        assert!(ds.split_heldout(5).is_err());
    }

    #[test]
    fn video_tensor_validates_shape_and_range() {
        assert!(VideoTensor::new(2, 2, 2, vec![0.0; 7]).is_err());
        assert!(VideoTensor::new(2, 2, 2, vec![1.5; 8]).is_err());
        let v = VideoTensor::new(2, 2, 2, vec![0.25; 8]).unwrap();
        assert_eq!(v.conv_input().shape(), &[1, 2, 2, 2]);
        assert_eq!(v.pixel(1, 1, 1), 0.25);
        let frames = vec![
            Tensor::new(vec![1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
            Tensor::new(vec![1, 2, 2], vec![0.5, 0.6, 0.7, 0.8]).unwrap(),
        ];
        let w = VideoTensor::from_frame_tensors(&frames).unwrap();
        assert_eq!(w.frame(1), &[0.5, 0.6, 0.7, 0.8]);
    }
}
