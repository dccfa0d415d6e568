//! Moving-square clips: a bright square drifts in one of four directions on
//! a dim noise background, and the direction is the class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::weakloc::{BBox, GtRecord};

pub const MIN_SIDE: usize = 6;
pub const MAX_SIDE: usize = 10;
pub const MAX_SPEED: f64 = 2.0;
pub const NOISE_MAX: f32 = 0.1;
pub const DIRECTIONS: [&str; 4] = ["up", "down", "left", "right"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_per_class: usize,
    pub classes: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl SynthConfig {
    pub fn new(seed: u64, n_per_class: usize) -> Self {
        SynthConfig { seed, n_per_class, classes: 4, frames: 16, height: 32, width: 32 }
    }
}

/// Clips `B×1×T×H×W` with labels and one box per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideoSet {
    pub clips: Tensor,
    pub labels: Vec<usize>,
    pub boxes: Vec<Vec<BBox>>,
    pub seed: u64,
    pub classes: usize,
}

impl SyntheticVideoSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn clip_id(&self, i: usize) -> String {
        format!("clip_{i:04}")
    }

    /// `1×T×H×W` clip `i`.
    pub fn clip(&self, i: usize) -> Result<Tensor> {
        self.clips.index_outer(i)
    }

    /// Clips at `indices` in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<SyntheticVideoSet> {
        let parts: Vec<Tensor> = indices.iter().map(|&i| self.clip(i)).collect::<Result<_>>()?;
        Ok(SyntheticVideoSet {
            clips: Tensor::stack(&parts)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            boxes: indices.iter().map(|&i| self.boxes[i].clone()).collect(),
            seed: self.seed,
            classes: self.classes,
        })
    }

    /// Stratified split: the last `⌈n·test_fraction⌉` clips of each class are
    /// held out. Returns train and test index lists.
    pub fn split_indices(&self, test_fraction: f64) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for c in 0..self.classes {
            let members: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == c).collect();
            let held = ((members.len() as f64) * test_fraction).ceil() as usize;
            let cut = members.len() - held.min(members.len());
            train.extend_from_slice(&members[..cut]);
            test.extend_from_slice(&members[cut..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        (train, test)
    }

    pub fn gt_records(&self, ids: impl Fn(usize) -> String) -> Vec<GtRecord> {
        self.boxes
            .iter()
            .enumerate()
            .flat_map(|(i, frames)| {
                let id = ids(i);
                let class = self.labels[i];
                frames
                    .iter()
                    .enumerate()
                    .map(move |(f, &b)| GtRecord { clip_id: id.clone(), frame: f, class, boxes: vec![b] })
            })
            .collect()
    }
}

/// Generates `n_per_class` clips per class, interleaved so clip `i` has class
/// `i mod classes`.
pub fn gen_synthetic_videos(cfg: &SynthConfig) -> Result<SyntheticVideoSet> {
    if cfg.n_per_class == 0 {
        return Err(Error::arg("n_per_class must be at least 1"));
    }
    if cfg.classes == 0 || cfg.classes > DIRECTIONS.len() {
        return Err(Error::arg(format!("classes must be 1..={}, got {}", DIRECTIONS.len(), cfg.classes)));
    }
    if cfg.frames == 0 {
        return Err(Error::arg("clips need at least one frame"));
    }
    let travel = cfg.frames - 1;
    let extent = cfg.height.min(cfg.width);
    let max_side = MAX_SIDE.min(extent.saturating_sub(travel));
    if max_side < MIN_SIDE {
        return Err(Error::arg(format!(
            "{}×{} frames cannot hold a {MIN_SIDE}px square moving 1px/frame over {} frames",
            cfg.height, cfg.width, cfg.frames
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (t, h, w) = (cfg.frames, cfg.height, cfg.width);
    let plane = h * w;
    let n = cfg.n_per_class * cfg.classes;
    let mut data = Vec::with_capacity(n * t * plane);
    let mut labels = Vec::with_capacity(n);
    let mut boxes = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % cfg.classes;
        let side = rng.gen_range(MIN_SIDE..=max_side);
        let along = if class < 2 { h } else { w };
        let across = if class < 2 { w } else { h };
        let top_speed = MAX_SPEED.min(if travel == 0 { MAX_SPEED } else { (along - side) as f64 / travel as f64 });
        let speed = if top_speed > 1.0 { rng.gen_range(1.0..=top_speed) } else { 1.0 };
        let span = (along - side) as f64 - speed * travel as f64;
        let start = rng.gen_range(0.0..=span.max(0.0));
        let cross = rng.gen_range(0..=across - side);
        let mut frames = Vec::with_capacity(t);
        for f in 0..t {
            let offset = (start + speed * f as f64).round() as usize;
            let pos = if class % 2 == 0 { along - side - offset } else { offset };
            let (x, y) = if class < 2 { (cross, pos) } else { (pos, cross) };
            let b = BBox { x0: x, y0: y, x1: x + side, y1: y + side };
            for yy in 0..h {
                for xx in 0..w {
                    data.push(if b.contains(xx, yy) { 1.0 } else { rng.gen_range(0.0..NOISE_MAX) });
                }
            }
            frames.push(b);
        }
        labels.push(class);
        boxes.push(frames);
    }
    Ok(SyntheticVideoSet { clips: Tensor::from_vec(&[n, 1, t, h, w], data)?, labels, boxes, seed: cfg.seed, classes: cfg.classes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig::new(3, 2);
        assert_eq!(gen_synthetic_videos(&cfg).unwrap(), gen_synthetic_videos(&cfg).unwrap());
        let other = gen_synthetic_videos(&SynthConfig::new(4, 2)).unwrap();
        assert_ne!(gen_synthetic_videos(&cfg).unwrap().clips, other.clips);
    }

    #[test]
    fn boxes_fit_and_classes_balance() {
        let set = gen_synthetic_videos(&SynthConfig::new(0, 5)).unwrap();
        assert_eq!(set.clips.dims(), &[20, 1, 16, 32, 32]);
        for c in 0..4 {
            assert_eq!(set.labels.iter().filter(|&&l| l == c).count(), 5);
        }
        for frames in &set.boxes {
            assert_eq!(frames.len(), 16);
            assert!(frames.iter().all(|b| b.fits(32, 32) && (MIN_SIDE..=MAX_SIDE).contains(&b.width())));
        }
    }

    #[test]
    fn square_moves_in_its_class_direction() {
        let set = gen_synthetic_videos(&SynthConfig::new(1, 3)).unwrap();
        for (frames, &label) in set.boxes.iter().zip(&set.labels) {
            let (a, b) = (frames[0], frames[15]);
            let (dx, dy) = (b.x0 as i64 - a.x0 as i64, b.y0 as i64 - a.y0 as i64);
            let expect = match label {
                0 => dy <= -15 && dx == 0,
                1 => dy >= 15 && dx == 0,
                2 => dx <= -15 && dy == 0,
                _ => dx >= 15 && dy == 0,
            };
            assert!(expect, "class {label}: moved ({dx}, {dy})");
            assert!(dx.abs().max(dy.abs()) <= 30);
        }
    }

    #[test]
    fn pixels_are_square_or_dim_noise() {
        let set = gen_synthetic_videos(&SynthConfig::new(2, 1)).unwrap();
        let clip = set.clip(0).unwrap();
        let b = set.boxes[0][4];
        for y in 0..32 {
            for x in 0..32 {
                let v = clip.get(&[0, 4, y, x]);
                if b.contains(x, y) {
                    assert_eq!(v, 1.0);
                } else {
                    assert!((0.0..NOISE_MAX).contains(&v));
                }
            }
        }
    }

    #[test]
    fn rejects_small_frames_and_many_classes() {
        let mut cfg = SynthConfig::new(0, 1);
        cfg.height = 20;
        assert!(matches!(gen_synthetic_videos(&cfg), Err(Error::Argument(_))));
        let mut cfg = SynthConfig::new(0, 1);
        cfg.classes = 5;
        assert!(matches!(gen_synthetic_videos(&cfg), Err(Error::Argument(_))));
        assert!(gen_synthetic_videos(&SynthConfig::new(0, 0)).is_err());
    }

    #[test]
    fn stratified_split() {
        let set = gen_synthetic_videos(&SynthConfig::new(0, 5)).unwrap();
        let (train, test) = set.split_indices(0.2);
        assert_eq!((train.len(), test.len()), (16, 4));
        let mut per_class = [0; 4];
        test.iter().for_each(|&i| per_class[set.labels[i]] += 1);
        assert_eq!(per_class, [1; 4]);
        let sub = set.subset(&test).unwrap();
        assert_eq!(sub.clips.dims()[0], 4);
    }
}
