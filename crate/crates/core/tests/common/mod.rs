//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use saliency3d::weakloc::{BBox, Frame};
use saliency3d::Tensor;

/// Continuous source coordinate of output sample `i` under corner alignment.
pub fn source_coord(i: usize, n_in: usize, n_out: usize) -> f64 {
    if n_in == 1 || n_out == 1 {
        0.0
    } else {
        i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
    }
}

/// Tent weight of source sample `j` at coordinate `x`.
pub fn tent(x: f64, j: usize) -> f64 {
    (1.0 - (x - j as f64).abs()).max(0.0)
}

/// Trilinear resampling by summing tent weights over every source voxel.
pub fn trilinear_oracle(src: &[f64], dims: [usize; 3], target: [usize; 3]) -> Vec<f64> {
    let [t, h, w] = dims;
    let mut out = Vec::with_capacity(target.iter().product());
    for ot in 0..target[0] {
        let ct = source_coord(ot, t, target[0]);
        for oh in 0..target[1] {
            let ch = source_coord(oh, h, target[1]);
            for ow in 0..target[2] {
                let cw = source_coord(ow, w, target[2]);
                let mut acc = 0.0;
                for jt in 0..t {
                    for jh in 0..h {
                        for jw in 0..w {
                            acc += tent(ct, jt) * tent(ch, jh) * tent(cw, jw) * src[(jt * h + jh) * w + jw];
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

pub fn bilinear_oracle(src: &[f64], dims: [usize; 2], target: [usize; 2]) -> Vec<f64> {
    trilinear_oracle(src, [1, dims[0], dims[1]], [1, target[0], target[1]])
}

/// `Σ_c` of a `C×rest` buffer.
pub fn channel_sum_oracle(t: &Tensor) -> Vec<f64> {
    let c = t.dims()[0];
    let per = t.len() / c;
    (0..per).map(|i| (0..c).map(|k| t.data()[k * per + i] as f64).sum()).collect()
}

fn normalize_relu_oracle(v: Vec<f64>) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m <= 0.0 {
        return vec![0.0; v.len()];
    }
    v.into_iter().map(|x| (x / m).max(0.0)).collect()
}

/// One layer's map: product of the normalized gradient and activation fields.
pub fn cam_oracle(alpha: &Tensor, grad: &Tensor, target: [usize; 3]) -> Vec<f64> {
    let d = alpha.dims();
    let native = match d.len() {
        4 => [d[1], d[2], d[3]],
        3 => [1, d[1], d[2]],
        _ => panic!("unsupported record rank"),
    };
    let b = normalize_relu_oracle(trilinear_oracle(&channel_sum_oracle(grad), native, target));
    let a = normalize_relu_oracle(trilinear_oracle(&channel_sum_oracle(alpha), native, target));
    b.iter().zip(&a).map(|(x, y)| x * y).collect()
}

pub fn sum_relu_oracle(maps: &[Vec<f64>]) -> Vec<f64> {
    (0..maps[0].len()).map(|i| maps.iter().map(|m| m[i]).sum::<f64>().max(0.0)).collect()
}

/// IoU by enumerating pixels of the bounding rectangle of both boxes.
pub fn iou_oracle(a: &BBox, b: &BBox) -> f64 {
    let inside = |bx: &BBox, x: usize, y: usize| x >= bx.x0 && x < bx.x1 && y >= bx.y0 && y < bx.y1;
    let (mut inter, mut union) = (0usize, 0usize);
    for y in a.y0.min(b.y0)..a.y1.max(b.y1) {
        for x in a.x0.min(b.x0)..a.x1.max(b.x1) {
            let (p, q) = (inside(a, x, y), inside(b, x, y));
            inter += (p && q) as usize;
            union += (p || q) as usize;
        }
    }
    inter as f64 / union as f64
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Component boxes by union-find over the pixel set `{v ≥ tau}`, as a set.
pub fn components_oracle(frame: &Frame, tau: f64, eight: bool) -> BTreeSet<(usize, usize, usize, usize)> {
    let (h, w) = (frame.height, frame.width);
    if !(frame.data.iter().any(|&v| v > 0.0)) {
        return BTreeSet::new();
    }
    let on = |x: usize, y: usize| frame.data[y * w + x] >= tau;
    let mut parent: Vec<usize> = (0..h * w).collect();
    for y in 0..h {
        for x in 0..w {
            if !on(x, y) {
                continue;
            }
            let mut nbrs = vec![];
            if x > 0 {
                nbrs.push((x - 1, y));
            }
            if y > 0 {
                nbrs.push((x, y - 1));
                if eight && x > 0 {
                    nbrs.push((x - 1, y - 1));
                }
                if eight && x + 1 < w {
                    nbrs.push((x + 1, y - 1));
                }
            }
            for (nx, ny) in nbrs {
                if on(nx, ny) {
                    let (a, b) = (find(&mut parent, y * w + x), find(&mut parent, ny * w + nx));
                    parent[a] = b;
                }
            }
        }
    }
    let mut boxes = std::collections::BTreeMap::new();
    for y in 0..h {
        for x in 0..w {
            if on(x, y) {
                let r = find(&mut parent, y * w + x);
                let e = boxes.entry(r).or_insert((x, y, x + 1, y + 1));
                *e = (e.0.min(x), e.1.min(y), e.2.max(x + 1), e.3.max(y + 1));
            }
        }
    }
    boxes.into_values().collect()
}

/// Exhaustive box accuracy: a table of best IoU per frame and τ, then
/// either per-frame maxima or one dataset-level τ per θ.
pub fn box_acc_oracle(frames: &[Frame], gt: &[Vec<BBox>], taus: &[f64], thetas: &[f64], all_contours: bool) -> Vec<f64> {
    let table: Vec<Vec<f64>> = frames
        .iter()
        .zip(gt)
        .map(|(f, g)| {
            taus.iter()
                .map(|&tau| {
                    let mut best: f64 = 0.0;
                    for (x0, y0, x1, y1) in components_oracle(f, tau, true) {
                        let p = BBox { x0, y0, x1, y1 };
                        for b in g {
                            best = best.max(iou_oracle(&p, b));
                        }
                    }
                    best
                })
                .collect()
        })
        .collect();
    let n = frames.len() as f64;
    thetas
        .iter()
        .map(|&theta| {
            if all_contours {
                (0..taus.len()).map(|k| table.iter().filter(|r| r[k] >= theta).count()).max().unwrap() as f64 / n
            } else {
                table.iter().filter(|r| r.iter().any(|&v| v >= theta)).count() as f64 / n
            }
        })
        .collect()
}

/// Colormap from the stop table by segment index `floor(4v)`.
pub fn color_oracle(v: f64) -> [u8; 3] {
    const C: [[f64; 3]; 5] =
        [[0.0, 0.0, 255.0], [0.0, 255.0, 255.0], [0.0, 255.0, 0.0], [255.0, 255.0, 0.0], [255.0, 0.0, 0.0]];
    let v = v.clamp(0.0, 1.0);
    let k = ((v * 4.0).floor() as usize).min(3);
    let f = v * 4.0 - k as f64;
    std::array::from_fn(|c| (C[k][c] + (C[k + 1][c] - C[k][c]) * f + 0.5).floor() as u8)
}

/// ATC1 bytes assembled field by field.
pub fn container_bytes_oracle(dims: &[usize], data: &[f32]) -> Vec<u8> {
    let mut out = b"ATC1".to_vec();
    out.extend(1u32.to_le_bytes());
    out.push(1);
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend((d as u64).to_le_bytes());
    }
    for v in data {
        out.extend(v.to_le_bytes());
    }
    out
}

/// Deterministic pseudo-random `f32` buffer in `[lo, hi)`.
pub fn noise(seed: u64, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub mod golden;
