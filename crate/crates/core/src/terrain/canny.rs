use std::collections::VecDeque;

use super::GrayImage;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CannyParams {
    pub sigma: f64,
    /// Hysteresis thresholds as fractions of the maximum gradient magnitude.
    pub low: f64,
    pub high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        CannyParams {
            sigma: 1.4,
            low: 0.1,
            high: 0.3,
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    // 5x5 at the default sigma, growing for wider blurs.
    let radius = ((1.5 * sigma).round() as usize).max(2);
    let k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable blur with clamp-to-edge borders.
fn blur(src: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let r = kernel.len() / 2;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * src[y * w + clamp(x as isize + k as isize - r as isize, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[clamp(y as isize + k as isize - r as isize, h) * w + x])
                .sum();
        }
    }
    out
}

/// Canny edge detector: Gaussian blur, central-difference gradients,
/// non-maximum suppression over four orientations, double threshold and
/// 8-connected hysteresis. Output is binary (0.0 / 1.0).
pub fn canny_edges(image: &GrayImage, params: CannyParams) -> GrayImage {
    assert!(
        params.sigma > 0.0 && 0.0 < params.low && params.low < params.high && params.high <= 1.0,
        "invalid Canny parameters {params:?}"
    );
    let (h, w) = (image.height(), image.width());
    let src: Vec<f64> = image.data().iter().map(|&v| f64::from(v)).collect();
    let s = blur(&src, h, w, &gaussian_kernel(params.sigma));

    let at = |y: isize, x: isize| -> f64 {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        s[y * w + x]
    };
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    let mut mag = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = 0.5 * (at(y, x + 1) - at(y, x - 1));
            gy[i] = 0.5 * (at(y + 1, x) - at(y - 1, x));
            mag[i] = gx[i].hypot(gy[i]);
        }
    }
    let max = mag.iter().cloned().fold(0.0, f64::max);
    let mut out = vec![0.0f32; h * w];
    if max <= 1e-12 {
        return GrayImage::from_vec(h, w, out).unwrap();
    }
    // Magnitudes closer than this are ties; a tie is kept only on the side
    // facing the negative offset, so ideal steps yield one-pixel lines.
    let eps = 1e-9 * max;

    let mut thin = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = mag[i];
            if m <= eps {
                continue;
            }
            let angle = gy[i].atan2(gx[i]).to_degrees().rem_euclid(180.0);
            let (dy, dx): (isize, isize) = if !(22.5..157.5).contains(&angle) {
                (0, 1)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let nb = |sy: isize, sx: isize| -> f64 {
                let ny = y as isize + sy;
                let nx = x as isize + sx;
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    0.0
                } else {
                    mag[ny as usize * w + nx as usize]
                }
            };
            let before = nb(-dy, -dx);
            let after = nb(dy, dx);
            if m > before + eps && m >= after - eps {
                thin[i] = m;
            }
        }
    }

    let hi = params.high * max;
    let lo = params.low * max;
    let mut queue = VecDeque::new();
    for i in 0..h * w {
        if thin[i] >= hi {
            out[i] = 1.0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if out[j] == 0.0 && thin[j] >= lo {
                    out[j] = 1.0;
                    queue.push_back(j);
                }
            }
        }
    }
    GrayImage::from_vec(h, w, out).unwrap()
}
