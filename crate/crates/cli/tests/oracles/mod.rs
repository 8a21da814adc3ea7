//! Straightforward reference implementations used to check the optimized
//! library code. Nothing here calls into the code under test.

#![allow(dead_code)]

/// Plain `width x height x channels` image, row-major interleaved.
pub struct Img<'a> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: &'a [f64],
}

impl Img<'_> {
    /// Zero outside the image.
    fn at(&self, x: i64, y: i64, c: usize) -> f64 {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            0.0
        } else {
            self.pixels[(y as usize * self.width + x as usize) * self.channels + c]
        }
    }
}

/// Per-pixel SSIM by direct evaluation of every zero-padded `n x n` window:
/// means over n^2 samples, (co)variances over n^2 - 1, then the product of
/// luminance, contrast and structure terms with C3 = C2 / 2.
pub fn ssim_map(a: &Img, b: &Img, n: usize, k1: f64, k2: f64, range: f64) -> Vec<f64> {
    let c1 = (k1 * range) * (k1 * range);
    let c2 = (k2 * range) * (k2 * range);
    let c3 = c2 / 2.0;
    let r = (n / 2) as i64;
    let count = (n * n) as f64;
    let mut out = vec![0.0; a.pixels.len()];
    for y in 0..a.height {
        for x in 0..a.width {
            for c in 0..a.channels {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for dy in -r..=r {
                    for dx in -r..=r {
                        xs.push(a.at(x as i64 + dx, y as i64 + dy, c));
                        ys.push(b.at(x as i64 + dx, y as i64 + dy, c));
                    }
                }
                let mut mx = 0.0;
                let mut my = 0.0;
                for i in 0..xs.len() {
                    mx += xs[i];
                    my += ys[i];
                }
                mx /= count;
                my /= count;
                let mut vx = 0.0;
                let mut vy = 0.0;
                let mut cxy = 0.0;
                for i in 0..xs.len() {
                    vx += (xs[i] - mx) * (xs[i] - mx);
                    vy += (ys[i] - my) * (ys[i] - my);
                    cxy += (xs[i] - mx) * (ys[i] - my);
                }
                let sx = (vx / (count - 1.0)).sqrt();
                let sy = (vy / (count - 1.0)).sqrt();
                let sxy = cxy / (count - 1.0);
                let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
                let con = (2.0 * sx * sy + c2) / (sx * sx + sy * sy + c2);
                let st = (sxy + c3) / (sx * sy + c3);
                out[(y * a.width + x) * a.channels + c] = l * con * st;
            }
        }
    }
    out
}

/// Fake iff strictly more than `fraction` of the faces score strictly above
/// `threshold`. Returns (is_fake, fake face count).
pub fn aggregate(probs: &[f64], threshold: f64, fraction: f64) -> (bool, usize) {
    let mut k = 0;
    for &p in probs {
        if p > threshold {
            k += 1;
        }
    }
    let share = k as f64 / probs.len() as f64;
    (share > fraction, k)
}

/// ROC AUC as the trapezoidal area under the (FPR, TPR) staircase obtained by
/// sweeping the decision threshold over every distinct score, highest first.
pub fn trapezoid_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let p = positive.iter().filter(|&&b| b).count() as f64;
    let n = positive.len() as f64 - p;
    let mut cuts: Vec<f64> = scores.to_vec();
    cuts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    cuts.dedup();
    let mut pts = vec![(0.0, 0.0)];
    for &t in &cuts {
        let mut tp = 0.0;
        let mut fp = 0.0;
        for (s, &pos) in scores.iter().zip(positive) {
            if *s >= t {
                if pos {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        pts.push((fp / n, tp / p));
    }
    let mut area = 0.0;
    for w in pts.windows(2) {
        area += (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0;
    }
    area
}

/// eta * (mean squared error on the fake grid + mean squared error on the
/// real grid), with explicit index loops.
pub fn discriminator_loss(
    fake_t: &[f64],
    fake_p: &[f64],
    real_t: &[f64],
    real_p: &[f64],
    eta: f64,
) -> f64 {
    let mut f = 0.0;
    for i in 0..fake_t.len() {
        f += (fake_t[i] - fake_p[i]) * (fake_t[i] - fake_p[i]);
    }
    let mut r = 0.0;
    for i in 0..real_t.len() {
        r += (real_t[i] - real_p[i]) * (real_t[i] - real_p[i]);
    }
    eta * (f / fake_t.len() as f64 + r / real_t.len() as f64)
}
