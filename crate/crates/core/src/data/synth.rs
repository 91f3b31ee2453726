//! Procedural scenes with a known saliency density per domain.
//!
//! Every scene puts a single anisotropic Gaussian on one constructed
//! structure: the saturated disk (natural domains), the left edge of the
//! text band (e-commerce) or the bright cell (UI). Natural-mouse maps are
//! wider than natural-eye maps.

use crate::blocks::DomainLabel;
use crate::error::{Result, SumError};
use crate::tensor::SplitMix64;

pub const FIXATIONS: usize = 20;

/// Axis-aligned pixel box, end-exclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Region {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }

    fn overlaps(&self, o: &Region) -> bool {
        self.x0 < o.x1 && o.x0 < self.x1 && self.y0 < o.y1 && o.y0 < self.y1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub size: usize,
    pub label: DomainLabel,
    /// `S*S*3` bytes, row-major.
    pub image: Vec<u8>,
    /// Exact density, sums to 1.
    pub density: Vec<f64>,
    /// Density scaled to a peak of 255 and rounded.
    pub map: Vec<u8>,
    /// Pixel indices, distinct.
    pub fixations: Vec<usize>,
    /// The structure the density is centered on.
    pub salient: Region,
}

struct Canvas {
    s: usize,
    px: Vec<f64>,
}

impl Canvas {
    fn new(s: usize, rng: &mut SplitMix64, base: f64, noise: f64) -> Self {
        let mut px = Vec::with_capacity(s * s * 3);
        for _ in 0..s * s {
            let v = base + rng.uniform(-noise, noise);
            px.extend([v, v, v]);
        }
        Self { s, px }
    }

    fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let o = (y * self.s + x) * 3;
        self.px[o..o + 3].copy_from_slice(&rgb);
    }

    fn disk(&mut self, cx: usize, cy: usize, r: usize, rgb: [f64; 3]) -> Region {
        let r2 = (r * r) as isize;
        for y in cy.saturating_sub(r)..(cy + r + 1).min(self.s) {
            for x in cx.saturating_sub(r)..(cx + r + 1).min(self.s) {
                let (dx, dy) = (x as isize - cx as isize, y as isize - cy as isize);
                if dx * dx + dy * dy <= r2 {
                    self.set(x, y, rgb);
                }
            }
        }
        Region {
            x0: cx.saturating_sub(r),
            y0: cy.saturating_sub(r),
            x1: (cx + r + 1).min(self.s),
            y1: (cy + r + 1).min(self.s),
        }
    }

    fn rect(&mut self, r: Region, rgb: [f64; 3]) {
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                self.set(x, y, rgb);
            }
        }
    }

    /// Glyph-like dark bars separated by light gaps and occasional spaces.
    fn text_band(&mut self, r: Region, rng: &mut SplitMix64) {
        self.rect(r, [0.97, 0.97, 0.97]);
        let mut x = r.x0;
        while x < r.x1 {
            let word = 2 + rng.below(4);
            for _ in 0..word {
                for dx in 0..2 {
                    if x + dx < r.x1 {
                        for y in r.y0 + 1..r.y1.saturating_sub(1) {
                            self.set(x + dx, y, [0.08, 0.08, 0.1]);
                        }
                    }
                }
                x += 3;
            }
            x += 2;
        }
    }

    fn bytes(&self) -> Vec<u8> {
        self.px.iter().map(|&v| super::netpbm::quantize(v)).collect()
    }
}

const HUES: [[f64; 3]; 6] = [
    [0.95, 0.1, 0.1],
    [0.1, 0.85, 0.15],
    [0.15, 0.25, 0.95],
    [0.95, 0.85, 0.05],
    [0.9, 0.1, 0.85],
    [0.05, 0.85, 0.9],
];

fn pick(rng: &mut SplitMix64, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

struct Density {
    cx: f64,
    cy: f64,
    sx: f64,
    sy: f64,
}

fn render_density(s: usize, d: &Density) -> Vec<f64> {
    let mut g: Vec<f64> = (0..s * s)
        .map(|i| {
            let (x, y) = ((i % s) as f64 + 0.5, (i / s) as f64 + 0.5);
            let (u, v) = ((x - d.cx) / d.sx, (y - d.cy) / d.sy);
            (-0.5 * (u * u + v * v)).exp()
        })
        .collect();
    let total: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= total);
    g
}

/// Peak-scaled 8-bit quantization of a density.
pub fn quantize_map(density: &[f64]) -> Vec<u8> {
    let peak = density.iter().cloned().fold(0.0, f64::max);
    density.iter().map(|&v| (255.0 * v / peak).round() as u8).collect()
}

/// `k` distinct pixels drawn without replacement, each draw proportional to
/// the remaining quantized map mass.
pub fn sample_fixations(map: &[u8], k: usize, rng: &mut SplitMix64) -> Result<Vec<usize>> {
    let mut w: Vec<u64> = map.iter().map(|&b| b as u64).collect();
    if w.iter().filter(|&&v| v > 0).count() < k {
        return Err(SumError::Config(format!("map has fewer than {k} nonzero pixels")));
    }
    let mut total: u64 = w.iter().sum();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut r = (rng.next_f64() * total as f64) as u64;
        let mut pick = w.len();
        for (i, &v) in w.iter().enumerate() {
            if r < v {
                pick = i;
                break;
            }
            r -= v;
        }
        // guard against float rounding at the top end
        if pick == w.len() {
            pick = w.iter().rposition(|&v| v > 0).expect("positive mass");
        }
        total -= w[pick];
        w[pick] = 0;
        out.push(pick);
    }
    Ok(out)
}

fn check_size(s: usize) -> Result<()> {
    if s < 32 || !s.is_multiple_of(32) {
        return Err(SumError::Config(format!("scene size must be a positive multiple of 32, got {s}")));
    }
    Ok(())
}

fn finish(s: usize, label: DomainLabel, canvas: &Canvas, d: Density, salient: Region, rng: &mut SplitMix64) -> Result<Scene> {
    let density = render_density(s, &d);
    let map = quantize_map(&density);
    let fixations = sample_fixations(&map, FIXATIONS, rng)?;
    Ok(Scene {
        size: s,
        label,
        image: canvas.bytes(),
        density,
        map,
        fixations,
        salient,
    })
}

fn eye_sigma(s: usize) -> f64 {
    s as f64 / 42.0
}

fn natural(s: usize, label: DomainLabel, rng: &mut SplitMix64) -> Result<Scene> {
    let f = s as f64;
    let base = rng.uniform(0.35, 0.55);
    let mut c = Canvas::new(s, rng, base, 0.08);
    let margin = s / 8;
    let r = pick(rng, s / 16, s / 10);
    let (cx, cy) = (pick(rng, margin, s - margin), pick(rng, margin, s - margin));
    let target = Region {
        x0: cx.saturating_sub(r),
        y0: cy.saturating_sub(r),
        x1: cx + r + 1,
        y1: cy + r + 1,
    };
    // pale distractors away from the target
    let distractors = 1 + rng.below(2);
    for _ in 0..distractors {
        for _attempt in 0..16 {
            let dr = pick(rng, s / 16, s / 10);
            let (dx, dy) = (pick(rng, dr, s - dr - 1), pick(rng, dr, s - dr - 1));
            let area = Region {
                x0: dx - dr,
                y0: dy - dr,
                x1: dx + dr + 1,
                y1: dy + dr + 1,
            };
            if !area.overlaps(&target) {
                let g = (base + rng.uniform(-0.15, 0.15)).clamp(0.0, 1.0);
                c.disk(dx, dy, dr, [g, g, g * 0.95]);
                break;
            }
        }
    }
    let hue = HUES[rng.below(HUES.len())];
    let salient = c.disk(cx, cy, r, hue);
    let sigma = if label == DomainLabel::NaturalMouse { f / 34.0 } else { eye_sigma(s) };
    let d = Density {
        cx: cx as f64 + 0.5,
        cy: cy as f64 + 0.5,
        sx: sigma,
        sy: sigma,
    };
    finish(s, label, &c, d, salient, rng)
}

struct Storefront {
    canvas: Canvas,
    band: Region,
    band_y: usize,
    blob: Region,
    blob_center: (usize, usize),
}

fn storefront(s: usize, rng: &mut SplitMix64) -> Storefront {
    let light = rng.uniform(0.82, 0.92);
    let mut c = Canvas::new(s, rng, light, 0.03);
    let margin = s / 8;
    let bh = (s / 10).max(4);
    let bw = pick(rng, s / 3, s * 9 / 20);
    let x0 = pick(rng, margin, s - margin - bw);
    let y0 = pick(rng, margin, s - margin - bh);
    let band = Region {
        x0,
        y0,
        x1: x0 + bw,
        y1: y0 + bh,
    };
    c.text_band(band, rng);
    let r = pick(rng, s / 14, s / 9);
    let mut center = (0, 0);
    let mut blob = band;
    for attempt in 0..64 {
        let (cx, cy) = (pick(rng, margin, s - margin), pick(rng, margin, s - margin));
        let area = Region {
            x0: cx.saturating_sub(r + 1),
            y0: cy.saturating_sub(r + 1),
            x1: cx + r + 2,
            y1: cy + r + 2,
        };
        if !area.overlaps(&band) || attempt == 63 {
            let hue = HUES[rng.below(HUES.len())];
            blob = c.disk(cx, cy, r, hue);
            center = (cx, cy);
            if !area.overlaps(&band) {
                break;
            }
        }
    }
    // repaint the band in case the fallback blob landed on it
    if blob.overlaps(&band) {
        c.text_band(band, rng);
    }
    Storefront {
        canvas: c,
        band,
        band_y: y0 + bh / 2,
        blob,
        blob_center: center,
    }
}

fn band_density(s: usize, shop: &Storefront) -> Density {
    let f = s as f64;
    Density {
        cx: shop.band.x0 as f64 + 0.5,
        cy: shop.band_y as f64 + 0.5,
        sx: f / 28.0,
        sy: f / 56.0,
    }
}

fn ecommerce(s: usize, rng: &mut SplitMix64) -> Result<Scene> {
    let shop = storefront(s, rng);
    let d = band_density(s, &shop);
    finish(s, DomainLabel::ECommerce, &shop.canvas, d, shop.band, rng)
}

fn ui(s: usize, rng: &mut SplitMix64) -> Result<Scene> {
    let mut c = Canvas::new(s, rng, 0.5, 0.02);
    let cell = s / 4;
    let (br, bc) = (rng.below(2), rng.below(2));
    let mut salient = Region {
        x0: 0,
        y0: 0,
        x1: 0,
        y1: 0,
    };
    for row in 0..4 {
        for col in 0..4 {
            let r = Region {
                x0: col * cell + 2,
                y0: row * cell + 2,
                x1: (col + 1) * cell - 2,
                y1: (row + 1) * cell - 2,
            };
            if (row, col) == (br, bc) {
                c.rect(r, [1.0, 1.0, 1.0]);
                salient = r;
            } else {
                let g = rng.uniform(0.25, 0.6);
                c.rect(r, [g, g, g + 0.05]);
                if rng.below(3) == 0 {
                    let icon = Region {
                        x0: r.x0 + 2,
                        y0: r.y0 + 2,
                        x1: r.x0 + 2 + cell / 4,
                        y1: r.y0 + 2 + cell / 4,
                    };
                    c.rect(icon, [0.12, 0.12, 0.15]);
                }
            }
        }
    }
    let d = Density {
        cx: (bc * cell + cell / 2) as f64 + 0.5,
        cy: (br * cell + cell / 2) as f64 + 0.5,
        sx: s as f64 / 40.0,
        sy: s as f64 / 40.0,
    };
    finish(s, DomainLabel::Ui, &c, d, salient, rng)
}

/// One scene of the given domain, fully determined by `seed`.
pub fn render(label: DomainLabel, size: usize, seed: u64) -> Result<Scene> {
    check_size(size)?;
    let mut rng = SplitMix64::new(seed);
    match label {
        DomainLabel::NaturalMouse | DomainLabel::NaturalEye => natural(size, label, &mut rng),
        DomainLabel::ECommerce => ecommerce(size, &mut rng),
        DomainLabel::Ui => ui(size, &mut rng),
    }
}

/// One image with both a saturated disk and a text band, and two targets:
/// the natural-eye scene fixates the disk, the e-commerce scene the band.
pub fn render_conflict(size: usize, seed: u64) -> Result<[Scene; 2]> {
    check_size(size)?;
    let mut rng = SplitMix64::new(seed);
    let shop = storefront(size, &mut rng);
    let sigma = eye_sigma(size);
    let (cx, cy) = shop.blob_center;
    let on_blob = Density {
        cx: cx as f64 + 0.5,
        cy: cy as f64 + 0.5,
        sx: sigma,
        sy: sigma,
    };
    let eye = finish(size, DomainLabel::NaturalEye, &shop.canvas, on_blob, shop.blob, &mut rng)?;
    let d = band_density(size, &shop);
    let shop_scene = finish(size, DomainLabel::ECommerce, &shop.canvas, d, shop.band, &mut rng)?;
    Ok([eye, shop_scene])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argmax(v: &[f64]) -> usize {
        let mut best = 0;
        for (i, x) in v.iter().enumerate() {
            if *x > v[best] {
                best = i;
            }
        }
        best
    }

    #[test]
    fn density_sums_to_one_and_peaks_on_structure() {
        for d in DomainLabel::ALL {
            for seed in 0..6 {
                let sc = render(d, 64, seed).unwrap();
                let total: f64 = sc.density.iter().sum();
                assert!((total - 1.0).abs() < 1e-9);
                let a = argmax(&sc.density);
                assert!(sc.salient.contains(a % 64, a / 64), "{d:?} seed {seed}");
                assert_eq!(sc.map.iter().copied().max(), Some(255));
                assert_eq!(sc.image.len(), 64 * 64 * 3);
            }
        }
    }

    #[test]
    fn ui_peak_in_top_left_quadrant() {
        for seed in 0..10 {
            let sc = render(DomainLabel::Ui, 64, seed).unwrap();
            let a = argmax(&sc.density);
            assert!(a % 64 < 32 && a / 64 < 32);
        }
    }

    #[test]
    fn mouse_maps_are_wider_than_eye_maps() {
        let spread = |d| {
            let sc = render(d, 64, 3).unwrap();
            sc.map.iter().filter(|&&b| b > 0).count()
        };
        assert!(spread(DomainLabel::NaturalMouse) > spread(DomainLabel::NaturalEye));
    }

    #[test]
    fn fixations_are_distinct_and_on_mass() {
        for d in DomainLabel::ALL {
            let sc = render(d, 64, 9).unwrap();
            assert_eq!(sc.fixations.len(), FIXATIONS);
            let mut f = sc.fixations.clone();
            f.sort_unstable();
            f.dedup();
            assert_eq!(f.len(), FIXATIONS);
            assert!(sc.fixations.iter().all(|&i| sc.map[i] > 0));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(render(DomainLabel::ECommerce, 64, 5).unwrap(), render(DomainLabel::ECommerce, 64, 5).unwrap());
        assert_ne!(render(DomainLabel::ECommerce, 64, 5).unwrap().image, render(DomainLabel::ECommerce, 64, 6).unwrap().image);
    }

    #[test]
    fn conflict_pair_shares_image_with_distinct_targets() {
        for seed in 0..6 {
            let [eye, shop] = render_conflict(64, seed).unwrap();
            assert_eq!(eye.image, shop.image);
            assert_eq!(eye.label, DomainLabel::NaturalEye);
            assert_eq!(shop.label, DomainLabel::ECommerce);
            let (a, b) = (argmax(&eye.density), argmax(&shop.density));
            assert!(eye.salient.contains(a % 64, a / 64));
            assert!(shop.salient.contains(b % 64, b / 64));
            let dist = ((a % 64) as f64 - (b % 64) as f64).hypot((a / 64) as f64 - (b / 64) as f64);
            assert!(dist > 4.0, "targets too close: {dist}");
        }
    }

    #[test]
    fn sampling_respects_weights() {
        let mut map = vec![0u8; 30];
        map[3] = 255;
        map[7] = 1;
        let mut rng = SplitMix64::new(1);
        let mut first = [0usize; 2];
        for _ in 0..200 {
            let f = sample_fixations(&map, 2, &mut rng).unwrap();
            first[(f[0] == 7) as usize] += 1;
        }
        assert!(first[0] > 190);
        assert!(sample_fixations(&map, 3, &mut rng).is_err());
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(render(DomainLabel::Ui, 48, 0).is_err());
        assert!(render(DomainLabel::Ui, 0, 0).is_err());
    }
}
