//! Gradient-based circular Hough transform: every pixel with a significant
//! gradient votes along its gradient direction at radial distances in
//! `[r_min, r_max]`, depositing its gradient magnitude. Seeds are the
//! non-maximum-suppressed local maxima of the radially summed accumulator.

use crate::error::{Error, Result};
use crate::image::{GrayImage, VectorField};

/// Pixels with gradient magnitude below this floor do not vote.
pub const GRADIENT_NOISE_FLOOR: f64 = 0.01;

/// Which side of the gradient vector votes are cast on. Bright membranes on
/// a dark background vote toward the center with `Minus`; `Both` covers
/// either contrast polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VoteDirection {
    Plus,
    Minus,
    #[default]
    Both,
}

impl std::str::FromStr for VoteDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plus" => Ok(VoteDirection::Plus),
            "minus" => Ok(VoteDirection::Minus),
            "both" => Ok(VoteDirection::Both),
            other => Err(Error::Parameter(format!(
                "vote direction must be plus, minus or both, got `{other}`"
            ))),
        }
    }
}

/// Vote accumulator indexed by `(x, y, r)` for integer radii in
/// `[r_min, r_max]`.
#[derive(Debug, Clone)]
pub struct HoughAccumulator {
    width: u32,
    height: u32,
    r_min: u32,
    r_max: u32,
    votes: Vec<f64>,
}

impl HoughAccumulator {
    fn zeros(width: u32, height: u32, r_min: u32, r_max: u32) -> Self {
        let n_r = (r_max - r_min + 1) as usize;
        Self {
            width,
            height,
            r_min,
            r_max,
            votes: vec![0.0; (width as usize) * (height as usize) * n_r],
        }
    }

    #[inline]
    fn idx(&self, x: u32, y: u32, r: u32) -> usize {
        let n_r = (self.r_max - self.r_min + 1) as usize;
        ((y as usize) * (self.width as usize) + (x as usize)) * n_r + (r - self.r_min) as usize
    }

    #[inline]
    pub fn votes(&self, x: u32, y: u32, r: u32) -> f64 {
        self.votes[self.idx(x, y, r)]
    }

    /// Sum of votes over all radii at a position.
    pub fn radial_sum(&self, x: u32, y: u32) -> f64 {
        (self.r_min..=self.r_max).map(|r| self.votes(x, y, r)).sum()
    }

    /// Radius with the strongest vote at a position (smallest wins ties).
    pub fn best_radius(&self, x: u32, y: u32) -> u32 {
        let mut best_r = self.r_min;
        let mut best_v = self.votes(x, y, self.r_min);
        for r in self.r_min + 1..=self.r_max {
            let v = self.votes(x, y, r);
            if v > best_v {
                best_v = v;
                best_r = r;
            }
        }
        best_r
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn r_min(&self) -> u32 {
        self.r_min
    }

    pub fn r_max(&self) -> u32 {
        self.r_max
    }
}

/// Candidate cell center with estimated radius and accumulated score.
#[derive(Debug, Clone, PartialEq)]
pub struct Seed {
    pub x: u32,
    pub y: u32,
    /// Radial distance, the argmax radius of the accumulator at the seed.
    pub r_c: u32,
    /// Radially summed vote mass at the seed position.
    pub score: f64,
}

/// Casts the gradient votes of every pixel into a fresh accumulator.
pub fn hough_accumulate(
    img: &GrayImage,
    field: &VectorField,
    r_min: u32,
    r_max: u32,
    direction: VoteDirection,
) -> Result<HoughAccumulator> {
    let (w, h) = (img.width(), img.height());
    if field.width() != w || field.height() != h {
        return Err(Error::Dimension(format!(
            "gradient field {}x{} does not match image {w}x{h}",
            field.width(),
            field.height()
        )));
    }
    if r_min < 1 || r_min > r_max || (r_max as u64) * 2 >= w.min(h) as u64 {
        return Err(Error::Parameter(format!(
            "radius range [{r_min}, {r_max}] invalid for a {w}x{h} image"
        )));
    }
    let mut acc = HoughAccumulator::zeros(w, h, r_min, r_max);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (field.dx(x, y), field.dy(x, y));
            let mag = dx.hypot(dy);
            if mag < GRADIENT_NOISE_FLOOR {
                continue;
            }
            let (ux, uy) = (dx / mag, dy / mag);
            for r in r_min..=r_max {
                let rf = r as f64;
                if matches!(direction, VoteDirection::Plus | VoteDirection::Both) {
                    cast_vote(&mut acc, x as f64 + rf * ux, y as f64 + rf * uy, r, mag);
                }
                if matches!(direction, VoteDirection::Minus | VoteDirection::Both) {
                    cast_vote(&mut acc, x as f64 - rf * ux, y as f64 - rf * uy, r, mag);
                }
            }
        }
    }
    Ok(acc)
}

#[inline]
fn cast_vote(acc: &mut HoughAccumulator, tx: f64, ty: f64, r: u32, mag: f64) {
    let xi = tx.round() as i64;
    let yi = ty.round() as i64;
    if xi >= 0 && yi >= 0 && (xi as u64) < acc.width as u64 && (yi as u64) < acc.height as u64 {
        let i = acc.idx(xi as u32, yi as u32, r);
        acc.votes[i] += mag;
    }
}

/// Extracts seeds: positions whose radially summed vote reaches
/// `rel_threshold` times the global maximum and survive greedy non-maximum
/// suppression over a disk of `nms_radius` pixels. Sorted by descending
/// score.
pub fn detect_seeds(
    acc: &HoughAccumulator,
    rel_threshold: f64,
    nms_radius: u32,
) -> Result<Vec<Seed>> {
    if !(rel_threshold > 0.0 && rel_threshold <= 1.0) {
        return Err(Error::Parameter(format!(
            "relative threshold must be in (0, 1], got {rel_threshold}"
        )));
    }
    let (w, h) = (acc.width, acc.height);
    let mut sums = vec![0.0f64; (w as usize) * (h as usize)];
    let mut global_max = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let s = acc.radial_sum(x, y);
            sums[(y as usize) * (w as usize) + (x as usize)] = s;
            if s > global_max {
                global_max = s;
            }
        }
    }
    if global_max <= 0.0 {
        return Ok(Vec::new());
    }
    let threshold = rel_threshold * global_max;
    let mut candidates: Vec<(f64, u32, u32)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let s = sums[(y as usize) * (w as usize) + (x as usize)];
            if s >= threshold {
                candidates.push((s, x, y));
            }
        }
    }
    // strongest first; position breaks ties deterministically
    candidates.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.2.cmp(&b.2))
            .then(a.1.cmp(&b.1))
    });
    let nms_sq = (nms_radius as u64) * (nms_radius as u64);
    let mut seeds: Vec<Seed> = Vec::new();
    'next: for (score, x, y) in candidates {
        for s in &seeds {
            let dx = (s.x as i64 - x as i64).unsigned_abs();
            let dy = (s.y as i64 - y as i64).unsigned_abs();
            if dx * dx + dy * dy <= nms_sq {
                continue 'next;
            }
        }
        seeds.push(Seed {
            x,
            y,
            r_c: acc.best_radius(x, y),
            score,
        });
    }
    Ok(seeds)
}
