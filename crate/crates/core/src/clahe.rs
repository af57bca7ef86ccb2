//! Contrast-limited adaptive histogram equalization over a tiled region grid.
//!
//! The image is split into near-equal rectangular regions, each region's
//! histogram is clipped to a slope limit and redistributed, and per-region
//! transfer functions are blended bilinearly between region centers to
//! remove tile seams.

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Parameters of the CLAHE stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClaheParams {
    pub tiles_x: u32,
    pub tiles_y: u32,
    /// Number of gray levels N used for histograms and transfer functions.
    pub n_bins: u32,
    /// Clip factor alpha, in percent (alpha = 0 disables slope headroom).
    pub alpha: f64,
    /// Maximum transfer-function slope.
    pub s_max: f64,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self {
            tiles_x: 8,
            tiles_y: 8,
            n_bins: 256,
            alpha: 100.0,
            s_max: 4.0,
        }
    }
}

impl ClaheParams {
    pub fn validate(&self) -> Result<()> {
        if self.tiles_x < 2 || self.tiles_y < 2 {
            return Err(Error::Parameter(format!(
                "tile grid must be at least 2x2, got {}x{}",
                self.tiles_x, self.tiles_y
            )));
        }
        if self.n_bins < 2 {
            return Err(Error::Parameter(format!(
                "need at least 2 gray levels, got {}",
                self.n_bins
            )));
        }
        if self.alpha < 0.0 {
            return Err(Error::Parameter(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.s_max < 1.0 {
            return Err(Error::Parameter(format!("s_max must be >= 1, got {}", self.s_max)));
        }
        Ok(())
    }
}

/// Position class of a region in the tile grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionClass {
    Corner,
    Border,
    Inner,
}

/// One rectangular tile.
#[derive(Debug, Clone, Copy)]
pub struct Region {
    pub x0: u32,
    pub y0: u32,
    pub width: u32,
    pub height: u32,
    pub class: RegionClass,
}

impl Region {
    /// Tile center in pixel coordinates.
    pub fn center(&self) -> (f64, f64) {
        (
            self.x0 as f64 + self.width as f64 / 2.0,
            self.y0 as f64 + self.height as f64 / 2.0,
        )
    }
}

/// Tile grid partitioning an image, row-major.
#[derive(Debug, Clone)]
pub struct RegionGrid {
    pub tiles_x: u32,
    pub tiles_y: u32,
    regions: Vec<Region>,
}

impl RegionGrid {
    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, i: u32, j: u32) -> &Region {
        &self.regions[(j as usize) * (self.tiles_x as usize) + (i as usize)]
    }
}

/// Splits the image into `tiles_x` x `tiles_y` near-equal rectangles.
/// Division remainders widen the last column and bottom row.
pub fn partition_regions(img: &GrayImage, params: &ClaheParams) -> Result<RegionGrid> {
    params.validate()?;
    let (w, h) = (img.width(), img.height());
    let (tx, ty) = (params.tiles_x, params.tiles_y);
    if w < tx || h < ty {
        return Err(Error::Dimension(format!(
            "image {w}x{h} too small for a {tx}x{ty} tile grid"
        )));
    }
    let base_w = w / tx;
    let base_h = h / ty;
    let mut regions = Vec::with_capacity((tx as usize) * (ty as usize));
    for j in 0..ty {
        for i in 0..tx {
            let x0 = i * base_w;
            let y0 = j * base_h;
            let width = if i == tx - 1 { w - x0 } else { base_w };
            let height = if j == ty - 1 { h - y0 } else { base_h };
            let on_x_edge = i == 0 || i == tx - 1;
            let on_y_edge = j == 0 || j == ty - 1;
            let class = match (on_x_edge, on_y_edge) {
                (true, true) => RegionClass::Corner,
                (false, false) => RegionClass::Inner,
                _ => RegionClass::Border,
            };
            regions.push(Region {
                x0,
                y0,
                width,
                height,
                class,
            });
        }
    }
    Ok(RegionGrid {
        tiles_x: tx,
        tiles_y: ty,
        regions,
    })
}

/// Integer gray-level histogram of a region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    counts: Vec<u64>,
    total: u64,
}

impl Histogram {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }

    /// Histogram of the image pixels inside `region`, over `n_bins` levels.
    pub fn from_region(img: &GrayImage, region: &Region, n_bins: u32) -> Self {
        let mut counts = vec![0u64; n_bins as usize];
        for y in region.y0..region.y0 + region.height {
            for x in region.x0..region.x0 + region.width {
                counts[intensity_bin(img.get(x, y), n_bins) as usize] += 1;
            }
        }
        Self::from_counts(counts)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Total pixel count M.
    pub fn total(&self) -> u64 {
        self.total
    }
}

/// Maps a normalized intensity to its gray-level bin.
#[inline]
pub fn intensity_bin(v: f64, n_bins: u32) -> u32 {
    ((v * n_bins as f64) as u32).min(n_bins - 1)
}

/// Clip limit `beta = (M/N) * (1 + alpha/100 * (s_max - 1))`.
///
/// If rounding makes `beta * N < M` the limit is raised to `ceil(M/N)` so the
/// redistribution loop can always place all excess.
pub fn clip_limit(m: u64, n_bins: u32, alpha: f64, s_max: f64) -> f64 {
    let m_over_n = m as f64 / n_bins as f64;
    let beta = m_over_n * (1.0 + alpha / 100.0 * (s_max - 1.0));
    if beta * (n_bins as f64) < m as f64 {
        m_over_n.ceil()
    } else {
        beta
    }
}

/// Clips every bin to the limit and redistributes the clipped excess:
/// first a uniform `m = Excess/N` pass, then round-robin +1 until no excess
/// remains. The bin sum is preserved exactly and every output bin is
/// bounded by `ceil(beta)`.
pub fn redistribute(h: &Histogram, beta: f64) -> Result<Histogram> {
    let n = h.counts.len();
    let total = h.total;
    if beta * (n as f64) < total as f64 {
        return Err(Error::RedistributionGuard {
            clip: beta,
            bins: n,
            total,
        });
    }
    // Integer clip ceiling keeps the counts integral so the sum is exact.
    let limit = beta.ceil() as u64;
    let mut counts = h.counts.clone();
    let mut excess: u64 = 0;
    for c in counts.iter_mut() {
        if *c > limit {
            excess += *c - limit;
            *c = limit;
        }
    }
    let m = excess / n as u64;
    for c in counts.iter_mut() {
        if *c < limit - m {
            *c += m;
            excess -= m;
        } else if *c < limit {
            excess -= limit - *c;
            *c = limit;
        }
    }
    while excess > 0 {
        for c in counts.iter_mut() {
            if excess == 0 {
                break;
            }
            if *c < limit {
                *c += 1;
                excess -= 1;
            }
        }
    }
    Ok(Histogram::from_counts(counts))
}

/// Scaled CDF transfer function: `f(n) = (N-1)/M * sum_{k<=n} h(k)`.
///
/// An empty region (M = 0) maps through the identity.
pub fn transfer_function(h: &Histogram, n_bins: u32) -> Vec<f64> {
    let n = n_bins as usize;
    debug_assert_eq!(h.counts.len(), n);
    if h.total == 0 {
        return (0..n).map(|i| i as f64).collect();
    }
    let scale_num = (n_bins - 1) as f64;
    let m = h.total as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum: u64 = 0;
    for &c in &h.counts {
        cum += c;
        out.push(cum as f64 * scale_num / m);
    }
    out
}

/// Full CLAHE: per-region clipped equalization blended bilinearly between
/// region centers. Output intensities are rescaled to `[0, 1]`.
pub fn apply_clahe(img: &GrayImage, params: &ClaheParams) -> Result<GrayImage> {
    let grid = partition_regions(img, params)?;
    let n_bins = params.n_bins;

    let luts: Vec<Vec<f64>> = grid
        .regions()
        .iter()
        .map(|region| {
            let hist = Histogram::from_region(img, region, n_bins);
            let beta = clip_limit(hist.total(), n_bins, params.alpha, params.s_max);
            let clipped = if hist.total() == 0 {
                hist
            } else {
                redistribute(&hist, beta).expect("clip_limit guard guarantees beta * N >= M")
            };
            transfer_function(&clipped, n_bins)
        })
        .collect();

    let centers_x: Vec<f64> = (0..grid.tiles_x)
        .map(|i| grid.region(i, 0).center().0)
        .collect();
    let centers_y: Vec<f64> = (0..grid.tiles_y)
        .map(|j| grid.region(0, j).center().1)
        .collect();

    // Per-axis interpolation setup: surrounding tile indices and the blend
    // weight toward the second one. Outside the center lattice the nearest
    // single tile is used (weight 0).
    fn axis_blend(p: f64, centers: &[f64]) -> (usize, usize, f64) {
        if p <= centers[0] {
            return (0, 0, 0.0);
        }
        let last = centers.len() - 1;
        if p >= centers[last] {
            return (last, last, 0.0);
        }
        let hi = centers.partition_point(|&c| c <= p);
        let lo = hi - 1;
        let w = (p - centers[lo]) / (centers[hi] - centers[lo]);
        (lo, hi, w)
    }

    let scale = 1.0 / (n_bins - 1) as f64;
    let tx = grid.tiles_x as usize;
    let out = GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let (ix0, ix1, wx) = axis_blend(x as f64, &centers_x);
        let (iy0, iy1, wy) = axis_blend(y as f64, &centers_y);
        let bin = intensity_bin(img.get(x, y), n_bins) as usize;
        let f00 = luts[iy0 * tx + ix0][bin];
        let f10 = luts[iy0 * tx + ix1][bin];
        let f01 = luts[iy1 * tx + ix0][bin];
        let f11 = luts[iy1 * tx + ix1][bin];
        let top = f00 * (1.0 - wx) + f10 * wx;
        let bottom = f01 * (1.0 - wx) + f11 * wx;
        ((top * (1.0 - wy) + bottom * wy) * scale).clamp(0.0, 1.0)
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(tx: u32, ty: u32, n: u32, alpha: f64, s_max: f64) -> ClaheParams {
        ClaheParams {
            tiles_x: tx,
            tiles_y: ty,
            n_bins: n,
            alpha,
            s_max,
        }
    }

    #[test]
    fn partition_512_into_8x8_is_64_uniform_tiles() {
        let img = GrayImage::filled(512, 512, 0.0).unwrap();
        let grid = partition_regions(&img, &ClaheParams::default()).unwrap();
        assert_eq!(grid.regions().len(), 64);
        assert!(grid
            .regions()
            .iter()
            .all(|r| r.width == 64 && r.height == 64));
    }

    #[test]
    fn partition_classifies_8x8_grid() {
        let img = GrayImage::filled(512, 512, 0.0).unwrap();
        let grid = partition_regions(&img, &ClaheParams::default()).unwrap();
        let count = |class| {
            grid.regions()
                .iter()
                .filter(|r| r.class == class)
                .count()
        };
        assert_eq!(count(RegionClass::Corner), 4);
        assert_eq!(count(RegionClass::Border), 24);
        assert_eq!(count(RegionClass::Inner), 36);
    }

    #[test]
    fn partition_2x2_grid_is_all_corners() {
        let img = GrayImage::filled(16, 16, 0.0).unwrap();
        let grid = partition_regions(&img, &params(2, 2, 16, 100.0, 4.0)).unwrap();
        assert_eq!(grid.regions().len(), 4);
        assert!(grid
            .regions()
            .iter()
            .all(|r| r.class == RegionClass::Corner));
    }

    #[test]
    fn partition_distributes_remainder_to_last_row_and_column() {
        let img = GrayImage::filled(21, 13, 0.0).unwrap();
        let grid = partition_regions(&img, &params(4, 3, 16, 100.0, 4.0)).unwrap();
        assert_eq!(grid.region(3, 0).width, 21 - 3 * 5);
        assert_eq!(grid.region(0, 2).height, 13 - 2 * 4);
        let area: u64 = grid
            .regions()
            .iter()
            .map(|r| r.width as u64 * r.height as u64)
            .sum();
        assert_eq!(area, 21 * 13);
    }

    #[test]
    fn partition_rejects_tiny_images() {
        let img = GrayImage::filled(4, 4, 0.0).unwrap();
        assert!(matches!(
            partition_regions(&img, &ClaheParams::default()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn clip_limit_formula() {
        assert_eq!(clip_limit(4096, 256, 100.0, 4.0), 64.0);
        assert_eq!(clip_limit(4096, 256, 50.0, 3.0), 32.0);
        assert_eq!(clip_limit(4096, 256, 0.0, 7.0), 16.0);
        // alpha = 0 gives exactly M/N
        assert_eq!(clip_limit(1000, 4, 0.0, 4.0), 250.0);
    }

    #[test]
    fn redistribute_hand_simulated_cases() {
        let h = Histogram::from_counts(vec![8, 2, 1, 1]);
        let out = redistribute(&h, 5.0).unwrap();
        assert_eq!(out.counts(), &[5, 3, 2, 2]);
        assert_eq!(out.total(), 12);

        let h = Histogram::from_counts(vec![12, 0, 0, 0]);
        let out = redistribute(&h, 3.0).unwrap();
        assert_eq!(out.counts(), &[3, 3, 3, 3]);
        assert_eq!(out.total(), 12);
    }

    #[test]
    fn redistribute_is_identity_without_excess() {
        let h = Histogram::from_counts(vec![3, 1, 4, 1]);
        let out = redistribute(&h, 5.0).unwrap();
        assert_eq!(out.counts(), h.counts());
    }

    #[test]
    fn redistribute_guard_rejects_undersized_limit() {
        let h = Histogram::from_counts(vec![12, 0, 0, 0]);
        assert!(matches!(
            redistribute(&h, 2.0),
            Err(Error::RedistributionGuard { .. })
        ));
    }

    #[test]
    fn transfer_function_examples() {
        // uniform histogram, N = 4, M = 4
        let f = transfer_function(&Histogram::from_counts(vec![1, 1, 1, 1]), 4);
        assert_eq!(f, vec![0.75, 1.5, 2.25, 3.0]);

        // all mass in bin 0 saturates immediately
        let f = transfer_function(&Histogram::from_counts(vec![9, 0, 0, 0]), 4);
        assert_eq!(f, vec![3.0, 3.0, 3.0, 3.0]);

        // clipped histogram from the redistribute example
        let f = transfer_function(&Histogram::from_counts(vec![5, 3, 2, 2]), 4);
        assert_eq!(f, vec![1.25, 2.0, 2.5, 3.0]);
    }

    #[test]
    fn transfer_function_of_empty_region_is_identity() {
        let f = transfer_function(&Histogram::from_counts(vec![0, 0, 0]), 3);
        assert_eq!(f, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn transfer_function_tops_out_exactly() {
        let f = transfer_function(&Histogram::from_counts(vec![7, 0, 13, 29]), 4);
        assert_eq!(*f.last().unwrap(), 3.0);
        assert!(f.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn apply_clahe_constant_image_stays_constant() {
        let img = GrayImage::filled(32, 32, 0.25).unwrap();
        let out = apply_clahe(&img, &params(4, 4, 16, 100.0, 4.0)).unwrap();
        // every region produces the identical mapping, so the output is
        // constant too
        let v = out.get(0, 0);
        assert!(out.data().iter().all(|&x| (x - v).abs() < 1e-12));
    }

    #[test]
    fn apply_clahe_midpoint_between_tile_centers_blends_evenly() {
        // 2x2 grid on a 16x16 image: tile centers at x = 4 and x = 12,
        // midpoint x = 8 takes the average of the two column mappings.
        let img = GrayImage::from_fn(16, 16, |x, _| if x < 8 { 0.2 } else { 0.8 }).unwrap();
        let p = params(2, 2, 16, 0.0, 1.0);
        let grid = partition_regions(&img, &p).unwrap();
        let lut: Vec<Vec<f64>> = grid
            .regions()
            .iter()
            .map(|r| {
                let h = Histogram::from_region(&img, r, p.n_bins);
                let beta = clip_limit(h.total(), p.n_bins, p.alpha, p.s_max);
                transfer_function(&redistribute(&h, beta).unwrap(), p.n_bins)
            })
            .collect();
        let out = apply_clahe(&img, &p).unwrap();
        let bin = intensity_bin(img.get(8, 4), p.n_bins) as usize;
        let expected = (lut[0][bin] + lut[1][bin]) / 2.0 / 15.0;
        assert!((out.get(8, 4) - expected).abs() < 1e-12);
    }

    #[test]
    fn apply_clahe_ramp_respects_clip_bound_per_region() {
        // re-run the per-region pipeline on a 512x512 ramp and check that
        // every clipped histogram respects ceil(beta) and keeps its sum
        let img = GrayImage::from_fn(512, 512, |x, y| {
            (x as f64 + y as f64) / (511.0 + 511.0)
        })
        .unwrap();
        let p = ClaheParams::default();
        let grid = partition_regions(&img, &p).unwrap();
        for region in grid.regions() {
            let h = Histogram::from_region(&img, region, p.n_bins);
            let beta = clip_limit(h.total(), p.n_bins, p.alpha, p.s_max);
            let clipped = redistribute(&h, beta).unwrap();
            assert_eq!(clipped.total(), h.total());
            let bound = beta.ceil() as u64;
            assert!(clipped.counts().iter().all(|&c| c <= bound));
        }
        let out = apply_clahe(&img, &p).unwrap();
        assert_eq!(out.width(), 512);
        assert_eq!(out.height(), 512);
        assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
