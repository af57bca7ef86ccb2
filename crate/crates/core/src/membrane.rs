//! Membrane intensity template and per-seed cross-correlation images.
//!
//! A crop of side `2*l_m + 1` is taken around each seed. Rays run from the
//! seed to every crop border pixel; a window of the template's length slides
//! along each ray and its Pearson correlation with the template is spread
//! over the window's pixels, keeping the maximum per pixel.

use crate::error::{Error, Result};
use crate::image::{bresenham_line, GrayImage};

/// Averaged membrane intensity template, ordered inside-to-outside.
#[derive(Debug, Clone, PartialEq)]
pub struct MembraneProfile {
    values: Vec<f64>,
}

impl MembraneProfile {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 3 {
            return Err(Error::Parameter(format!(
                "membrane profile needs at least 3 samples, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::MalformedInput(format!(
                "profile intensity {v} outside [0, 1]"
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Reads a profile from CSV: one intensity per line, inside-to-outside.
    pub fn read_csv(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: f64 = line.parse().map_err(|_| {
                Error::MalformedInput(format!(
                    "{}:{}: invalid intensity `{line}`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            values.push(v);
        }
        Self::new(values)
    }

    /// Writes the profile as CSV, one intensity per line.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::new();
        for v in &self.values {
            out.push_str(&format!("{v}\n"));
        }
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Biological priors: radius bounds, longest cell length and the membrane
/// template.
#[derive(Debug, Clone)]
pub struct BioParams {
    pub r_min: u32,
    pub r_max: u32,
    /// Length of the longest cell, in pixels; crops have side `2*l_m + 1`.
    pub l_m: u32,
    pub profile: MembraneProfile,
}

impl BioParams {
    /// Validates `0 < r_min <= r_max <= l_m`. Profiles longer than `l_m`
    /// are truncated to `l_m` samples.
    pub fn new(r_min: u32, r_max: u32, l_m: u32, profile: MembraneProfile) -> Result<Self> {
        if r_min == 0 || r_min > r_max || r_max > l_m {
            return Err(Error::Parameter(format!(
                "need 0 < r_min <= r_max <= l_m, got r_min={r_min} r_max={r_max} l_m={l_m}"
            )));
        }
        let profile = if profile.len() > l_m as usize {
            MembraneProfile::new(profile.values()[..l_m as usize].to_vec())?
        } else {
            profile
        };
        Ok(Self {
            r_min,
            r_max,
            l_m,
            profile,
        })
    }
}

/// Square crop of side `2*l_m + 1` centered on a seed. Parts extending past
/// the parent slice are zero-padded and remembered as invalid.
#[derive(Debug, Clone)]
pub struct CropWindow {
    origin_x: i64,
    origin_y: i64,
    image: GrayImage,
    valid: Vec<bool>,
}

impl CropWindow {
    /// Cuts the window centered at `(cx, cy)` out of `slice`.
    pub fn extract(slice: &GrayImage, cx: u32, cy: u32, l_m: u32) -> CropWindow {
        let side = 2 * l_m + 1;
        let origin_x = cx as i64 - l_m as i64;
        let origin_y = cy as i64 - l_m as i64;
        let mut valid = vec![false; (side as usize) * (side as usize)];
        let image = GrayImage::from_fn(side, side, |x, y| {
            let sx = origin_x + x as i64;
            let sy = origin_y + y as i64;
            if slice.in_bounds(sx, sy) {
                valid[(y as usize) * (side as usize) + (x as usize)] = true;
                slice.get(sx as u32, sy as u32)
            } else {
                0.0
            }
        });
        // from_fn is FnMut here via interior mutation of `valid`
        let image = image.expect("crop construction cannot fail");
        CropWindow {
            origin_x,
            origin_y,
            image,
            valid,
        }
    }

    pub fn side(&self) -> u32 {
        self.image.width()
    }

    /// Seed position in crop coordinates (always the exact center).
    pub fn seed_local(&self) -> (u32, u32) {
        let l_m = (self.side() - 1) / 2;
        (l_m, l_m)
    }

    pub fn image(&self) -> &GrayImage {
        &self.image
    }

    /// False for zero-padded pixels outside the parent slice.
    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.valid[(y as usize) * (self.side() as usize) + (x as usize)]
    }

    /// Maps crop coordinates back into the parent slice, when inside it.
    pub fn to_slice(&self, x: u32, y: u32) -> Option<(u32, u32)> {
        if !self.is_valid(x, y) {
            return None;
        }
        Some(((self.origin_x + x as i64) as u32, (self.origin_y + y as i64) as u32))
    }
}

/// Per-pixel maximal correlation with the membrane template, in `[-1, 1]`.
/// Pixels covered by no ray window hold -1.
#[derive(Debug, Clone)]
pub struct CCImage {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl CCImage {
    pub fn from_values(width: u32, height: u32, values: Vec<f64>) -> Result<Self> {
        if values.len() != (width as usize) * (height as usize) {
            return Err(Error::Dimension(format!(
                "CC buffer length {} does not match {width}x{height}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::MalformedInput(format!(
                "correlation value {v} outside [-1, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[(y as usize) * (self.width as usize) + (x as usize)]
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Pearson correlation of two equal-length windows. Zero-variance windows
/// score 0 (neutral) rather than NaN.
pub fn template_correlation(a: &[f64], b: &[f64]) -> f64 {
    pearson(a, b)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let da = x - mean_a;
        let db = y - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if var_a <= 1e-24 || var_b <= 1e-24 {
        return 0.0;
    }
    (cov / (var_a * var_b).sqrt()).clamp(-1.0, 1.0)
}

/// Averages the intensity profiles sampled along the given rays. Each ray is
/// rasterized with Bresenham, resampled by nearest pixel to the median ray
/// length, then averaged position-wise. Ray order is inside-to-outside.
pub fn estimate_profile(
    img: &GrayImage,
    rays: &[((u32, u32), (u32, u32))],
) -> Result<MembraneProfile> {
    if rays.is_empty() {
        return Err(Error::Parameter("need at least one profile ray".into()));
    }
    let mut sampled: Vec<Vec<f64>> = Vec::with_capacity(rays.len());
    for &((x0, y0), (x1, y1)) in rays {
        for (x, y) in [(x0, y0), (x1, y1)] {
            if !img.in_bounds(x as i64, y as i64) {
                return Err(Error::Parameter(format!(
                    "ray endpoint ({x}, {y}) outside {}x{} image",
                    img.width(),
                    img.height()
                )));
            }
        }
        let line = bresenham_line((x0 as i64, y0 as i64), (x1 as i64, y1 as i64));
        sampled.push(line.iter().map(|&(x, y)| img.get(x as u32, y as u32)).collect());
    }
    let target = median_length(&sampled);
    if target < 3 {
        return Err(Error::Parameter(format!(
            "median ray length {target} too short for a membrane profile"
        )));
    }
    let mut mean = vec![0.0f64; target];
    for s in &sampled {
        let r = resample_nearest(s, target);
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    let n = sampled.len() as f64;
    for m in mean.iter_mut() {
        *m /= n;
    }
    MembraneProfile::new(mean)
}

/// Median sample count; for an even number of rays the two middle lengths
/// are averaged and rounded half away from zero.
fn median_length(samples: &[Vec<f64>]) -> usize {
    let mut lengths: Vec<usize> = samples.iter().map(|s| s.len()).collect();
    lengths.sort_unstable();
    let n = lengths.len();
    if n % 2 == 1 {
        lengths[n / 2]
    } else {
        ((lengths[n / 2 - 1] + lengths[n / 2]) as f64 / 2.0).round() as usize
    }
}

/// Nearest-pixel resampling to `target` samples.
fn resample_nearest(s: &[f64], target: usize) -> Vec<f64> {
    if s.len() == target {
        return s.to_vec();
    }
    if target == 1 {
        return vec![s[(s.len() - 1) / 2]];
    }
    let scale = (s.len() - 1) as f64 / (target - 1) as f64;
    (0..target)
        .map(|i| s[(i as f64 * scale).round() as usize])
        .collect()
}

/// Builds the cross-correlation image of a crop against the membrane
/// template: rays run from the seed to every border pixel, a `|M|`-long
/// window slides along each ray, and each window's Pearson correlation is
/// assigned to the window's center pixel (keeping the maximum across rays
/// and windows). Pixels hosting no window center, and zero-padded crop
/// pixels, take -1 so the membrane evidence stays localized on the ridge.
pub fn build_cc_image(crop: &CropWindow, bio: &BioParams) -> CCImage {
    let side = crop.side();
    let m = bio.profile.values();
    let half = (m.len() - 1) / 2;
    let (sx, sy) = crop.seed_local();
    let n = (side as usize) * (side as usize);
    let mut values = vec![-1.0f64; n];

    let mut border: Vec<(i64, i64)> = Vec::with_capacity(4 * side as usize);
    for x in 0..side {
        border.push((x as i64, 0));
        border.push((x as i64, side as i64 - 1));
    }
    for y in 1..side - 1 {
        border.push((0, y as i64));
        border.push((side as i64 - 1, y as i64));
    }

    let img = crop.image();
    let mut ray_values: Vec<f64> = Vec::with_capacity(side as usize);
    for &end in &border {
        let line = bresenham_line((sx as i64, sy as i64), end);
        ray_values.clear();
        ray_values.extend(line.iter().map(|&(x, y)| img.get(x as u32, y as u32)));
        if ray_values.len() < m.len() {
            continue;
        }
        for start in 0..=ray_values.len() - m.len() {
            let cc = pearson(&ray_values[start..start + m.len()], m);
            let (x, y) = line[start + half];
            let i = (y as usize) * (side as usize) + (x as usize);
            if cc > values[i] {
                values[i] = cc;
            }
        }
    }

    for y in 0..side {
        for x in 0..side {
            if !crop.is_valid(x, y) {
                values[(y as usize) * (side as usize) + (x as usize)] = -1.0;
            }
        }
    }

    CCImage {
        width: side,
        height: side,
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_from_single_ray_over_step_edge() {
        let img = GrayImage::from_fn(10, 3, |x, _| if x < 5 { 0.0 } else { 1.0 }).unwrap();
        let p = estimate_profile(&img, &[((0, 1), (9, 1))]).unwrap();
        let expected: Vec<f64> = (0..10).map(|x| if x < 5 { 0.0 } else { 1.0 }).collect();
        assert_eq!(p.values(), expected.as_slice());
    }

    #[test]
    fn profile_of_identical_rays_matches_single_ray() {
        let img = GrayImage::from_fn(8, 3, |x, _| x as f64 / 7.0).unwrap();
        let one = estimate_profile(&img, &[((0, 1), (7, 1))]).unwrap();
        let two = estimate_profile(&img, &[((0, 1), (7, 1)), ((0, 1), (7, 1))]).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn profile_resamples_mixed_lengths_to_median() {
        // ray A: length 9 along row 0, ray B: length 11 along row 1;
        // median length = 10. Intensities encode the sample index.
        let img = GrayImage::from_fn(11, 2, |x, y| {
            if y == 0 {
                (x as f64) / 20.0
            } else {
                (x as f64) / 20.0 + 0.5
            }
        })
        .unwrap();
        let p = estimate_profile(&img, &[((0, 0), (8, 0)), ((0, 1), (10, 1))]).unwrap();
        assert_eq!(p.len(), 10);
        // hand-computed nearest-pixel index maps for L=9 -> 10 and L=11 -> 10
        let idx_a = [0usize, 1, 2, 3, 4, 4, 5, 6, 7, 8];
        let idx_b = [0usize, 1, 2, 3, 4, 6, 7, 8, 9, 10];
        for i in 0..10 {
            let expected = (idx_a[i] as f64 / 20.0 + (idx_b[i] as f64 / 20.0 + 0.5)) / 2.0;
            assert!((p.values()[i] - expected).abs() < 1e-12, "position {i}");
        }
    }

    #[test]
    fn profile_rejects_empty_ray_list_and_out_of_bounds() {
        let img = GrayImage::filled(8, 8, 0.5).unwrap();
        assert!(estimate_profile(&img, &[]).is_err());
        assert!(estimate_profile(&img, &[((0, 0), (8, 0))]).is_err());
    }

    /// Crop whose intensity depends only on the Chebyshev distance to the
    /// center, so every seed-to-border ray samples the same profile.
    fn chebyshev_stamp(l_m: u32, m: &[f64], d0: u32, bg: f64) -> CropWindow {
        let side = 2 * l_m + 1;
        let slice = GrayImage::from_fn(side, side, |x, y| {
            let d = (x as i64 - l_m as i64)
                .abs()
                .max((y as i64 - l_m as i64).abs()) as u32;
            if d >= d0 && (d - d0) < m.len() as u32 {
                m[(d - d0) as usize]
            } else {
                bg
            }
        })
        .unwrap();
        CropWindow::extract(&slice, l_m, l_m, l_m)
    }

    fn bump_template() -> Vec<f64> {
        vec![0.2, 0.35, 0.7, 0.95, 0.7, 0.35, 0.2]
    }

    #[test]
    fn cc_is_one_on_the_stamped_ridge() {
        let m = bump_template();
        let l_m = 14;
        let d0 = 6;
        let ridge = d0 + (m.len() as u32 - 1) / 2;
        let crop = chebyshev_stamp(l_m, &m, d0, 0.2);
        let profile = MembraneProfile::new(m.clone()).unwrap();
        let bio = BioParams::new(5, 10, l_m, profile).unwrap();
        let cc = build_cc_image(&crop, &bio);
        // every ray reproduces the template, so the window centered on the
        // band's middle circle correlates perfectly
        for y in 0..cc.height() {
            for x in 0..cc.width() {
                let d = (x as i64 - l_m as i64)
                    .abs()
                    .max((y as i64 - l_m as i64).abs()) as u32;
                if d == ridge {
                    assert!(
                        (cc.get(x, y) - 1.0).abs() < 1e-9,
                        "({x}, {y}) d={d} cc={}",
                        cc.get(x, y)
                    );
                }
            }
        }
        // off the band the correlation stays below the ridge value
        assert!(cc.get(l_m, l_m + 2) < 1.0 - 1e-9);
    }

    #[test]
    fn constant_crop_scores_zero_everywhere_covered() {
        let slice = GrayImage::filled(64, 64, 0.5).unwrap();
        let crop = CropWindow::extract(&slice, 32, 32, 10);
        let profile = MembraneProfile::new(bump_template()).unwrap();
        let bio = BioParams::new(3, 8, 10, profile).unwrap();
        let cc = build_cc_image(&crop, &bio);
        // zero-variance windows score 0; pixels without a window center -1
        assert!(cc.values().iter().all(|&v| v == 0.0 || v == -1.0));
        assert_eq!(cc.get(15, 10), 0.0); // mid-radius pixel hosts centers
        assert!(cc.values().iter().filter(|&&v| v == 0.0).count() > 100);
    }

    #[test]
    fn inverted_contrast_scores_minus_one_at_the_membrane() {
        let m = bump_template();
        let inverted: Vec<f64> = m.iter().map(|v| 1.0 - v).collect();
        // a window holding the inverted pattern scores exactly -1 against M
        assert!((template_correlation(&inverted, &m) + 1.0).abs() < 1e-9);
        // on an inverted stamp, every window centered on the ridge circle
        // holds exactly the inverted template
        let l_m = 14;
        let d0 = 6;
        let ridge = d0 + (m.len() as u32 - 1) / 2;
        let crop = chebyshev_stamp(l_m, &inverted, d0, 1.0 - 0.2);
        let profile = MembraneProfile::new(m.clone()).unwrap();
        let bio = BioParams::new(5, 10, l_m, profile).unwrap();
        let cc = build_cc_image(&crop, &bio);
        for (x, y) in [(l_m + ridge, l_m), (l_m - ridge, l_m), (l_m, l_m + ridge)] {
            assert!(
                (cc.get(x, y) + 1.0).abs() < 1e-9,
                "expected -1 at ({x}, {y}), got {}",
                cc.get(x, y)
            );
        }
    }

    #[test]
    fn padded_pixels_are_uncovered() {
        let slice = GrayImage::filled(20, 20, 0.5).unwrap();
        // crop hangs off the top-left corner
        let crop = CropWindow::extract(&slice, 2, 2, 8);
        assert!(!crop.is_valid(0, 0));
        assert!(crop.is_valid(8, 8));
        assert_eq!(crop.to_slice(8, 8), Some((2, 2)));
        assert_eq!(crop.to_slice(0, 0), None);
        let profile = MembraneProfile::new(bump_template()).unwrap();
        let bio = BioParams::new(3, 8, 8, profile).unwrap();
        let cc = build_cc_image(&crop, &bio);
        assert_eq!(cc.get(0, 0), -1.0);
    }

    #[test]
    fn rays_to_all_border_pixels_cover_the_crop() {
        // the ray set itself touches essentially every crop pixel
        for l_m in [10u32, 15, 20] {
            let side = 2 * l_m + 1;
            let mut on_ray = vec![false; (side as usize) * (side as usize)];
            let center = l_m as i64;
            let mut mark = |end: (i64, i64)| {
                for (x, y) in bresenham_line((center, center), end) {
                    on_ray[(y as usize) * (side as usize) + (x as usize)] = true;
                }
            };
            for x in 0..side as i64 {
                mark((x, 0));
                mark((x, side as i64 - 1));
            }
            for y in 1..side as i64 - 1 {
                mark((0, y));
                mark((side as i64 - 1, y));
            }
            let covered = on_ray.iter().filter(|&&b| b).count() as f64;
            let total = (side as usize * side as usize) as f64;
            assert!(
                covered / total >= 0.99,
                "l_m={l_m}: ray coverage {}",
                covered / total
            );
        }
    }

    #[test]
    fn bio_params_validate_and_truncate() {
        let p = MembraneProfile::new(vec![0.1; 12]).unwrap();
        let bio = BioParams::new(2, 5, 8, p).unwrap();
        assert_eq!(bio.profile.len(), 8);
        let p = MembraneProfile::new(vec![0.1; 4]).unwrap();
        assert!(BioParams::new(0, 5, 8, p.clone()).is_err());
        assert!(BioParams::new(6, 5, 8, p.clone()).is_err());
        assert!(BioParams::new(2, 9, 8, p).is_err());
    }
}
