//! Inter-slice post-processing: the sliding-window consistency filter over
//! the cell matrix, and cross-correlation re-alignment of the filtered
//! stack.
//!
//! The correlation `f(m, n) = 1/(MN) sum I1(i,j) I2(i+m, j+n)` is evaluated
//! over circular shifts through the frequency domain (with the conjugated
//! product, so it matches the spatial definition). Alignment pads masks to
//! twice each dimension first to suppress wrap-around.

use rustfft::{num_complex::Complex, FftPlanner};

use crate::assembly::CellRecord;
use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Per-slice lists of cell records, slice index = position.
#[derive(Debug, Clone, Default)]
pub struct CellMatrix {
    pub slices: Vec<Vec<CellRecord>>,
}

impl CellMatrix {
    pub fn new(slices: Vec<Vec<CellRecord>>) -> Result<Self> {
        for (i, records) in slices.iter().enumerate() {
            if records.iter().any(|r| r.slice_idx != i) {
                return Err(Error::Parameter(format!(
                    "record in slice {i} carries a different slice index"
                )));
            }
        }
        Ok(Self { slices })
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn cell_count(&self) -> usize {
        self.slices.iter().map(|s| s.len()).sum()
    }
}

/// Window mode: a cell must match in every other window slice, or in a
/// majority of the window (counting its own slice).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterMode {
    #[default]
    All,
    Majority,
}

impl std::str::FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(FilterMode::All),
            "majority" => Ok(FilterMode::Majority),
            other => Err(Error::Parameter(format!(
                "filter mode must be all or majority, got `{other}`"
            ))),
        }
    }
}

/// Consistency-filter thresholds.
#[derive(Debug, Clone, Copy)]
pub struct FilterParams {
    /// Window size, 3, 5 or 7 slices.
    pub window: u32,
    /// Maximum centroid distance between matching cells, in pixels.
    pub center_tol: f64,
    /// Maximum relative area difference.
    pub area_tol: f64,
    /// Maximum relative perimeter difference.
    pub perim_tol: f64,
    pub mode: FilterMode,
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.window, 3 | 5 | 7) {
            return Err(Error::Parameter(format!(
                "window must be 3, 5 or 7, got {}",
                self.window
            )));
        }
        if self.center_tol <= 0.0 || self.area_tol <= 0.0 || self.perim_tol <= 0.0 {
            return Err(Error::Parameter(
                "filter tolerances must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// True when two records agree on centroid, area and perimeter within the
/// thresholds.
pub fn cells_match(a: &CellRecord, b: &CellRecord, params: &FilterParams) -> bool {
    let dc = (a.centroid.0 - b.centroid.0).hypot(a.centroid.1 - b.centroid.1);
    if dc > params.center_tol {
        return false;
    }
    let (aa, ab) = (a.area as f64, b.area as f64);
    if (aa - ab).abs() > params.area_tol * aa.max(ab) {
        return false;
    }
    let (pa, pb) = (a.perimeter as f64, b.perimeter as f64);
    (pa - pb).abs() <= params.perim_tol * pa.max(pb)
}

/// Filtered matrix plus per-slice verification flags; boundary slices
/// outside the window's index range pass through unverified.
#[derive(Debug, Clone)]
pub struct FilteredMatrix {
    pub matrix: CellMatrix,
    pub verified: Vec<bool>,
}

/// Sliding-window consistency filter. For each interior slice, a cell is
/// kept iff it has at least one matching cell in every other slice of its
/// window (`All`) or in a majority of the window including itself
/// (`Majority`).
pub fn consistency_filter(matrix: &CellMatrix, params: &FilterParams) -> Result<FilteredMatrix> {
    params.validate()?;
    let n = matrix.len();
    let f = params.window as usize;
    if n < f {
        return Err(Error::Parameter(format!(
            "stack of {n} slices is shorter than the window {f}"
        )));
    }
    let half = f / 2;
    let mut out: Vec<Vec<CellRecord>> = Vec::with_capacity(n);
    let mut verified = vec![false; n];
    for i in 0..n {
        if i < half || i + half >= n {
            out.push(matrix.slices[i].clone());
            continue;
        }
        verified[i] = true;
        let kept: Vec<CellRecord> = matrix.slices[i]
            .iter()
            .filter(|cell| {
                let mut matched = 0usize;
                for j in i - half..=i + half {
                    if j == i {
                        continue;
                    }
                    if matrix.slices[j].iter().any(|other| cells_match(cell, other, params)) {
                        matched += 1;
                    }
                }
                match params.mode {
                    FilterMode::All => matched == f - 1,
                    // the cell's own slice counts toward the majority
                    FilterMode::Majority => matched + 1 > f / 2,
                }
            })
            .cloned()
            .collect();
        out.push(kept);
    }
    Ok(FilteredMatrix {
        matrix: CellMatrix { slices: out },
        verified,
    })
}

/// Integer displacement `(m0, n0)`: row and column offsets such that
/// `I2(i + m0, j + n0)` best matches `I1(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Shift {
    pub m0: i64,
    pub n0: i64,
}

fn fft_2d(data: &mut [Complex<f64>], width: usize, height: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(width)
    } else {
        planner.plan_fft_forward(width)
    };
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = if inverse {
        planner.plan_fft_inverse(height)
    } else {
        planner.plan_fft_forward(height)
    };
    let mut column = vec![Complex::default(); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = data[y * width + x];
        }
        col_fft.process(&mut column);
        for y in 0..height {
            data[y * width + x] = column[y];
        }
    }
}

/// Finds the circular shift maximizing the cross-correlation of two
/// equally sized images via the frequency domain. The row peak index `m`
/// maps to `m0 = m` for `m <= height/2` and `m - height` beyond (same for
/// columns).
pub fn cross_correlation_shift(i1: &GrayImage, i2: &GrayImage) -> Result<Shift> {
    let (w, h) = (i1.width() as usize, i1.height() as usize);
    if i2.width() as usize != w || i2.height() as usize != h {
        return Err(Error::Dimension(format!(
            "correlated images differ: {}x{} vs {}x{}",
            i1.width(),
            i1.height(),
            i2.width(),
            i2.height()
        )));
    }
    let any_nonzero = |img: &GrayImage| img.data().iter().any(|&v| v != 0.0);
    if !any_nonzero(i1) || !any_nonzero(i2) {
        return Err(Error::UndefinedPeak(
            "all-zero image has no correlation peak".into(),
        ));
    }

    let mut f1: Vec<Complex<f64>> = i1.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut f2: Vec<Complex<f64>> = i2.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft_2d(&mut f1, w, h, false);
    fft_2d(&mut f2, w, h, false);
    // conjugated product: correlation, not convolution
    let mut prod: Vec<Complex<f64>> = f1
        .iter()
        .zip(&f2)
        .map(|(a, b)| a.conj() * b)
        .collect();
    fft_2d(&mut prod, w, h, true);

    let mut best = f64::NEG_INFINITY;
    let mut best_mn = (0usize, 0usize);
    for m in 0..h {
        for n in 0..w {
            let v = prod[m * w + n].re;
            if v > best {
                best = v;
                best_mn = (m, n);
            }
        }
    }
    let (m, n) = best_mn;
    let m0 = if m <= h / 2 { m as i64 } else { m as i64 - h as i64 };
    let n0 = if n <= w / 2 { n as i64 } else { n as i64 - w as i64 };
    Ok(Shift { m0, n0 })
}

/// Translates image content by the shift: `out(i + m0, j + n0) = in(i, j)`.
/// Pixels shifted in from outside become background (0).
pub fn translate_image(img: &GrayImage, shift: &Shift) -> GrayImage {
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let sx = x as i64 - shift.n0;
        let sy = y as i64 - shift.m0;
        if img.in_bounds(sx, sy) {
            img.get(sx as u32, sy as u32)
        } else {
            0.0
        }
    })
    .expect("translation preserves the intensity range")
}

/// Embeds an image in the top-left corner of a canvas twice its size.
fn pad_double(img: &GrayImage) -> GrayImage {
    GrayImage::from_fn(img.width() * 2, img.height() * 2, |x, y| {
        if x < img.width() && y < img.height() {
            img.get(x, y)
        } else {
            0.0
        }
    })
    .expect("padding preserves the intensity range")
}

/// Aligns a stack to its first slice: consecutive pairwise shifts are
/// measured on zero-padded copies, accumulated, and each slice is
/// translated by the negated cumulative shift. Returns the aligned slices
/// and the per-slice corrections that were applied.
pub fn align_stack(masks: &[GrayImage]) -> Result<(Vec<GrayImage>, Vec<Shift>)> {
    if masks.len() < 2 {
        return Err(Error::Parameter(
            "alignment needs at least two slices".into(),
        ));
    }
    let mut corrections = Vec::with_capacity(masks.len());
    corrections.push(Shift::default());
    let mut cumulative = Shift::default();
    for k in 1..masks.len() {
        let prev = pad_double(&masks[k - 1]);
        let cur = pad_double(&masks[k]);
        let s = cross_correlation_shift(&prev, &cur)
            .map_err(|e| e.in_stage("align", format!("slices {} and {k}", k - 1)))?;
        cumulative.m0 += s.m0;
        cumulative.n0 += s.n0;
        corrections.push(Shift {
            m0: -cumulative.m0,
            n0: -cumulative.n0,
        });
    }
    let aligned = masks
        .iter()
        .zip(&corrections)
        .map(|(img, c)| translate_image(img, c))
        .collect();
    Ok((aligned, corrections))
}

/// Applies a per-slice correction to the records of that slice: centroids
/// and mask pixels move with the image content; mask pixels leaving the
/// image are dropped.
pub fn translate_records(
    records: &[CellRecord],
    correction: &Shift,
    width: u32,
    height: u32,
) -> Vec<CellRecord> {
    records
        .iter()
        .map(|r| {
            let mask: Vec<(u32, u32)> = r
                .mask
                .iter()
                .filter_map(|&(x, y)| {
                    let nx = x as i64 + correction.n0;
                    let ny = y as i64 + correction.m0;
                    if nx >= 0 && ny >= 0 && (nx as u64) < width as u64 && (ny as u64) < height as u64
                    {
                        Some((nx as u32, ny as u32))
                    } else {
                        None
                    }
                })
                .collect();
            let mut out = r.clone();
            out.centroid = (
                r.centroid.0 + correction.n0 as f64,
                r.centroid.1 + correction.m0 as f64,
            );
            out.mask = mask;
            out.mask.sort_unstable_by_key(|&(x, y)| (y, x));
            out
        })
        .collect()
}
