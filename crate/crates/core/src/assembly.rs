//! Merging per-seed masks into one labeled slice: outlier rejection,
//! duplicate fusion by mask overlap, and nearest-centroid overlap
//! resolution.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graphcut::SegmentedCell;
use crate::image::GrayImage;
use crate::membrane::BioParams;

/// Default floor on the mean boundary correlation of a kept cell.
pub const DEFAULT_CC_MIN: f64 = 0.2;
/// Default Jaccard overlap at which two masks count as the same region.
pub const DEFAULT_JACCARD_MIN: f64 = 0.8;

/// One segmented cell of one slice, with its derived shape statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub slice_idx: usize,
    /// 1-based index within the slice; doubles as the label map value.
    pub cell_idx: usize,
    pub centroid: (f64, f64),
    pub area: usize,
    pub perimeter: usize,
    /// Mask pixels, sorted by (y, x). Empty for records loaded from CSV.
    pub mask: Vec<(u32, u32)>,
}

impl CellRecord {
    /// Builds a record from a mask, deriving centroid, area and perimeter
    /// (mask pixels with at least one non-mask 4-neighbor; out-of-image
    /// sides count as non-mask).
    pub fn from_mask(slice_idx: usize, cell_idx: usize, mut mask: Vec<(u32, u32)>) -> Result<Self> {
        if mask.is_empty() {
            return Err(Error::Parameter("cell mask is empty".into()));
        }
        mask.sort_unstable_by_key(|&(x, y)| (y, x));
        mask.dedup();
        let centroid = centroid_of(&mask);
        let perimeter = perimeter_of(&mask);
        Ok(Self {
            slice_idx,
            cell_idx,
            centroid,
            area: mask.len(),
            perimeter,
            mask,
        })
    }

    /// Record straight from tabulated statistics, carrying no mask.
    pub fn from_stats(
        slice_idx: usize,
        cell_idx: usize,
        centroid: (f64, f64),
        area: usize,
        perimeter: usize,
    ) -> Self {
        Self {
            slice_idx,
            cell_idx,
            centroid,
            area,
            perimeter,
            mask: Vec::new(),
        }
    }
}

fn centroid_of(mask: &[(u32, u32)]) -> (f64, f64) {
    let n = mask.len() as f64;
    let (sx, sy) = mask
        .iter()
        .fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x as f64, sy + y as f64));
    (sx / n, sy / n)
}

fn perimeter_of(mask: &[(u32, u32)]) -> usize {
    let set: std::collections::HashSet<(u32, u32)> = mask.iter().copied().collect();
    mask.iter()
        .filter(|&&(x, y)| {
            [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)].iter().any(|&(ox, oy)| {
                let nx = x as i64 + ox;
                let ny = y as i64 + oy;
                nx < 0 || ny < 0 || !set.contains(&(nx as u32, ny as u32))
            })
        })
        .count()
}

/// Fully assembled slice: label image plus one record per occupied label.
#[derive(Debug, Clone)]
pub struct LabeledSlice {
    pub width: u32,
    pub height: u32,
    /// 0 = background, k >= 1 = cell k.
    pub labels: Vec<u16>,
    pub records: Vec<CellRecord>,
}

impl LabeledSlice {
    /// Binarized view of the label map: cell pixels 1.0, background 0.0.
    pub fn to_binary_mask(&self) -> GrayImage {
        GrayImage::new(
            self.width,
            self.height,
            self.labels.iter().map(|&l| if l > 0 { 1.0 } else { 0.0 }).collect(),
        )
        .expect("binary mask construction cannot fail")
    }
}

/// Drops cells that fail the morphology band
/// `area in [pi r_min^2 / 2, 2 pi r_max^2]` or whose mean boundary
/// correlation falls below `cc_min`.
pub fn reject_outliers(cells: Vec<SegmentedCell>, bio: &BioParams, cc_min: f64) -> Vec<SegmentedCell> {
    let min_area = std::f64::consts::PI * (bio.r_min as f64).powi(2) / 2.0;
    let max_area = 2.0 * std::f64::consts::PI * (bio.r_max as f64).powi(2);
    cells
        .into_iter()
        .filter(|c| {
            let area = c.pixels.len() as f64;
            area >= min_area && area <= max_area && c.mean_boundary_cc >= cc_min
        })
        .collect()
}

fn jaccard(a: &[(u32, u32)], b: &[(u32, u32)]) -> f64 {
    // both masks sorted by (y, x)
    let mut i = 0;
    let mut j = 0;
    let mut inter = 0usize;
    while i < a.len() && j < b.len() {
        let ka = (a[i].1, a[i].0);
        let kb = (b[j].1, b[j].0);
        match ka.cmp(&kb) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, i: usize) -> usize {
        if self.0[i] != i {
            let root = self.find(self.0[i]);
            self.0[i] = root;
        }
        self.0[i]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller index as the representative
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Fuses masks whose pairwise Jaccard overlap reaches `jaccard_min`,
/// applying the transitive closure. Fused cells take the union mask.
pub fn merge_duplicates(masks: Vec<Vec<(u32, u32)>>, jaccard_min: f64) -> Vec<Vec<(u32, u32)>> {
    let n = masks.len();
    let mut sorted: Vec<Vec<(u32, u32)>> = masks;
    for m in sorted.iter_mut() {
        m.sort_unstable_by_key(|&(x, y)| (y, x));
        m.dedup();
    }
    let mut uf = UnionFind::new(n);
    for a in 0..n {
        for b in a + 1..n {
            if jaccard(&sorted[a], &sorted[b]) >= jaccard_min {
                uf.union(a, b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let root = uf.find(i);
        groups[root].push(i);
    }
    let mut out = Vec::new();
    for group in groups.into_iter().filter(|g| !g.is_empty()) {
        let mut union: Vec<(u32, u32)> = group
            .iter()
            .flat_map(|&i| sorted[i].iter().copied())
            .collect();
        union.sort_unstable_by_key(|&(x, y)| (y, x));
        union.dedup();
        out.push(union);
    }
    out
}

/// Assigns every contested pixel to the cell with the nearest centroid
/// (ties to the lower cell index), producing disjoint masks, a label image
/// and self-consistent records. Cells emptied by reassignment are dropped
/// and the remaining cells renumbered.
pub fn resolve_overlaps(
    masks: Vec<Vec<(u32, u32)>>,
    slice_idx: usize,
    width: u32,
    height: u32,
) -> Result<LabeledSlice> {
    let centroids: Vec<(f64, f64)> = masks.iter().map(|m| centroid_of(m)).collect();
    let mut owners: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
    for (i, mask) in masks.iter().enumerate() {
        for &p in mask {
            owners.entry(p).or_default().push(i);
        }
    }
    let mut resolved: Vec<Vec<(u32, u32)>> = vec![Vec::new(); masks.len()];
    for (p, cells) in owners {
        let winner = if cells.len() == 1 {
            cells[0]
        } else {
            let mut best = cells[0];
            let mut best_d = f64::INFINITY;
            let mut sorted = cells.clone();
            sorted.sort_unstable();
            for &c in &sorted {
                let d = (p.0 as f64 - centroids[c].0).hypot(p.1 as f64 - centroids[c].1);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        };
        resolved[winner].push(p);
    }

    let mut labels = vec![0u16; (width as usize) * (height as usize)];
    let mut records = Vec::new();
    let mut next_idx = 1usize;
    for mask in resolved.into_iter() {
        if mask.is_empty() {
            continue;
        }
        if next_idx > u16::MAX as usize {
            return Err(Error::Parameter(format!(
                "slice {slice_idx} holds more than {} cells",
                u16::MAX
            )));
        }
        let record = CellRecord::from_mask(slice_idx, next_idx, mask)?;
        for &(x, y) in &record.mask {
            if x >= width || y >= height {
                return Err(Error::Dimension(format!(
                    "mask pixel ({x}, {y}) outside {width}x{height} slice"
                )));
            }
            labels[(y as usize) * (width as usize) + (x as usize)] = next_idx as u16;
        }
        records.push(record);
        next_idx += 1;
    }
    Ok(LabeledSlice {
        width,
        height,
        labels,
        records,
    })
}

/// Full per-slice assembly: outlier rejection, duplicate fusion, overlap
/// resolution.
pub fn assemble_slice(
    cells: Vec<SegmentedCell>,
    slice_idx: usize,
    width: u32,
    height: u32,
    bio: &BioParams,
    cc_min: f64,
    jaccard_min: f64,
) -> Result<LabeledSlice> {
    let kept = reject_outliers(cells, bio, cc_min);
    let masks = merge_duplicates(kept.into_iter().map(|c| c.pixels).collect(), jaccard_min);
    resolve_overlaps(masks, slice_idx, width, height)
}
