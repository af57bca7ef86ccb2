//! Full pipeline orchestration: enhancement, seeding, per-seed graph-cut
//! segmentation, slice assembly, consistency filtering, alignment and
//! evaluation, with every stage's artifacts written under the output
//! directory. Runs are deterministic for a given config and input set,
//! independent of the parallelism degree.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::assembly::{assemble_slice, CellRecord, LabeledSlice};
use crate::clahe::apply_clahe;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport, GroundTruth};
use crate::graphcut::{segment_seed, GraphCutParams, SegmentedCell};
use crate::image::{gradient, GrayImage};
use crate::membrane::{estimate_profile, BioParams, MembraneProfile};
use crate::pgm;
use crate::postprocess::{
    align_stack, consistency_filter, translate_records, CellMatrix, FilterParams, FilteredMatrix,
    Shift,
};
use crate::seeding::{detect_seeds, hough_accumulate, Seed};

/// In-memory results of a pipeline run; everything is also on disk under
/// the configured output directory.
#[derive(Debug)]
pub struct PipelineReport {
    pub slice_count: usize,
    pub seed_counts: Vec<usize>,
    /// Assembled per-slice records before filtering.
    pub matrix: CellMatrix,
    pub filtered: FilteredMatrix,
    /// Filtered records translated by the alignment corrections.
    pub aligned_matrix: CellMatrix,
    pub corrections: Vec<Shift>,
    pub eval_prefilter: Option<EvalReport>,
    pub eval_postfilter: Option<EvalReport>,
    /// `(window, report)` rows of the window study, when enabled.
    pub window_study: Option<Vec<(u32, EvalReport)>>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn slice_file(dir: &Path, sub: &str, idx: usize) -> PathBuf {
    dir.join(sub).join(format!("slice_{idx:03}.pgm"))
}

fn cells_csv(slices: &[Vec<CellRecord>]) -> String {
    let mut out = String::from("slice,cell,cx,cy,area,perimeter\n");
    for records in slices {
        for r in records {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.slice_idx, r.cell_idx, r.centroid.0, r.centroid.1, r.area, r.perimeter
            )
            .expect("string write");
        }
    }
    out
}

/// Loads records back from a `slice,cell,cx,cy,area,perimeter` CSV.
/// The returned records carry no masks.
pub fn read_cells_csv(path: &Path) -> Result<CellMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut slices: Vec<Vec<CellRecord>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("slice") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::MalformedInput(format!(
                "{}:{}: expected slice,cell,cx,cy,area,perimeter",
                path.display(),
                lineno + 1
            )));
        }
        let bad = |what: &str| {
            Error::MalformedInput(format!(
                "{}:{}: invalid {what}",
                path.display(),
                lineno + 1
            ))
        };
        let slice: usize = fields[0].trim().parse().map_err(|_| bad("slice"))?;
        let cell: usize = fields[1].trim().parse().map_err(|_| bad("cell"))?;
        let cx: f64 = fields[2].trim().parse().map_err(|_| bad("cx"))?;
        let cy: f64 = fields[3].trim().parse().map_err(|_| bad("cy"))?;
        let area: usize = fields[4].trim().parse().map_err(|_| bad("area"))?;
        let perimeter: usize = fields[5].trim().parse().map_err(|_| bad("perimeter"))?;
        if slices.len() <= slice {
            slices.resize(slice + 1, Vec::new());
        }
        slices[slice].push(CellRecord::from_stats(slice, cell, (cx, cy), area, perimeter));
    }
    CellMatrix::new(slices)
}

fn seeds_csv(seeds: &[Seed]) -> String {
    let mut out = String::from("x,y,r_c,score\n");
    for s in seeds {
        writeln!(out, "{},{},{},{}", s.x, s.y, s.r_c, s.score).expect("string write");
    }
    out
}

fn shifts_csv(corrections: &[Shift]) -> String {
    let mut out = String::from("slice,m0,n0\n");
    for (i, s) in corrections.iter().enumerate() {
        writeln!(out, "{i},{},{}", s.m0, s.n0).expect("string write");
    }
    out
}

/// Rebuilds a label image from a slice's records.
fn labels_from_records(records: &[CellRecord], width: u32, height: u32) -> Vec<u16> {
    let mut labels = vec![0u16; (width as usize) * (height as usize)];
    for r in records {
        for &(x, y) in &r.mask {
            labels[(y as usize) * (width as usize) + (x as usize)] = r.cell_idx as u16;
        }
    }
    labels
}

fn binary_mask(records: &[CellRecord], width: u32, height: u32) -> GrayImage {
    GrayImage::new(
        width,
        height,
        labels_from_records(records, width, height)
            .into_iter()
            .map(|l| if l > 0 { 1.0 } else { 0.0 })
            .collect(),
    )
    .expect("binary mask construction cannot fail")
}

/// Enhances, seeds and segments one slice into a labeled result.
fn process_slice(
    idx: usize,
    enhanced: &GrayImage,
    bio: &BioParams,
    config: &PipelineConfig,
) -> Result<(Vec<Seed>, LabeledSlice)> {
    let subject = || format!("slice {idx}");
    let field = gradient(enhanced).map_err(|e| e.in_stage("seeds", subject()))?;
    let acc = hough_accumulate(
        enhanced,
        &field,
        config.r_min,
        config.r_max,
        config.vote_direction,
    )
    .map_err(|e| e.in_stage("seeds", subject()))?;
    let seeds = detect_seeds(&acc, config.seed_rel_threshold, config.seed_nms_radius)
        .map_err(|e| e.in_stage("seeds", subject()))?;

    let gparams = GraphCutParams {
        g_mode: config.g_mode,
        w_max: config.w_max,
    };
    let mut cells: Vec<SegmentedCell> = Vec::with_capacity(seeds.len());
    for (si, seed) in seeds.iter().enumerate() {
        match segment_seed(enhanced, seed, bio, &gparams) {
            Ok(cell) => cells.push(cell),
            // a seed whose constraints cannot be met is skipped
            Err(Error::ConstraintViolation(_)) => continue,
            Err(e) => {
                return Err(e.in_stage("segment", format!("slice {idx} seed {si}")));
            }
        }
    }
    let labeled = assemble_slice(
        cells,
        idx,
        enhanced.width(),
        enhanced.height(),
        bio,
        config.cc_min,
        config.jaccard_min,
    )
    .map_err(|e| e.in_stage("assemble", subject()))?;
    Ok((seeds, labeled))
}

/// Runs the whole pipeline. Partial outputs of completed stages stay on
/// disk when a later stage fails.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_pipeline_inner(config))
}

fn run_pipeline_inner(config: &PipelineConfig) -> Result<PipelineReport> {
    let out = &config.output_dir;

    // stage: load
    let stack = pgm::load_stack(&config.manifest).map_err(|e| e.in_stage("load", "manifest"))?;
    let (width, height) = (stack.width(), stack.height());

    // stage: enhance
    let enhanced: Vec<GrayImage> = stack
        .slices()
        .par_iter()
        .enumerate()
        .map(|(i, slice)| {
            apply_clahe(slice, &config.clahe)
                .map_err(|e| e.in_stage("enhance", format!("slice {i}")))
        })
        .collect::<Result<_>>()?;
    for (i, img) in enhanced.iter().enumerate() {
        pgm::write_gray16(&slice_file(out, "enhanced", i), img)?;
    }

    // stage: membrane template
    let profile = match &config.membrane_profile {
        Some(path) => MembraneProfile::read_csv(path)?,
        None => {
            let idx = config.profile_slice;
            let source = enhanced.get(idx).ok_or_else(|| {
                Error::Config(format!(
                    "profile_slice {idx} outside the {}-slice stack",
                    enhanced.len()
                ))
            })?;
            let p = estimate_profile(source, &config.profile_rays)
                .map_err(|e| e.in_stage("profile", format!("slice {idx}")))?;
            p.write_csv(&out.join("membrane_profile.csv"))?;
            p
        }
    };
    let bio = BioParams::new(config.r_min, config.r_max, config.l_m, profile)
        .map_err(|e| e.in_stage("profile", "bio parameters"))?;

    // stage: seeds + segment + assemble, one slice at a time
    let results: Vec<(Vec<Seed>, LabeledSlice)> = enhanced
        .par_iter()
        .enumerate()
        .map(|(i, img)| process_slice(i, img, &bio, config))
        .collect::<Result<_>>()?;
    let mut seed_counts = Vec::with_capacity(results.len());
    let mut slices: Vec<Vec<CellRecord>> = Vec::with_capacity(results.len());
    for (i, (seeds, labeled)) in results.iter().enumerate() {
        write_text(
            &out.join("seeds").join(format!("slice_{i:03}.csv")),
            &seeds_csv(seeds),
        )?;
        pgm::write_labels(&slice_file(out, "labels", i), width, height, &labeled.labels)?;
        seed_counts.push(seeds.len());
        slices.push(labeled.records.clone());
    }
    let matrix = CellMatrix::new(slices)?;
    write_text(&out.join("cells.csv"), &cells_csv(&matrix.slices))?;

    // stage: consistency filter
    let filtered = consistency_filter(&matrix, &config.filter)
        .map_err(|e| e.in_stage("filter", "cell matrix"))?;
    write_text(
        &out.join("cells_filtered.csv"),
        &cells_csv(&filtered.matrix.slices),
    )?;
    let mut flags = String::from("slice,verified\n");
    for (i, v) in filtered.verified.iter().enumerate() {
        writeln!(flags, "{i},{}", *v as u8).expect("string write");
    }
    write_text(&out.join("filter_flags.csv"), &flags)?;
    for (i, records) in filtered.matrix.slices.iter().enumerate() {
        pgm::write_labels(
            &slice_file(out, "labels_filtered", i),
            width,
            height,
            &labels_from_records(records, width, height),
        )?;
    }

    // stage: evaluation (before alignment, in input coordinates)
    let truth = match &config.ground_truth {
        Some(path) => Some(GroundTruth::read_csv(path)?),
        None => None,
    };
    let mut eval_prefilter = None;
    let mut eval_postfilter = None;
    let mut window_study = None;
    if let Some(truth) = &truth {
        let pre = evaluate(&matrix.slices, truth, config.eval_tol)
            .map_err(|e| e.in_stage("eval", "pre-filter matrix"))?;
        let post = evaluate(&filtered.matrix.slices, truth, config.eval_tol)
            .map_err(|e| e.in_stage("eval", "filtered matrix"))?;
        write_text(&out.join("eval_prefilter.csv"), &pre.to_csv())?;
        write_text(&out.join("eval_postfilter.csv"), &post.to_csv())?;
        write_text(
            &out.join("eval_summary.txt"),
            &format!(
                "pre-filter:  {}\npost-filter: {}\n",
                pre.summary(),
                post.summary()
            ),
        )?;

        if config.window_study {
            let mut rows = Vec::new();
            for window in [3u32, 5, 7] {
                if matrix.len() < window as usize {
                    continue;
                }
                let params = FilterParams {
                    window,
                    ..config.filter
                };
                let f = consistency_filter(&matrix, &params)
                    .map_err(|e| e.in_stage("filter", format!("window {window}")))?;
                let report = evaluate(&f.matrix.slices, truth, config.eval_tol)
                    .map_err(|e| e.in_stage("eval", format!("window {window}")))?;
                rows.push((window, report));
            }
            let mut study = String::from("window,tp,fp,fn,recall,precision,f_measure\n");
            for (window, r) in &rows {
                let fmt =
                    |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "undefined".into());
                writeln!(
                    study,
                    "{window},{},{},{},{},{},{}",
                    r.tp,
                    r.fp,
                    r.fn_,
                    fmt(r.recall),
                    fmt(r.precision),
                    fmt(r.f_measure())
                )
                .expect("string write");
            }
            write_text(&out.join("window_study.csv"), &study)?;
            window_study = Some(rows);
        }
        eval_prefilter = Some(pre);
        eval_postfilter = Some(post);
    }

    // stage: alignment of the filtered masks
    let masks: Vec<GrayImage> = filtered
        .matrix
        .slices
        .iter()
        .map(|records| binary_mask(records, width, height))
        .collect();
    let (aligned, corrections) = align_stack(&masks)?;
    for (i, img) in aligned.iter().enumerate() {
        pgm::write_gray16(&slice_file(out, "aligned", i), img)?;
    }
    write_text(&out.join("shifts.csv"), &shifts_csv(&corrections))?;
    let aligned_slices: Vec<Vec<CellRecord>> = filtered
        .matrix
        .slices
        .iter()
        .zip(&corrections)
        .map(|(records, c)| translate_records(records, c, width, height))
        .collect();
    let aligned_matrix = CellMatrix::new(aligned_slices)?;
    write_text(&out.join("cells_aligned.csv"), &cells_csv(&aligned_matrix.slices))?;

    Ok(PipelineReport {
        slice_count: stack.len(),
        seed_counts,
        matrix,
        filtered,
        aligned_matrix,
        corrections,
        eval_prefilter,
        eval_postfilter,
        window_study,
    })
}

/// Writes a generated phantom to disk: slice PGMs + manifest, ground-truth
/// CSV, true label masks, the membrane profile and the true offsets.
pub fn write_phantom(phantom: &crate::phantom::Phantom, dir: &Path) -> Result<()> {
    let mut entries = Vec::with_capacity(phantom.stack.len());
    let angles = phantom.stack.angles().expect("phantom stacks carry angles");
    for (i, slice) in phantom.stack.slices().iter().enumerate() {
        let name = format!("slice_{i:03}.pgm");
        pgm::write_gray16(&dir.join("slices").join(&name), slice)?;
        entries.push((format!("slices/{name}"), angles[i]));
    }
    pgm::write_manifest(&dir.join("stack.txt"), &entries)?;
    phantom.truth.write_csv(&dir.join("truth.csv"))?;
    for (i, labels) in phantom.true_masks.iter().enumerate() {
        pgm::write_labels(
            &dir.join("true_masks").join(format!("slice_{i:03}.pgm")),
            phantom.stack.width(),
            phantom.stack.height(),
            labels,
        )?;
    }
    phantom.profile.write_csv(&dir.join("profile.csv"))?;
    let mut offsets = String::from("slice,m,n\n");
    for (i, (m, n)) in phantom.offsets.iter().enumerate() {
        writeln!(offsets, "{i},{m},{n}").expect("string write");
    }
    write_text(&dir.join("true_offsets.csv"), &offsets)?;
    Ok(())
}
