//! Synthetic slice stacks with known ground truth: ring-membrane disks,
//! per-slice jitter, spurious single-slice cells and Gaussian noise at a
//! controlled SNR. Everything is reproducible from the RNG seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::evaluation::{Annotation, GroundTruth};
use crate::image::{GrayImage, SliceStack};
use crate::membrane::MembraneProfile;

/// Geometry and noise of a generated stack.
#[derive(Debug, Clone)]
pub struct PhantomSpec {
    pub width: u32,
    pub height: u32,
    pub slice_count: usize,
    pub disk_count: usize,
    pub radius_min: u32,
    pub radius_max: u32,
    /// Full width of the membrane ring bump (Gaussian sigma = width / 2).
    pub ring_width: f64,
    /// Peak intensity of the ring above the background.
    pub ring_contrast: f64,
    pub background: f64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise_sigma: f64,
    /// Per-slice rigid offsets are drawn uniformly from [-jitter, jitter]
    /// on each axis.
    pub jitter: u32,
    /// Expected spurious single-slice cells per slice, as a fraction of
    /// `disk_count`.
    pub spurious_rate: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            slice_count: 21,
            disk_count: 5,
            radius_min: 9,
            radius_max: 13,
            ring_width: 3.0,
            ring_contrast: 0.45,
            background: 0.35,
            noise_sigma: 0.0,
            jitter: 4,
            spurious_rate: 0.1,
        }
    }
}

impl PhantomSpec {
    fn ring_sigma(&self) -> f64 {
        self.ring_width / 2.0
    }

    /// Half-length of the recorded membrane template.
    fn template_half(&self) -> u32 {
        (2.0 * self.ring_sigma()).ceil() as u32
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::PhantomSpec("slices must be at least 16x16".into()));
        }
        if self.slice_count == 0 || self.disk_count == 0 {
            return Err(Error::PhantomSpec(
                "need at least one slice and one disk".into(),
            ));
        }
        if self.radius_min < 3 || self.radius_min > self.radius_max {
            return Err(Error::PhantomSpec(format!(
                "radius range [{}, {}] invalid",
                self.radius_min, self.radius_max
            )));
        }
        if 2 * self.radius_max >= self.width.min(self.height) {
            return Err(Error::PhantomSpec(
                "radii must stay below half the smallest dimension".into(),
            ));
        }
        if self.ring_width <= 0.0 {
            return Err(Error::PhantomSpec("ring width must be positive".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::PhantomSpec("noise sigma must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.background)
            || self.ring_contrast < 0.0
            || self.background + self.ring_contrast > 1.0
        {
            return Err(Error::PhantomSpec(
                "background + ring contrast must stay within [0, 1]".into(),
            ));
        }
        if self.spurious_rate < 0.0 {
            return Err(Error::PhantomSpec("spurious rate must be >= 0".into()));
        }
        Ok(())
    }
}

/// A generated stack with every piece of ground truth that produced it.
#[derive(Debug, Clone)]
pub struct Phantom {
    /// Noisy slices, with synthetic tilt angles.
    pub stack: SliceStack,
    /// Noise-free slices, for SNR measurement.
    pub clean: Vec<GrayImage>,
    /// Real (persistent) disk annotations per slice, at jittered positions.
    pub truth: GroundTruth,
    /// Per-slice true label maps (disk k has label k, spurious cells 0).
    pub true_masks: Vec<Vec<u16>>,
    /// The true membrane template, inside-to-outside.
    pub profile: MembraneProfile,
    /// Per-slice rigid offsets (row, column).
    pub offsets: Vec<(i64, i64)>,
    /// Base disk geometry before jitter: (cx, cy, radius).
    pub disks: Vec<(f64, f64, u32)>,
    pub noise_sigma: f64,
}

impl Phantom {
    /// Measured SNR of the noisy stack against the clean one, in dB.
    pub fn measured_snr_db(&self) -> f64 {
        measure_snr_db(&self.clean, self.stack.slices())
    }
}

/// `10 log10(signal power / noise power)` with signal power the mean square
/// of the clean stack. Infinite when the stacks are identical.
pub fn measure_snr_db(clean: &[GrayImage], noisy: &[GrayImage]) -> f64 {
    let mut signal = 0.0;
    let mut noise = 0.0;
    for (c, n) in clean.iter().zip(noisy) {
        for (&cv, &nv) in c.data().iter().zip(n.data()) {
            signal += cv * cv;
            noise += (nv - cv) * (nv - cv);
        }
    }
    if noise == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (signal / noise).log10()
}

/// Noise sigma that yields the target SNR against the given clean slices.
pub fn sigma_for_snr(clean: &[GrayImage], target_db: f64) -> f64 {
    let mut signal = 0.0;
    let mut count = 0usize;
    for c in clean {
        for &v in c.data() {
            signal += v * v;
        }
        count += c.data().len();
    }
    let mean_square = signal / count as f64;
    (mean_square / 10f64.powf(target_db / 10.0)).sqrt()
}

fn ring_value(rho: f64, radius: f64, sigma: f64, background: f64, contrast: f64) -> f64 {
    background + contrast * (-(rho - radius) * (rho - radius) / (2.0 * sigma * sigma)).exp()
}

/// Generates a phantom stack from the spec, byte-reproducible from `seed`.
pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<Phantom> {
    generate_inner(spec, seed)
}

/// Generates with the noise sigma chosen so the measured SNR lands near
/// `target_db`. The sigma is solved from the clean stack's power, then
/// refined against the measured value (clamping to [0, 1] removes a little
/// noise power). Geometry is identical across refinement passes.
pub fn generate_phantom_with_snr(
    spec: &PhantomSpec,
    target_db: f64,
    seed: u64,
) -> Result<Phantom> {
    let mut spec = spec.clone();
    spec.noise_sigma = 0.0;
    let clean = generate_inner(&spec, seed)?;
    spec.noise_sigma = sigma_for_snr(&clean.clean, target_db);
    let mut phantom = generate_inner(&spec, seed)?;
    for _ in 0..3 {
        let measured = phantom.measured_snr_db();
        if (measured - target_db).abs() <= 0.25 {
            break;
        }
        spec.noise_sigma *= 10f64.powf((measured - target_db) / 20.0);
        phantom = generate_inner(&spec, seed)?;
    }
    Ok(phantom)
}

fn generate_inner(spec: &PhantomSpec, seed: u64) -> Result<Phantom> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // separate stream for pixel noise so the geometry does not depend on
    // the noise level
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let sigma = spec.ring_sigma();
    let half = spec.template_half();
    let reach = spec.radius_max as f64 + 3.0 * sigma;
    let margin = (reach + spec.jitter as f64 + 1.0).ceil();
    if 2.0 * margin >= spec.width as f64 || 2.0 * margin >= spec.height as f64 {
        return Err(Error::PhantomSpec(format!(
            "margin {margin} leaves no room for disk centers in a {}x{} slice",
            spec.width, spec.height
        )));
    }

    // base disk placement with generous separation
    let mut disks: Vec<(f64, f64, u32)> = Vec::with_capacity(spec.disk_count);
    let mut attempts = 0usize;
    while disks.len() < spec.disk_count {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::PhantomSpec(format!(
                "could not pack {} disks of radius <= {} into {}x{}",
                spec.disk_count, spec.radius_max, spec.width, spec.height
            )));
        }
        let cx = rng.gen_range(margin..spec.width as f64 - margin);
        let cy = rng.gen_range(margin..spec.height as f64 - margin);
        let r = rng.gen_range(spec.radius_min..=spec.radius_max);
        let min_sep = |other_r: u32| {
            (r + other_r) as f64 + 6.0 * sigma + 2.0 * spec.jitter as f64 + 2.0
        };
        if disks
            .iter()
            .all(|&(ox, oy, or)| (cx - ox).hypot(cy - oy) >= min_sep(or))
        {
            disks.push((cx, cy, r));
        }
    }

    // the true membrane template, sampled at integer radial offsets
    let template: Vec<f64> = (0..=2 * half)
        .map(|k| {
            let d = k as f64 - half as f64;
            ring_value(spec.radius_min as f64 + d, spec.radius_min as f64, sigma, spec.background, spec.ring_contrast)
        })
        .collect();
    let profile = MembraneProfile::new(template)?;

    let normal = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::PhantomSpec(format!("noise distribution: {e}")))?;

    let mut clean_slices = Vec::with_capacity(spec.slice_count);
    let mut noisy_slices = Vec::with_capacity(spec.slice_count);
    let mut truth_slices = Vec::with_capacity(spec.slice_count);
    let mut true_masks = Vec::with_capacity(spec.slice_count);
    let mut offsets = Vec::with_capacity(spec.slice_count);

    let j = spec.jitter as i64;
    let spurious_whole = (spec.spurious_rate * spec.disk_count as f64).floor();
    let spurious_frac = spec.spurious_rate * spec.disk_count as f64 - spurious_whole;

    for _ in 0..spec.slice_count {
        let offset = if j > 0 {
            (rng.gen_range(-j..=j), rng.gen_range(-j..=j))
        } else {
            (0, 0)
        };
        offsets.push(offset);

        // jittered real disks of this slice
        let placed: Vec<(f64, f64, u32)> = disks
            .iter()
            .map(|&(cx, cy, r)| (cx + offset.1 as f64, cy + offset.0 as f64, r))
            .collect();

        // spurious single-slice cells, away from the real disks
        let mut n_spurious = spurious_whole as usize;
        if rng.gen::<f64>() < spurious_frac {
            n_spurious += 1;
        }
        let mut spurious: Vec<(f64, f64, u32)> = Vec::with_capacity(n_spurious);
        let mut tries = 0usize;
        while spurious.len() < n_spurious && tries < 10_000 {
            tries += 1;
            let cx = rng.gen_range(margin..spec.width as f64 - margin);
            let cy = rng.gen_range(margin..spec.height as f64 - margin);
            let r = rng.gen_range(spec.radius_min..=spec.radius_max);
            let clear = placed
                .iter()
                .chain(spurious.iter())
                .all(|&(ox, oy, or)| {
                    (cx - ox).hypot(cy - oy) >= (r + or) as f64 + 6.0 * sigma + 2.0
                });
            if clear {
                spurious.push((cx, cy, r));
            }
        }

        let all_rings: Vec<(f64, f64, u32)> =
            placed.iter().chain(spurious.iter()).copied().collect();
        let clean = GrayImage::from_fn(spec.width, spec.height, |x, y| {
            let mut v = spec.background;
            for &(cx, cy, r) in &all_rings {
                let rho = (x as f64 - cx).hypot(y as f64 - cy);
                if (rho - r as f64).abs() <= 4.0 * sigma {
                    v += spec.ring_contrast
                        * (-(rho - r as f64) * (rho - r as f64) / (2.0 * sigma * sigma)).exp();
                }
            }
            v.min(1.0)
        })?;

        let noisy = if spec.noise_sigma > 0.0 {
            GrayImage::from_fn(spec.width, spec.height, |x, y| {
                (clean.get(x, y) + normal.sample(&mut noise_rng)).clamp(0.0, 1.0)
            })?
        } else {
            clean.clone()
        };

        truth_slices.push(
            placed
                .iter()
                .map(|&(cx, cy, r)| Annotation {
                    x: cx,
                    y: cy,
                    radius: Some(r as f64),
                })
                .collect::<Vec<_>>(),
        );

        let mut labels = vec![0u16; (spec.width as usize) * (spec.height as usize)];
        for (k, &(cx, cy, r)) in placed.iter().enumerate() {
            let r_f = r as f64;
            let x0 = (cx - r_f).floor().max(0.0) as u32;
            let x1 = ((cx + r_f).ceil() as u32).min(spec.width - 1);
            let y0 = (cy - r_f).floor().max(0.0) as u32;
            let y1 = ((cy + r_f).ceil() as u32).min(spec.height - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if (x as f64 - cx).hypot(y as f64 - cy) <= r_f {
                        labels[(y as usize) * (spec.width as usize) + (x as usize)] =
                            (k + 1) as u16;
                    }
                }
            }
        }
        true_masks.push(labels);
        clean_slices.push(clean);
        noisy_slices.push(noisy);
    }

    let n = spec.slice_count as f64;
    let angles: Vec<f64> = (0..spec.slice_count)
        .map(|i| (i as f64 - (n - 1.0) / 2.0) * 2.0)
        .collect();
    let stack = SliceStack::new(noisy_slices, Some(angles))?;
    Ok(Phantom {
        stack,
        clean: clean_slices,
        truth: GroundTruth {
            slices: truth_slices,
        },
        true_masks,
        profile,
        offsets,
        disks,
        noise_sigma: spec.noise_sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> PhantomSpec {
        PhantomSpec {
            width: 96,
            height: 96,
            slice_count: 3,
            disk_count: 2,
            radius_min: 8,
            radius_max: 10,
            jitter: 2,
            spurious_rate: 0.0,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn noiseless_phantom_has_infinite_snr_and_exact_template() {
        let spec = PhantomSpec {
            noise_sigma: 0.0,
            jitter: 0,
            ..small_spec()
        };
        let p = generate_phantom(&spec, 11).unwrap();
        assert_eq!(p.measured_snr_db(), f64::INFINITY);
        assert!(p.offsets.iter().all(|&o| o == (0, 0)));
        // the recorded template peaks at the ring radius with the full
        // contrast over the background
        let mid = p.profile.len() / 2;
        assert!((p.profile.values()[mid] - (spec.background + spec.ring_contrast)).abs() < 1e-12);
        assert!(p.profile.values()[0] < p.profile.values()[mid]);
    }

    #[test]
    fn target_snr_is_approximated() {
        let spec = small_spec();
        let p = generate_phantom_with_snr(&spec, 5.16, 11).unwrap();
        let measured = p.measured_snr_db();
        assert!(
            (measured - 5.16).abs() < 1.0,
            "measured {measured} dB, target 5.16 dB"
        );
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let spec = PhantomSpec {
            noise_sigma: 0.15,
            spurious_rate: 0.3,
            ..small_spec()
        };
        let a = generate_phantom(&spec, 42).unwrap();
        let b = generate_phantom(&spec, 42).unwrap();
        for (sa, sb) in a.stack.slices().iter().zip(b.stack.slices()) {
            assert_eq!(sa.data(), sb.data());
        }
        assert_eq!(a.offsets, b.offsets);
        assert_eq!(a.disks, b.disks);
        let c = generate_phantom(&spec, 43).unwrap();
        assert_ne!(
            a.stack.slices()[0].data(),
            c.stack.slices()[0].data(),
            "different seeds should differ"
        );
    }

    #[test]
    fn truth_follows_jitter() {
        let spec = small_spec();
        let p = generate_phantom(&spec, 7).unwrap();
        for (i, annotations) in p.truth.slices.iter().enumerate() {
            assert_eq!(annotations.len(), spec.disk_count);
            for (a, &(cx, cy, _)) in annotations.iter().zip(&p.disks) {
                assert_eq!(a.x, cx + p.offsets[i].1 as f64);
                assert_eq!(a.y, cy + p.offsets[i].0 as f64);
            }
        }
    }

    #[test]
    fn infeasible_packing_is_reported() {
        let spec = PhantomSpec {
            width: 96,
            height: 96,
            disk_count: 40,
            ..small_spec()
        };
        assert!(matches!(
            generate_phantom(&spec, 1),
            Err(Error::PhantomSpec(_))
        ));
    }

    #[test]
    fn masks_label_disks_in_order() {
        let spec = small_spec();
        let p = generate_phantom(&spec, 3).unwrap();
        let labels = &p.true_masks[0];
        let max = *labels.iter().max().unwrap();
        assert_eq!(max as usize, spec.disk_count);
        // the jittered center pixel of disk k carries label k
        for (k, a) in p.truth.slices[0].iter().enumerate() {
            let x = a.x.round() as usize;
            let y = a.y.round() as usize;
            assert_eq!(labels[y * spec.width as usize + x], (k + 1) as u16);
        }
    }
}
