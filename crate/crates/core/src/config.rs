//! Pipeline configuration: a flat `key = value` text file with documented
//! keys. Relative paths resolve against the config file's directory.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::clahe::ClaheParams;
use crate::error::{Error, Result};
use crate::graphcut::{GMode, W_MAX};
use crate::postprocess::{FilterMode, FilterParams};
use crate::seeding::VoteDirection;

/// Everything a pipeline run needs. See `PipelineConfig::example` for the
/// full key list.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    pub ground_truth: Option<PathBuf>,
    /// Membrane template CSV; alternative to `profile_rays`.
    pub membrane_profile: Option<PathBuf>,
    /// Ray endpoint pairs `(x0, y0, x1, y1)` for template estimation.
    pub profile_rays: Vec<((u32, u32), (u32, u32))>,
    /// Slice index the profile rays are sampled on (after enhancement).
    pub profile_slice: usize,

    pub clahe: ClaheParams,

    pub r_min: u32,
    pub r_max: u32,
    pub l_m: u32,

    pub seed_rel_threshold: f64,
    pub seed_nms_radius: u32,
    pub vote_direction: VoteDirection,

    pub g_mode: GMode,
    pub w_max: f64,
    pub cc_min: f64,
    pub jaccard_min: f64,

    pub filter: FilterParams,
    /// Also run windows 3, 5 and 7 and emit a comparison report.
    pub window_study: bool,

    pub eval_tol: f64,
    /// Worker threads; 0 uses every available core.
    pub parallelism: usize,
}

impl PipelineConfig {
    /// Parses a config file. Unknown keys are rejected.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Self::from_str_with_base(&text, &base)
    }

    pub fn from_str_with_base(text: &str, base: &Path) -> Result<Self> {
        let mut map: HashMap<String, Vec<String>> = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            // `#` starts a comment anywhere on the line
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            map.entry(key.trim().to_string())
                .or_default()
                .push(value.trim().to_string());
        }

        let ray_lines = map.remove("profile_ray");

        let mut single = |key: &str| -> Result<Option<String>> {
            match map.remove(key) {
                None => Ok(None),
                Some(mut v) if v.len() == 1 => Ok(Some(v.pop().unwrap())),
                Some(v) => Err(Error::Config(format!(
                    "key `{key}` given {} times",
                    v.len()
                ))),
            }
        };

        fn parse<T: std::str::FromStr>(key: &str, v: String) -> Result<T> {
            v.parse().map_err(|_| {
                Error::Config(format!("key `{key}`: cannot parse `{v}`"))
            })
        }

        macro_rules! get {
            ($key:literal, $default:expr) => {
                match single($key)? {
                    Some(v) => parse($key, v)?,
                    None => $default,
                }
            };
        }

        let manifest: String = match single("manifest")? {
            Some(v) => v,
            None => return Err(Error::Config("missing required key `manifest`".into())),
        };
        let output_dir: String = match single("output_dir")? {
            Some(v) => v,
            None => return Err(Error::Config("missing required key `output_dir`".into())),
        };
        let ground_truth: Option<String> = single("ground_truth")?;
        let membrane_profile: Option<String> = single("membrane_profile")?;
        let profile_slice: usize = get!("profile_slice", 0);

        let profile_rays = match ray_lines {
            None => Vec::new(),
            Some(lines) => {
                let mut rays = Vec::with_capacity(lines.len());
                for line in lines {
                    let nums: Vec<&str> = line.split(',').map(|s| s.trim()).collect();
                    if nums.len() != 4 {
                        return Err(Error::Config(format!(
                            "profile_ray `{line}`: expected x0,y0,x1,y1"
                        )));
                    }
                    let mut vals = [0u32; 4];
                    for (v, s) in vals.iter_mut().zip(&nums) {
                        *v = parse("profile_ray", s.to_string())?;
                    }
                    rays.push(((vals[0], vals[1]), (vals[2], vals[3])));
                }
                rays
            }
        };

        let r_min: u32 = get!("r_min", 0);
        let r_max: u32 = get!("r_max", 0);
        if r_min == 0 || r_max == 0 {
            return Err(Error::Config(
                "keys `r_min` and `r_max` are required and positive".into(),
            ));
        }
        let l_m: u32 = get!("l_m", 2 * r_max);

        let clahe = ClaheParams {
            tiles_x: get!("clahe_tiles_x", 8),
            tiles_y: get!("clahe_tiles_y", 8),
            n_bins: get!("clahe_bins", 256),
            alpha: get!("clahe_alpha", 100.0),
            s_max: get!("clahe_smax", 4.0),
        };

        let seed_rel_threshold: f64 = get!("seed_rel_threshold", 0.5);
        let seed_nms_radius: u32 = get!("seed_nms_radius", r_min);
        let vote_direction: VoteDirection = get!("vote_direction", VoteDirection::Both);

        let g_mode: GMode = get!("g_mode", GMode::Literal);
        let w_max: f64 = get!("w_max", W_MAX);
        let cc_min: f64 = get!("cc_min", crate::assembly::DEFAULT_CC_MIN);
        let jaccard_min: f64 = get!("jaccard_min", crate::assembly::DEFAULT_JACCARD_MIN);

        let filter = FilterParams {
            window: get!("filter_window", 3),
            center_tol: get!("filter_center_tol", r_max as f64 / 2.0),
            area_tol: get!("filter_area_tol", 0.2),
            perim_tol: get!("filter_perim_tol", 0.2),
            mode: get!("filter_mode", FilterMode::All),
        };
        let window_study: bool = get!("window_study", false);

        let eval_tol: f64 = get!("eval_tol", r_max as f64);
        let parallelism: usize = get!("parallelism", 0);

        if let Some(key) = map.keys().next() {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }

        let resolve = |s: String| -> PathBuf {
            let p = PathBuf::from(s);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        Ok(Self {
            manifest: resolve(manifest),
            output_dir: resolve(output_dir),
            ground_truth: ground_truth.map(&resolve),
            membrane_profile: membrane_profile.map(&resolve),
            profile_rays,
            profile_slice,
            clahe,
            r_min,
            r_max,
            l_m,
            seed_rel_threshold,
            seed_nms_radius,
            vote_direction,
            g_mode,
            w_max,
            cc_min,
            jaccard_min,
            filter,
            window_study,
            eval_tol,
            parallelism,
        })
    }

    /// Checks referenced input files and numeric ranges before any
    /// computation runs.
    pub fn validate(&self) -> Result<()> {
        if !self.manifest.is_file() {
            return Err(Error::Config(format!(
                "manifest `{}` does not exist",
                self.manifest.display()
            )));
        }
        for (key, path) in [
            ("ground_truth", &self.ground_truth),
            ("membrane_profile", &self.membrane_profile),
        ] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(Error::Config(format!(
                        "{key} `{}` does not exist",
                        p.display()
                    )));
                }
            }
        }
        if self.membrane_profile.is_none() && self.profile_rays.is_empty() {
            return Err(Error::Config(
                "need `membrane_profile` or at least one `profile_ray`".into(),
            ));
        }
        self.clahe.validate()?;
        if self.r_min == 0 || self.r_min > self.r_max || self.r_max > self.l_m {
            return Err(Error::Config(format!(
                "need 0 < r_min <= r_max <= l_m, got {} {} {}",
                self.r_min, self.r_max, self.l_m
            )));
        }
        if !(self.seed_rel_threshold > 0.0 && self.seed_rel_threshold <= 1.0) {
            return Err(Error::Config(
                "seed_rel_threshold must be in (0, 1]".into(),
            ));
        }
        self.filter.validate()?;
        if self.eval_tol <= 0.0 {
            return Err(Error::Config("eval_tol must be positive".into()));
        }
        Ok(())
    }

    /// A documented example config.
    pub fn example() -> &'static str {
        "\
# tomoseg pipeline configuration (key = value, `#` comments)

# --- inputs/outputs ------------------------------------------------------
manifest = stack.txt            # slice manifest: <relative-path> <angle>
output_dir = out                # artifact directory (created if missing)
# ground_truth = truth.csv      # optional expert annotations: slice,x,y[,r]

# --- membrane template ---------------------------------------------------
# either a CSV with one intensity per line (inside-to-outside) ...
# membrane_profile = profile.csv
# ... or rays across a membrane, sampled on slice `profile_slice` after
# contrast enhancement; repeat for each ray
# profile_ray = 120,128,140,128
profile_slice = 0

# --- biological priors ---------------------------------------------------
r_min = 9                       # smallest expected cell radius, pixels
r_max = 13                      # largest expected cell radius, pixels
l_m = 26                        # longest cell length; crop side = 2*l_m+1

# --- contrast enhancement ------------------------------------------------
clahe_tiles_x = 8
clahe_tiles_y = 8
clahe_bins = 256
clahe_alpha = 100               # clip factor, percent
clahe_smax = 4                  # maximum transfer slope

# --- seeding -------------------------------------------------------------
seed_rel_threshold = 0.5        # fraction of the strongest vote
seed_nms_radius = 9             # suppression radius, defaults to r_min
vote_direction = both           # plus | minus | both

# --- graph cut -----------------------------------------------------------
g_mode = literal                # literal: g = exp(-10^cc); linear: exp(-10*cc)
w_max = 1000000
cc_min = 0.2                    # boundary-correlation floor per cell
jaccard_min = 0.8               # overlap at which two masks are one cell

# --- consistency filter --------------------------------------------------
filter_window = 3               # 3 | 5 | 7
filter_mode = all               # all | majority
filter_center_tol = 6.5         # pixels, defaults to r_max / 2
filter_area_tol = 0.2
filter_perim_tol = 0.2
window_study = false            # also compare windows 3/5/7 in one report

# --- evaluation ----------------------------------------------------------
eval_tol = 13                   # match distance, defaults to r_max

# --- execution -----------------------------------------------------------
parallelism = 0                 # worker threads, 0 = all cores
"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_with_required_keys_parses() {
        let text = "manifest = stack.txt\noutput_dir = out\nr_min = 5\nr_max = 9\nprofile_ray = 1,2,3,4\n";
        let cfg = PipelineConfig::from_str_with_base(text, Path::new("/tmp/cfg")).unwrap();
        assert_eq!(cfg.manifest, Path::new("/tmp/cfg/stack.txt"));
        assert_eq!(cfg.l_m, 18);
        assert_eq!(cfg.seed_nms_radius, 5);
        assert_eq!(cfg.filter.center_tol, 4.5);
        assert_eq!(cfg.eval_tol, 9.0);
        assert_eq!(cfg.profile_rays, vec![((1, 2), (3, 4))]);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = "manifest = a\noutput_dir = b\nr_min = 5\nr_max = 9\nbogus = 1\n";
        let err = PipelineConfig::from_str_with_base(text, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn missing_manifest_fails_validation() {
        let text = "manifest = does-not-exist.txt\noutput_dir = out\nr_min = 5\nr_max = 9\nprofile_ray = 1,2,3,4\n";
        let cfg = PipelineConfig::from_str_with_base(text, Path::new("/tmp")).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn repeated_scalar_key_is_rejected() {
        let text = "manifest = a\nmanifest = b\noutput_dir = c\nr_min = 5\nr_max = 9\n";
        assert!(PipelineConfig::from_str_with_base(text, Path::new(".")).is_err());
    }

    #[test]
    fn example_text_round_trips_through_the_parser() {
        let dir = tempfile::tempdir().unwrap();
        let text = PipelineConfig::example().replace("# membrane_profile", "membrane_profile");
        let cfg = PipelineConfig::from_str_with_base(&text, dir.path()).unwrap();
        assert_eq!(cfg.filter.window, 3);
        assert_eq!(cfg.clahe.n_bins, 256);
        assert_eq!(cfg.w_max, 1e6);
        assert!(!cfg.window_study);
    }
}
