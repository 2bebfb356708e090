//! Synthetic multi-modal pedestrian sequences with learnable crossing labels,
//! JSONL dataset I/O, and encoding-window augmentation.
//!
//! Four modality tracks per sample, in canonical order:
//!   context (random projection of bbox+pose), bbox [cx,cy,w,h], pose
//!   (sinusoid bank), speed (ego velocity, one channel).
//! Crossing samples drift laterally, swing the pose faster, and slow the ego
//! vehicle, all scaled by an intent ramp that rises toward the event, so
//! later query steps face an easier problem than earlier ones.

use crate::autodiff::{matmul, Tensor};
use crate::error::{Error, Result};
use crate::json_io;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

pub const DATASET_FORMAT_VERSION: u32 = 1;

pub const MODALITY_ORDER: [&str; 4] = ["context", "bbox", "pose", "speed"];

// Derivation streams that must never collide with per-sample indices.
// PROJ_STREAM seeds the seed-independent context projection directly.
const LABEL_STREAM: u64 = 1 << 40;
const PROJ_STREAM: u64 = (1 << 40) + 1;
const SPLIT_STREAM: u64 = (1 << 40) + 2;

/// splitmix64 finalizer; `mix(master_seed, sample_index)` derives independent
/// per-sample seeds so generation is order-free and parallelizable.
pub fn mix(seed: u64, index: u64) -> u64 {
    fn splitmix64(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E3779B97F4A7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }
    splitmix64(seed ^ splitmix64(index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Base observation length in frames (1.5 s at 30 FPS by default).
    pub window_frames: usize,
    /// Extra leading history per sample: margin ~ Uniform{0..=max_margin}.
    pub max_margin: usize,
    /// Action onset this many frames after the last observable frame.
    pub event_offset_frames: usize,
    /// Crossing evidence ramps up linearly over this many frames before the
    /// event, so earlier predictions face genuinely weaker signal.
    pub ramp_frames: usize,
    pub balance: f64,
    pub fps: u32,
    pub context_dim: usize,
    pub pose_dim: usize,
    pub bbox_jitter: f64,
    pub pose_noise: f64,
    pub speed_noise: f64,
    pub context_noise: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            window_frames: 45,
            max_margin: 15,
            event_offset_frames: 15,
            ramp_frames: 50,
            balance: 0.5,
            fps: 30,
            context_dim: 16,
            pose_dim: 12,
            bbox_jitter: 0.1,
            pose_noise: 0.2,
            speed_noise: 0.05,
            context_noise: 0.3,
        }
    }
}

impl GeneratorConfig {
    pub fn modality_widths(&self) -> Vec<(String, usize)> {
        vec![
            ("context".to_string(), self.context_dim),
            ("bbox".to_string(), 4),
            ("pose".to_string(), self.pose_dim),
            ("speed".to_string(), 1),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub sample_id: String,
    /// 1 = crossing.
    pub label: u8,
    /// Onset frame index; at or past `t_avail` (never observable).
    pub event_frame: usize,
    pub fps: u32,
    /// Leading frames available beyond the standard window.
    pub history_margin: usize,
    /// (name, [t_avail x width]) in canonical modality order.
    pub modalities: Vec<(String, Tensor)>,
}

impl FeatureSequence {
    pub fn t_avail(&self) -> usize {
        self.modalities[0].1.rows()
    }

    /// Identity before augmentation: the id with any `+s<shift>` suffix cut.
    pub fn base_id(&self) -> &str {
        self.sample_id.split('+').next().unwrap_or(&self.sample_id)
    }

    pub fn bits_eq(&self, other: &FeatureSequence) -> bool {
        self.sample_id == other.sample_id
            && self.label == other.label
            && self.event_frame == other.event_frame
            && self.fps == other.fps
            && self.history_margin == other.history_margin
            && self.modalities.len() == other.modalities.len()
            && self
                .modalities
                .iter()
                .zip(&other.modalities)
                .all(|((na, ta), (nb, tb))| na == nb && ta.bits_eq(tb))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub n_crossing: usize,
    pub n_not_crossing: usize,
    /// (train, val, test); must be nonnegative and sum to 1.
    pub split_fractions: (f64, f64, f64),
}

fn normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("sigma checked").sample(rng)
}

/// Deterministic synthetic dataset: exact class stratification, independent
/// per-sample randomness derived from the master seed.
pub fn generate_synthetic(
    n: usize,
    seed: u64,
    config: &GeneratorConfig,
) -> Result<(Vec<FeatureSequence>, DatasetManifest)> {
    if n < 2 {
        return Err(Error::Contract(format!("need at least 2 samples, got {n}")));
    }
    if !(config.balance > 0.0 && config.balance < 1.0) {
        return Err(Error::Contract(format!(
            "class balance must lie strictly inside (0,1), got {}",
            config.balance
        )));
    }
    if config.window_frames < 2 {
        return Err(Error::Contract("window_frames must be at least 2".into()));
    }
    if config.event_offset_frames == 0 {
        return Err(Error::Contract("event_offset_frames must be positive".into()));
    }
    if config.ramp_frames <= config.event_offset_frames {
        return Err(Error::Contract(
            "ramp_frames must exceed event_offset_frames or no evidence is ever observable"
                .into(),
        ));
    }

    // Exact stratification, both classes always present.
    let n_pos = ((n as f64 * config.balance).round() as usize).clamp(1, n - 1);
    let mut labels: Vec<u8> = vec![1; n_pos];
    labels.resize(n, 0);
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, LABEL_STREAM)));

    // The projection defines the context modality's semantics, so it is the
    // same for every dataset regardless of seed: a model trained on one
    // generated set must see compatible context features in another, the way
    // a fixed pretrained backbone would provide them. Only trajectories,
    // noise, and label order vary with the seed.
    let proj_in = 4 + config.pose_dim;
    let mut proj_rng = ChaCha8Rng::seed_from_u64(PROJ_STREAM);
    let proj_scale = 1.0 / (proj_in as f64).sqrt();
    let projection = Tensor::new(
        proj_in,
        config.context_dim,
        (0..proj_in * config.context_dim)
            .map(|_| normal(&mut proj_rng, proj_scale))
            .collect(),
    )?;

    let samples = (0..n)
        .map(|i| gen_sample(i, labels[i], seed, config, &projection))
        .collect::<Result<Vec<_>>>()?;

    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        seed,
        generator: config.clone(),
        n_crossing: n_pos,
        n_not_crossing: n - n_pos,
        split_fractions: (1.0, 0.0, 0.0),
    };
    Ok((samples, manifest))
}

fn gen_sample(
    index: usize,
    label: u8,
    seed: u64,
    cfg: &GeneratorConfig,
    projection: &Tensor,
) -> Result<FeatureSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, index as u64));
    let crossing = label == 1;

    let margin = rng.gen_range(0..=cfg.max_margin);
    let t_avail = cfg.window_frames + margin;
    let event = t_avail - 1 + cfg.event_offset_frames;

    // Intent emerges on the approach to the event: 0 until ramp_frames out,
    // then rising linearly. Every crossing cue scales with this, which makes
    // earlier query steps see weaker evidence than later ones.
    let ramp = |t: usize| -> f64 {
        let lead = (event - t) as f64;
        (1.0 - lead / cfg.ramp_frames as f64).max(0.0)
    };

    // bbox: a crossing pedestrian starts drifting laterally as intent forms;
    // others keep a mild constant drift.
    let v_x = if crossing { rng.gen_range(1.0..2.0) } else { normal(&mut rng, 0.05) };
    let cx0 = rng.gen_range(-5.0..5.0);
    let cy0 = rng.gen_range(-2.0..2.0);
    let w0 = rng.gen_range(1.0..3.0);
    let h0 = rng.gen_range(2.0..5.0);
    let mut bbox = Tensor::zeros(t_avail, 4);
    let mut cx = cx0;
    for t in 0..t_avail {
        cx += if crossing { v_x * ramp(t) } else { v_x };
        // The step off the curb drops the box center half a second out, so
        // only the last few observable frames of a crossing sample show it.
        let dip = if crossing {
            let lead = (event - t) as f64;
            3.0 * (1.0 - (lead - cfg.event_offset_frames as f64) / 3.0).clamp(0.0, 1.0)
        } else {
            0.0
        };
        bbox.set(t, 0, cx + normal(&mut rng, cfg.bbox_jitter));
        bbox.set(t, 1, cy0 - dip + normal(&mut rng, cfg.bbox_jitter));
        bbox.set(t, 2, w0 + normal(&mut rng, cfg.bbox_jitter));
        bbox.set(t, 3, h0 + normal(&mut rng, cfg.bbox_jitter));
    }

    // pose: sinusoid bank whose gait quickens in proportion to intent.
    let f0 = 0.25;
    let mut phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut pose = Tensor::zeros(t_avail, cfg.pose_dim);
    for t in 0..t_avail {
        phase += if crossing { f0 * (1.0 + 0.8 * ramp(t)) } else { f0 };
        for k in 0..cfg.pose_dim {
            let offset = std::f64::consts::TAU * k as f64 / cfg.pose_dim as f64;
            pose.set(t, k, (phase + offset).sin() + normal(&mut rng, cfg.pose_noise));
        }
    }

    // speed: the ego vehicle brakes as the pedestrian commits.
    let v0 = rng.gen_range(0.8..1.2);
    let mut speed = Tensor::zeros(t_avail, 1);
    for t in 0..t_avail {
        let base = if crossing { v0 * (1.0 - 0.7 * ramp(t)) } else { v0 };
        speed.set(t, 0, base + normal(&mut rng, cfg.speed_noise));
    }

    // context: projected view of the observed bbox+pose.
    let mut joint = Tensor::zeros(t_avail, 4 + cfg.pose_dim);
    for t in 0..t_avail {
        for c in 0..4 {
            joint.set(t, c, bbox.get(t, c));
        }
        for c in 0..cfg.pose_dim {
            joint.set(t, 4 + c, pose.get(t, c));
        }
    }
    let mut context = matmul(&joint, projection)?;
    for t in 0..t_avail {
        for c in 0..cfg.context_dim {
            context.set(t, c, context.get(t, c) + normal(&mut rng, cfg.context_noise));
        }
    }

    Ok(FeatureSequence {
        sample_id: format!("s{seed}-{index:05}"),
        label,
        event_frame: event,
        fps: cfg.fps,
        history_margin: margin,
        modalities: vec![
            ("context".to_string(), context),
            ("bbox".to_string(), bbox),
            ("pose".to_string(), pose),
            ("speed".to_string(), speed),
        ],
    })
}

/// Encoding-window augmentation: the original plus up to `max_shifts` copies
/// whose window ends k·shift_step frames earlier, as far as the sample's
/// history margin allows. Labels and event_frame are untouched, so shifted
/// copies anticipate from further away.
pub fn augment(
    sample: &FeatureSequence,
    max_shifts: usize,
    shift_step: usize,
) -> Result<Vec<FeatureSequence>> {
    if shift_step == 0 {
        return Err(Error::Contract("shift_step must be at least 1".into()));
    }
    let mut out = vec![sample.clone()];
    let k_max = max_shifts.min(sample.history_margin / shift_step);
    for k in 1..=k_max {
        let shift = k * shift_step;
        let keep = sample.t_avail() - shift;
        let modalities = sample
            .modalities
            .iter()
            .map(|(name, t)| {
                let rows: Vec<Vec<f64>> = (0..keep).map(|r| t.row(r).to_vec()).collect();
                Ok((name.clone(), Tensor::from_rows(&rows)?))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(FeatureSequence {
            sample_id: format!("{}+s{shift}", sample.sample_id),
            label: sample.label,
            event_frame: sample.event_frame,
            fps: sample.fps,
            history_margin: sample.history_margin - shift,
            modalities,
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct SampleLine {
    sample_id: String,
    label: u8,
    event_frame: usize,
    fps: u32,
    modalities: BTreeMap<String, Vec<Vec<f64>>>,
}

fn canonical_rank(name: &str) -> usize {
    MODALITY_ORDER.iter().position(|&m| m == name).unwrap_or(MODALITY_ORDER.len())
}

fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".manifest.json");
    std::path::PathBuf::from(s)
}

/// JSON Lines, one sample per line, with a `<path>.manifest.json` sidecar.
pub fn save_dataset(
    path: &Path,
    samples: &[FeatureSequence],
    manifest: &DatasetManifest,
) -> Result<()> {
    for s in samples {
        if let Some((name, _)) = s.modalities.iter().find(|(_, t)| !t.is_finite()) {
            return Err(Error::Contract(format!(
                "refusing to save non-finite modality {name} in {}",
                s.sample_id
            )));
        }
    }
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    for s in samples {
        let line = SampleLine {
            sample_id: s.sample_id.clone(),
            label: s.label,
            event_frame: s.event_frame,
            fps: s.fps,
            modalities: s
                .modalities
                .iter()
                .map(|(n, t)| {
                    (n.clone(), (0..t.rows()).map(|r| t.row(r).to_vec()).collect::<Vec<_>>())
                })
                .collect(),
        };
        let text = json_io::to_string_precise(&line)?;
        writeln!(file, "{text}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    json_io::write_json_file(&manifest_path(path), manifest)
}

pub fn load_dataset(path: &Path) -> Result<(Vec<FeatureSequence>, DatasetManifest)> {
    let manifest: DatasetManifest = json_io::read_json_file(&manifest_path(path))?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Version {
            path: manifest_path(path).display().to_string(),
            found: manifest.format_version,
            expected: DATASET_FORMAT_VERSION,
        });
    }

    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = std::io::BufReader::new(file);
    let path_str = path.display().to_string();
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path_str.clone(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SampleLine = json_io::from_str_at(&line, &path_str, lineno + 1)?;
        if parsed.label > 1 {
            return Err(Error::Parse {
                path: path_str.clone(),
                detail: format!("line {}: label must be 0 or 1, got {}", lineno + 1, parsed.label),
            });
        }
        let mut mods: Vec<(String, Tensor)> = Vec::with_capacity(parsed.modalities.len());
        for (name, rows) in parsed.modalities {
            let t = Tensor::from_rows(&rows).map_err(|e| Error::Parse {
                path: path_str.clone(),
                detail: format!("line {}: modality {name}: {e}", lineno + 1),
            })?;
            mods.push((name, t));
        }
        mods.sort_by(|(a, _), (b, _)| canonical_rank(a).cmp(&canonical_rank(b)).then(a.cmp(b)));
        if mods.is_empty() {
            return Err(Error::Parse {
                path: path_str.clone(),
                detail: format!("line {}: sample has no modalities", lineno + 1),
            });
        }
        let t_avail = mods[0].1.rows();
        if mods.iter().any(|(_, t)| t.rows() != t_avail) {
            return Err(Error::Parse {
                path: path_str.clone(),
                detail: format!("line {}: modality tracks disagree on length", lineno + 1),
            });
        }
        if parsed.event_frame < t_avail {
            return Err(Error::Parse {
                path: path_str.clone(),
                detail: format!(
                    "line {}: event_frame {} inside the observed range {t_avail}",
                    lineno + 1,
                    parsed.event_frame
                ),
            });
        }
        samples.push(FeatureSequence {
            sample_id: parsed.sample_id,
            label: parsed.label,
            event_frame: parsed.event_frame,
            fps: parsed.fps,
            history_margin: t_avail.saturating_sub(manifest.generator.window_frames),
            modalities: mods,
        });
    }
    Ok((samples, manifest))
}

/// Stratified split keyed on base sample ids. Must run before augmentation;
/// training then augments only its own split, so no derived copy of a test
/// sample can leak into the train set.
pub fn split_dataset(
    samples: &[FeatureSequence],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<FeatureSequence>, Vec<FeatureSequence>, Vec<FeatureSequence>)> {
    let (ft, fv, fe) = fractions;
    if ft < 0.0 || fv < 0.0 || fe < 0.0 || (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!(
            "split fractions must be nonnegative and sum to 1, got {fractions:?}"
        )));
    }
    if samples.iter().any(|s| s.sample_id != s.base_id()) {
        return Err(Error::Contract(
            "split must run on unaugmented samples (found a shifted copy)".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, SPLIT_STREAM));
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for class in [1u8, 0u8] {
        let mut idx: Vec<usize> =
            (0..samples.len()).filter(|&i| samples[i].label == class).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let counts = largest_remainder(n, &[ft, fv, fe]);
        let mut cursor = 0;
        for (slot, &count) in counts.iter().enumerate() {
            for &i in &idx[cursor..cursor + count] {
                match slot {
                    0 => train.push(samples[i].clone()),
                    1 => val.push(samples[i].clone()),
                    _ => test.push(samples[i].clone()),
                }
            }
            cursor += count;
        }
    }
    Ok((train, val, test))
}

/// Integer allocation of n items to fractions: floor first, then leftovers to
/// the largest remainders (earlier slot wins ties). Sums to n exactly.
fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|&r| r.floor() as usize).collect();
    let mut leftover = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &slot in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        counts[slot] += 1;
        leftover -= 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = GeneratorConfig::default();
        let (a, ma) = generate_synthetic(10, 7, &cfg).unwrap();
        let (b, mb) = generate_synthetic(10, 7, &cfg).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert!(x.bits_eq(y));
        }
    }

    #[test]
    fn balance_is_exactly_stratified() {
        let cfg = GeneratorConfig::default();
        let (samples, manifest) = generate_synthetic(100, 3, &cfg).unwrap();
        let pos = samples.iter().filter(|s| s.label == 1).count();
        assert_eq!(pos, 50);
        assert_eq!(manifest.n_crossing, 50);
        assert_eq!(manifest.n_not_crossing, 50);
    }

    #[test]
    fn degenerate_requests_are_contract_errors() {
        let cfg = GeneratorConfig::default();
        assert_eq!(generate_synthetic(1, 0, &cfg).unwrap_err().exit_code(), 2);
        let bad = GeneratorConfig { balance: 1.0, ..GeneratorConfig::default() };
        assert_eq!(generate_synthetic(10, 0, &bad).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn late_window_drift_separates_classes() {
        // Oracle: net lateral displacement over the last 12 frames, where
        // the intent ramp is strongest, must support a 0.9-accurate
        // threshold classifier. Early frames are deliberately much weaker.
        let cfg = GeneratorConfig::default();
        let (samples, _) = generate_synthetic(200, 11, &cfg).unwrap();
        let mut correct = 0;
        for s in &samples {
            let bbox = &s.modalities.iter().find(|(n, _)| n == "bbox").unwrap().1;
            let t = bbox.rows();
            let net = (bbox.get(t - 1, 0) - bbox.get(t - 13, 0)).abs() / 12.0;
            if u8::from(net > 0.15) == s.label {
                correct += 1;
            }
        }
        let acc = correct as f64 / samples.len() as f64;
        assert!(acc >= 0.9, "separability oracle reached only {acc}");
    }

    #[test]
    fn event_frame_is_never_observable() {
        let cfg = GeneratorConfig::default();
        let (samples, _) = generate_synthetic(20, 5, &cfg).unwrap();
        for s in &samples {
            assert!(s.event_frame >= s.t_avail());
            assert_eq!(s.event_frame, s.t_avail() - 1 + cfg.event_offset_frames);
        }
    }

    fn margin_sample(margin: usize) -> FeatureSequence {
        let t = 10 + margin;
        FeatureSequence {
            sample_id: "s0-00000".into(),
            label: 1,
            event_frame: t - 1 + 15,
            fps: 30,
            history_margin: margin,
            modalities: vec![(
                "speed".into(),
                Tensor::new(t, 1, (0..t).map(|i| i as f64).collect()).unwrap(),
            )],
        }
    }

    #[test]
    fn zero_margin_yields_only_the_original() {
        let s = margin_sample(0);
        let out = augment(&s, 5, 3).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].bits_eq(&s));
    }

    #[test]
    fn margin_six_step_three_yields_three_samples() {
        let s = margin_sample(6);
        let out = augment(&s, 5, 3).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[1].sample_id, "s0-00000+s3");
        assert_eq!(out[2].sample_id, "s0-00000+s6");
        for (k, a) in out.iter().enumerate() {
            assert_eq!(a.t_avail(), s.t_avail() - 3 * k);
            assert_eq!(a.event_frame, s.event_frame);
            assert_eq!(a.label, s.label);
            assert!(a.t_avail() <= a.event_frame);
            assert_eq!(a.base_id(), "s0-00000");
        }
    }

    #[test]
    fn shift_cap_and_step_contract() {
        let s = margin_sample(20);
        assert_eq!(augment(&s, 2, 3).unwrap().len(), 3); // capped by max_shifts
        assert_eq!(augment(&s, 0, 3).unwrap().len(), 1);
        assert_eq!(augment(&s, 2, 0).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn dataset_round_trip_is_bit_identical() {
        let cfg = GeneratorConfig::default();
        let (samples, manifest) = generate_synthetic(10, 7, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&path, &samples, &manifest).unwrap();
        let (back, m2) = load_dataset(&path).unwrap();
        assert_eq!(manifest, m2);
        assert_eq!(m2.seed, 7);
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back) {
            assert!(a.bits_eq(b), "mismatch in {}", a.sample_id);
        }
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let cfg = GeneratorConfig::default();
        let (samples, manifest) = generate_synthetic(3, 1, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&path, &samples, &manifest).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("line"), "no line number in: {err}");
    }

    #[test]
    fn non_finite_samples_are_not_saved() {
        let cfg = GeneratorConfig::default();
        let (mut samples, manifest) = generate_synthetic(2, 1, &cfg).unwrap();
        samples[0].modalities[1].1.set(0, 0, f64::NAN);
        let dir = tempfile::tempdir().unwrap();
        let err = save_dataset(&dir.path().join("d.jsonl"), &samples, &manifest).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn manifest_version_is_checked() {
        let cfg = GeneratorConfig::default();
        let (samples, mut manifest) = generate_synthetic(2, 1, &cfg).unwrap();
        manifest.format_version = 99;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&path, &samples, &manifest).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("99"));
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let cfg = GeneratorConfig::default();
        let (samples, _) = generate_synthetic(40, 9, &cfg).unwrap();
        let (train, val, test) = split_dataset(&samples, (0.5, 0.0, 0.5), 9).unwrap();
        assert_eq!(train.len(), 20);
        assert!(val.is_empty());
        assert_eq!(test.len(), 20);
        assert_eq!(train.iter().filter(|s| s.label == 1).count(), 10);
        assert_eq!(test.iter().filter(|s| s.label == 1).count(), 10);
        let train_ids: std::collections::HashSet<_> =
            train.iter().map(|s| s.sample_id.clone()).collect();
        assert!(test.iter().all(|s| !train_ids.contains(&s.sample_id)));
    }

    #[test]
    fn split_rejects_augmented_input() {
        let s = margin_sample(6);
        let augmented = augment(&s, 5, 3).unwrap();
        let err = split_dataset(&augmented, (0.5, 0.0, 0.5), 1).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn mix_separates_streams() {
        assert_ne!(mix(7, 0), mix(7, 1));
        assert_ne!(mix(7, 0), mix(8, 0));
        assert_eq!(mix(7, 3), mix(7, 3));
    }
}
