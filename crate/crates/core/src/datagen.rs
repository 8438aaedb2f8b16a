//! Synthetic audio-visual speech corpus.
//!
//! Each item mixes M distinct "speakers": harmonic stacks with disjoint
//! per-speaker pitch ranges, amplitude-modulated by piecewise-smooth
//! envelopes, plus optional lowpassed noise. The video track renders one
//! frame stream per speaker whose mouth opening tracks that speaker's
//! envelope — the visual cue carries exactly the information a separator
//! needs to bind a face to a voice.
//!
//! Reproducibility contract: every draw comes from one ChaCha stream per
//! item, keyed by `spec.seed` and the item index, so corpora regenerate
//! bit-identically. Sources are rounded to f32 first and the mixture is
//! their strict left-to-right f32 sum (noise last); the stored mixture
//! therefore equals the sum of the stored stems bit for bit.

use crate::error::{Error, Result};
use crate::io::avfr::{read_avfr, write_avfr, FrameStream};
use crate::io::kv;
use crate::io::wav::{read_wav, write_wav, SampleFormat, WavSpec};
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;
use crate::objectives::TrainItem;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::{Path, PathBuf};

/// Identities available to draw from; each owns one pitch band.
pub const SPEAKER_POOL: usize = 8;

const F0_BASE: f64 = 80.0;
const F0_STEP: f64 = 1.18;
/// Envelope knots land every this many seconds.
const KNOT_SPACING: f64 = 0.3;
const ENV_LO: f64 = 0.05;
const ENV_HI: f64 = 1.0;
/// Mean-square level of the first (reference) speaker.
const ANCHOR_POWER: f64 = 0.01;
const MAX_HARMONICS: usize = 12;
const NOISE_MA_HALF: usize = 4;

/// Pitch band `[lo, hi)` of one pool identity: geometric steps so bands
/// never overlap.
pub fn f0_range(speaker_id: usize) -> (f64, f64) {
    let lo = F0_BASE * F0_STEP.powi(speaker_id as i32);
    (lo, lo * F0_STEP)
}

#[derive(Clone, Debug)]
pub struct MixSpec {
    pub speakers: usize,
    /// Seconds of audio per item.
    pub duration: f64,
    pub sample_rate: u32,
    pub fps: f64,
    pub frame_size: usize,
    /// Power of speakers 2..M relative to speaker 1, dB (uniform draw).
    pub gain_range_db: (f64, f64),
    /// Mixture SNR against the summed sources, dB; `None` for clean items.
    pub noise_snr_db: Option<(f64, f64)>,
    pub seed: u64,
}

impl Default for MixSpec {
    fn default() -> Self {
        MixSpec {
            speakers: 2,
            duration: 2.0,
            sample_rate: 8000,
            fps: 25.0,
            frame_size: 64,
            gain_range_db: (-5.0, 5.0),
            noise_snr_db: Some((-6.0, 3.0)),
            seed: 0,
        }
    }
}

impl MixSpec {
    pub fn validate(&self) -> Result<()> {
        if self.speakers == 0 || self.speakers > SPEAKER_POOL {
            return Err(Error::InvalidArgument(format!(
                "speakers must be in 1..={SPEAKER_POOL}, got {}",
                self.speakers
            )));
        }
        if !(self.duration > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        let top = f0_range(SPEAKER_POOL - 1).1;
        if 0.45 * self.sample_rate as f64 <= top {
            return Err(Error::InvalidArgument(format!(
                "sample rate {} cannot carry the {top:.0} Hz top of the pitch pool; \
                 need at least {:.0}",
                self.sample_rate,
                top / 0.45
            )));
        }
        if !(self.fps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "fps must be positive, got {}",
                self.fps
            )));
        }
        if self.frame_size < 16 {
            return Err(Error::InvalidArgument(format!(
                "frame size must be at least 16, got {}",
                self.frame_size
            )));
        }
        if self.gain_range_db.0 > self.gain_range_db.1 {
            return Err(Error::InvalidArgument(format!(
                "gain range is inverted: {:?}",
                self.gain_range_db
            )));
        }
        if let Some((lo, hi)) = self.noise_snr_db {
            if lo > hi {
                return Err(Error::InvalidArgument(format!(
                    "noise snr range is inverted: ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        (self.duration * self.sample_rate as f64).round() as usize
    }

    pub fn frames(&self) -> usize {
        (self.samples() as f64 / self.sample_rate as f64 * self.fps).round() as usize
    }
}

/// Draws behind one item, recorded for inspection and tests.
#[derive(Clone, Debug)]
pub struct ItemMeta {
    pub speaker_ids: Vec<usize>,
    pub f0: Vec<f64>,
    /// Relative power per speaker, dB; the first entry is always 0.
    pub gain_db: Vec<f64>,
    pub noise_snr_db: Option<f64>,
}

pub struct GeneratedItem {
    pub mixture: Vec<f32>,
    pub sources: Vec<Vec<f32>>,
    pub noise: Option<Vec<f32>>,
    pub videos: Vec<FrameStream>,
    pub meta: ItemMeta,
}

impl GeneratedItem {
    /// Package for the trainer (mixture, references, frame streams).
    pub fn train_item<T: Scalar>(&self) -> TrainItem<T> {
        TrainItem {
            mixture: vec32_to_tensor(&self.mixture),
            references: self.sources.iter().map(|s| vec32_to_tensor(s)).collect(),
            frames: self.videos.clone(),
        }
    }
}

fn vec32_to_tensor<T: Scalar>(v: &[f32]) -> Tensor<T> {
    Tensor::from_vec(vec![v.len()], v.iter().map(|&x| T::from_f32(x)).collect()).unwrap()
}

fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index + 1))
}

/// Raised-cosine interpolation through knots spaced `KNOT_SPACING` apart.
fn envelope_at(knots: &[f64], t: f64) -> f64 {
    let pos = t / KNOT_SPACING;
    let idx = pos.floor() as usize;
    if idx + 1 >= knots.len() {
        return *knots.last().unwrap();
    }
    let u = pos - idx as f64;
    let (a, b) = (knots[idx], knots[idx + 1]);
    a + (b - a) * (1.0 - (std::f64::consts::PI * u).cos()) * 0.5
}

fn render_frame(size: usize, openness: f64, buf: &mut Vec<u8>) {
    const BG: u8 = 30;
    const EYE: u8 = 200;
    const MOUTH: u8 = 220;
    let start = buf.len();
    buf.resize(start + size * size, BG);
    let frame = &mut buf[start..];
    let eye = size / 8;
    for (er, ec) in [(size / 4, size / 4), (size / 4, 3 * size / 4 - eye)] {
        for r in er..er + eye {
            frame[r * size + ec..r * size + ec + eye].fill(EYE);
        }
    }
    let h_max = size / 2;
    let h = 2 + (openness * (h_max - 2) as f64).round() as usize;
    let r0 = 5 * size / 8;
    let top = r0 - h / 2;
    for r in top..top + h {
        frame[r * size + size / 4..r * size + 3 * size / 4].fill(MOUTH);
    }
}

/// Generate item `index` of a corpus. Deterministic in `(spec, index)`.
pub fn generate_item(spec: &MixSpec, index: u64) -> Result<GeneratedItem> {
    spec.validate()?;
    let mut rng = item_rng(spec.seed, index);
    let m = spec.speakers;
    let t = spec.samples();
    let frames = spec.frames();
    let sr = spec.sample_rate as f64;
    let n_knots = (spec.duration / KNOT_SPACING).ceil() as usize + 1;

    let ids: Vec<usize> = sample_indices(&mut rng, SPEAKER_POOL, m).into_vec();

    let mut sources = Vec::with_capacity(m);
    let mut envelopes = Vec::with_capacity(m);
    let mut f0s = Vec::with_capacity(m);
    let mut gains = Vec::with_capacity(m);
    for (s, &id) in ids.iter().enumerate() {
        let (lo, hi) = f0_range(id);
        let f0 = rng.gen_range(lo..hi);
        let gain_db = if s == 0 {
            0.0
        } else {
            rng.gen_range(spec.gain_range_db.0..=spec.gain_range_db.1)
        };
        let harmonics = ((0.45 * sr / f0) as usize).clamp(1, MAX_HARMONICS);
        let phases: Vec<f64> = (0..harmonics)
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();
        let knots: Vec<f64> = (0..n_knots).map(|_| rng.gen_range(ENV_LO..=ENV_HI)).collect();

        let mut raw = Vec::with_capacity(t);
        let mut power = 0.0f64;
        for i in 0..t {
            let tt = i as f64 / sr;
            let mut v = 0.0;
            for (h, &phase) in phases.iter().enumerate() {
                let k = (h + 1) as f64;
                v += (std::f64::consts::TAU * k * f0 * tt + phase).sin() / k;
            }
            v *= envelope_at(&knots, tt);
            power += v * v;
            raw.push(v);
        }
        power /= t as f64;
        let target = ANCHOR_POWER * 10f64.powf(gain_db / 10.0);
        let scale = (target / power).sqrt();
        sources.push(raw.iter().map(|&v| (v * scale) as f32).collect::<Vec<f32>>());
        envelopes.push(knots);
        f0s.push(f0);
        gains.push(gain_db);
    }

    let noise_snr = spec
        .noise_snr_db
        .map(|(lo, hi)| rng.gen_range(lo..=hi));
    let noise: Option<Vec<f32>> = noise_snr.map(|snr| {
        let white: Vec<f64> = (0..t).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut smooth = Vec::with_capacity(t);
        for i in 0..t {
            let a = i.saturating_sub(NOISE_MA_HALF);
            let b = (i + NOISE_MA_HALF + 1).min(t);
            smooth.push(white[a..b].iter().sum::<f64>() / (b - a) as f64);
        }
        let mut p_sources = 0.0f64;
        for i in 0..t {
            let s: f64 = sources.iter().map(|src| src[i] as f64).sum();
            p_sources += s * s;
        }
        p_sources /= t as f64;
        let p_noise = smooth.iter().map(|&v| v * v).sum::<f64>() / t as f64;
        let scale = (p_sources * 10f64.powf(-snr / 10.0) / p_noise).sqrt();
        smooth.iter().map(|&v| (v * scale) as f32).collect()
    });

    // strict left-to-right f32 sum: sources in order, then noise
    let mut mixture = vec![0.0f32; t];
    for src in &sources {
        for (mv, &sv) in mixture.iter_mut().zip(src) {
            *mv += sv;
        }
    }
    if let Some(nz) = &noise {
        for (mv, &nv) in mixture.iter_mut().zip(nz) {
            *mv += nv;
        }
    }

    let mut videos = Vec::with_capacity(m);
    for knots in &envelopes {
        let mut pixels = Vec::with_capacity(frames * spec.frame_size * spec.frame_size);
        for f in 0..frames {
            let tc = ((f as f64 + 0.5) / spec.fps).min(spec.duration);
            let e = envelope_at(knots, tc);
            let openness = (e - ENV_LO) / (ENV_HI - ENV_LO);
            render_frame(spec.frame_size, openness, &mut pixels);
        }
        videos.push(FrameStream::new(spec.frame_size, spec.frame_size, pixels)?);
    }

    Ok(GeneratedItem {
        mixture,
        sources,
        noise,
        videos,
        meta: ItemMeta {
            speaker_ids: ids,
            f0: f0s,
            gain_db: gains,
            noise_snr_db: noise_snr,
        },
    })
}

/// Per-frame mean pixel intensity — the visual activity trace.
pub fn frame_brightness(stream: &FrameStream) -> Vec<f64> {
    (0..stream.count())
        .map(|f| {
            let bytes = stream.frame_bytes(f);
            bytes.iter().map(|&b| b as f64).sum::<f64>() / bytes.len() as f64
        })
        .collect()
}

/// Per-frame RMS of a waveform, windows aligned with video frames.
pub fn frame_rms(samples: &[f32], sample_rate: u32, fps: f64, frames: usize) -> Vec<f64> {
    (0..frames)
        .map(|f| {
            let a = ((f as f64 / fps) * sample_rate as f64).floor() as usize;
            let b = ((((f + 1) as f64 / fps) * sample_rate as f64).floor() as usize)
                .min(samples.len())
                .max(a + 1);
            let p = samples[a..b].iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
            (p / (b - a) as f64).sqrt()
        })
        .collect()
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let (ma, mb) = (
        a.iter().sum::<f64>() / n,
        b.iter().sum::<f64>() / n,
    );
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

// ---- on-disk corpus ----

/// Relative paths of one item's files inside a corpus directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub mixture: String,
    pub sources: Vec<String>,
    pub noise: Option<String>,
    pub videos: Vec<String>,
}

pub struct Corpus {
    pub spec: MixSpec,
    pub rows: Vec<ManifestRow>,
}

pub struct LoadedItem {
    pub mixture: Vec<f32>,
    pub sources: Vec<Vec<f32>>,
    pub noise: Option<Vec<f32>>,
    pub videos: Vec<FrameStream>,
}

impl LoadedItem {
    pub fn train_item<T: Scalar>(&self) -> TrainItem<T> {
        TrainItem {
            mixture: vec32_to_tensor(&self.mixture),
            references: self.sources.iter().map(|s| vec32_to_tensor(s)).collect(),
            frames: self.videos.clone(),
        }
    }
}

fn spec_pairs(spec: &MixSpec, items: usize) -> Vec<(&'static str, String)> {
    let mut pairs = vec![
        ("speakers", spec.speakers.to_string()),
        ("duration", spec.duration.to_string()),
        ("sample_rate", spec.sample_rate.to_string()),
        ("fps", spec.fps.to_string()),
        ("frame_size", spec.frame_size.to_string()),
        ("gain_lo_db", spec.gain_range_db.0.to_string()),
        ("gain_hi_db", spec.gain_range_db.1.to_string()),
    ];
    if let Some((lo, hi)) = spec.noise_snr_db {
        pairs.push(("noise_snr_lo_db", lo.to_string()));
        pairs.push(("noise_snr_hi_db", hi.to_string()));
    }
    pairs.push(("seed", spec.seed.to_string()));
    pairs.push(("items", items.to_string()));
    pairs
}

fn parse_spec(text: &str, path: &Path) -> Result<(MixSpec, usize)> {
    let mut spec = MixSpec::default();
    let mut noise = (None, None);
    let mut items = None;
    for e in kv::parse(text, path)? {
        match e.key.as_str() {
            "speakers" => spec.speakers = kv::parse_usize(&e, path)?,
            "duration" => spec.duration = kv::parse_f64(&e, path)?,
            "sample_rate" => spec.sample_rate = kv::parse_u32(&e, path)?,
            "fps" => spec.fps = kv::parse_f64(&e, path)?,
            "frame_size" => spec.frame_size = kv::parse_usize(&e, path)?,
            "gain_lo_db" => spec.gain_range_db.0 = kv::parse_f64(&e, path)?,
            "gain_hi_db" => spec.gain_range_db.1 = kv::parse_f64(&e, path)?,
            "noise_snr_lo_db" => noise.0 = Some(kv::parse_f64(&e, path)?),
            "noise_snr_hi_db" => noise.1 = Some(kv::parse_f64(&e, path)?),
            "seed" => spec.seed = kv::parse_u64(&e, path)?,
            "items" => items = Some(kv::parse_usize(&e, path)?),
            _ => return Err(kv::unknown_key(&e, path)),
        }
    }
    spec.noise_snr_db = match noise {
        (Some(lo), Some(hi)) => Some((lo, hi)),
        (None, None) => None,
        _ => {
            return Err(Error::ConfigFile {
                path: path.to_path_buf(),
                line: 0,
                detail: "noise snr bounds must both be present or both absent".into(),
            })
        }
    };
    let items = items.ok_or_else(|| Error::ConfigFile {
        path: path.to_path_buf(),
        line: 0,
        detail: "missing key: items".into(),
    })?;
    Ok((spec, items))
}

fn manifest_line(row: &ManifestRow) -> String {
    let mut cols = vec![row.mixture.clone()];
    cols.extend(row.sources.iter().cloned());
    cols.push(row.noise.clone().unwrap_or_else(|| "-".into()));
    cols.extend(row.videos.iter().cloned());
    cols.join("\t")
}

fn parse_manifest_line(line: &str, speakers: usize, lineno: usize, path: &Path) -> Result<ManifestRow> {
    let cols: Vec<&str> = line.split('\t').collect();
    let want = 1 + speakers + 1 + speakers;
    if cols.len() != want {
        return Err(Error::ConfigFile {
            path: path.to_path_buf(),
            line: lineno,
            detail: format!("expected {want} tab-separated columns, found {}", cols.len()),
        });
    }
    Ok(ManifestRow {
        mixture: cols[0].to_string(),
        sources: cols[1..1 + speakers].iter().map(|s| s.to_string()).collect(),
        noise: match cols[1 + speakers] {
            "-" => None,
            p => Some(p.to_string()),
        },
        videos: cols[2 + speakers..].iter().map(|s| s.to_string()).collect(),
    })
}

/// Generate `count` items under `root`: `dataset.cfg`, `manifest.tsv`, and
/// one directory per item (stems and mixture as Float32 WAV, frame streams,
/// and a `meta.cfg` of the draws). Items generate in parallel.
pub fn write_corpus(root: &Path, spec: &MixSpec, count: usize) -> Result<Vec<ManifestRow>> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::InvalidArgument("corpus needs at least one item".into()));
    }
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    std::fs::write(
        root.join("dataset.cfg"),
        kv::emit(&spec_pairs(spec, count)),
    )
    .map_err(|e| Error::io(&root.join("dataset.cfg"), e))?;

    let rows: Vec<ManifestRow> = (0..count as u64)
        .into_par_iter()
        .map(|i| write_item(root, spec, i))
        .collect::<Result<_>>()?;

    let mut manifest = String::new();
    for row in &rows {
        manifest.push_str(&manifest_line(row));
        manifest.push('\n');
    }
    std::fs::write(root.join("manifest.tsv"), manifest)
        .map_err(|e| Error::io(&root.join("manifest.tsv"), e))?;
    Ok(rows)
}

fn write_item(root: &Path, spec: &MixSpec, index: u64) -> Result<ManifestRow> {
    let item = generate_item(spec, index)?;
    let dir_name = format!("item_{index:05}");
    let dir = root.join(&dir_name);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let wav = |path: &Path, data: &[f32]| -> Result<()> {
        write_wav(
            path,
            &Tensor::from_vec(vec![data.len()], data.to_vec())?,
            spec.sample_rate,
            SampleFormat::Float32,
        )
    };

    let rel = |name: &str| format!("{dir_name}/{name}");
    wav(&dir.join("mixture.wav"), &item.mixture)?;
    let mut sources = Vec::new();
    for (s, src) in item.sources.iter().enumerate() {
        let name = format!("s{}.wav", s + 1);
        wav(&dir.join(&name), src)?;
        sources.push(rel(&name));
    }
    let noise = match &item.noise {
        Some(nz) => {
            wav(&dir.join("noise.wav"), nz)?;
            Some(rel("noise.wav"))
        }
        None => None,
    };
    let mut videos = Vec::new();
    for (s, v) in item.videos.iter().enumerate() {
        let name = format!("v{}.avfr", s + 1);
        write_avfr(&dir.join(&name), v)?;
        videos.push(rel(&name));
    }

    let join = |xs: &[String]| xs.join(",");
    let mut meta = vec![
        (
            "speaker_ids",
            kv::emit_index_list(&item.meta.speaker_ids),
        ),
        (
            "f0",
            join(&item.meta.f0.iter().map(|v| v.to_string()).collect::<Vec<_>>()),
        ),
        (
            "gain_db",
            join(&item.meta.gain_db.iter().map(|v| v.to_string()).collect::<Vec<_>>()),
        ),
    ];
    if let Some(snr) = item.meta.noise_snr_db {
        meta.push(("noise_snr_db", snr.to_string()));
    }
    std::fs::write(dir.join("meta.cfg"), kv::emit(&meta))
        .map_err(|e| Error::io(&dir.join("meta.cfg"), e))?;

    Ok(ManifestRow {
        mixture: rel("mixture.wav"),
        sources,
        noise,
        videos,
    })
}

/// Read `dataset.cfg` and `manifest.tsv` from a corpus directory.
pub fn open_corpus(root: &Path) -> Result<Corpus> {
    let cfg_path = root.join("dataset.cfg");
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let (spec, items) = parse_spec(&text, &cfg_path)?;
    spec.validate()?;

    let man_path = root.join("manifest.tsv");
    let text = std::fs::read_to_string(&man_path).map_err(|e| Error::io(&man_path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        rows.push(parse_manifest_line(line, spec.speakers, i + 1, &man_path)?);
    }
    if rows.len() != items {
        return Err(Error::ConfigFile {
            path: man_path.clone(),
            line: 0,
            detail: format!("dataset.cfg declares {items} items, manifest lists {}", rows.len()),
        });
    }
    Ok(Corpus { spec, rows })
}

/// Load one item's files, validating sample rates and lengths against the
/// corpus spec.
pub fn load_item(root: &Path, spec: &MixSpec, row: &ManifestRow) -> Result<LoadedItem> {
    let read = |rel: &str| -> Result<Vec<f32>> {
        let path: PathBuf = root.join(rel);
        let (tensor, ws): (Tensor<f32>, WavSpec) = read_wav(&path)?;
        if ws.sample_rate != spec.sample_rate {
            return Err(Error::InvalidArgument(format!(
                "{rel}: sample rate {} does not match the corpus rate {}",
                ws.sample_rate, spec.sample_rate
            )));
        }
        Ok(tensor.into_vec())
    };
    let mixture = read(&row.mixture)?;
    let sources = row.sources.iter().map(|p| read(p)).collect::<Result<Vec<_>>>()?;
    let noise = row.noise.as_deref().map(read).transpose()?;
    for (i, s) in sources.iter().enumerate() {
        if s.len() != mixture.len() {
            return Err(Error::InvalidArgument(format!(
                "{}: length {} does not match the mixture's {}",
                row.sources[i],
                s.len(),
                mixture.len()
            )));
        }
    }
    let videos = row
        .videos
        .iter()
        .map(|p| read_avfr(&root.join(p)))
        .collect::<Result<Vec<_>>>()?;
    for (i, v) in videos.iter().enumerate() {
        if v.height != spec.frame_size || v.width != spec.frame_size {
            return Err(Error::InvalidArgument(format!(
                "{}: {}x{} frames, corpus declares {}",
                row.videos[i], v.height, v.width, spec.frame_size
            )));
        }
    }
    Ok(LoadedItem {
        mixture,
        sources,
        noise,
        videos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro_spec() -> MixSpec {
        MixSpec {
            speakers: 2,
            duration: 1.5,
            sample_rate: 800,
            fps: 25.0,
            frame_size: 16,
            gain_range_db: (-2.0, 2.0),
            noise_snr_db: Some((18.0, 24.0)),
            seed: 42,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = micro_spec();
        let a = generate_item(&spec, 3).unwrap();
        let b = generate_item(&spec, 3).unwrap();
        assert_eq!(a.mixture, b.mixture);
        assert_eq!(a.sources, b.sources);
        assert_eq!(a.noise, b.noise);
        for (va, vb) in a.videos.iter().zip(&b.videos) {
            assert_eq!(va.frame_bytes(0), vb.frame_bytes(0));
        }
        let c = generate_item(&spec, 4).unwrap();
        assert_ne!(a.mixture, c.mixture);
    }

    #[test]
    fn speakers_are_distinct_pool_members() {
        let spec = MixSpec {
            speakers: 4,
            ..micro_spec()
        };
        for index in 0..20 {
            let item = generate_item(&spec, index).unwrap();
            let ids = &item.meta.speaker_ids;
            assert_eq!(ids.len(), 4);
            for (i, &a) in ids.iter().enumerate() {
                assert!(a < SPEAKER_POOL);
                assert!(ids[i + 1..].iter().all(|&b| b != a), "dup in {ids:?}");
            }
            // pitch actually lands in the claimed band
            for (s, &id) in ids.iter().enumerate() {
                let (lo, hi) = f0_range(id);
                assert!(item.meta.f0[s] >= lo && item.meta.f0[s] < hi);
            }
        }
    }

    #[test]
    fn mixture_is_the_exact_running_sum() {
        let item = generate_item(&micro_spec(), 0).unwrap();
        let t = item.mixture.len();
        for i in 0..t {
            let mut acc = 0.0f32;
            for src in &item.sources {
                acc += src[i];
            }
            acc += item.noise.as_ref().unwrap()[i];
            assert_eq!(acc.to_bits(), item.mixture[i].to_bits(), "sample {i}");
        }
    }

    #[test]
    fn mouth_tracks_the_source_envelope() {
        let spec = micro_spec();
        let item = generate_item(&spec, 7).unwrap();
        for (s, video) in item.videos.iter().enumerate() {
            let bright = frame_brightness(video);
            let rms = frame_rms(
                &item.sources[s],
                spec.sample_rate,
                spec.fps,
                video.count(),
            );
            let corr = pearson(&bright, &rms);
            assert!(corr > 0.9, "speaker {s}: correlation {corr}");
        }
    }

    #[test]
    fn gains_and_noise_land_where_drawn() {
        let spec = micro_spec();
        let item = generate_item(&spec, 11).unwrap();
        let power = |xs: &[f32]| {
            xs.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / xs.len() as f64
        };
        let p1 = power(&item.sources[0]);
        let p2 = power(&item.sources[1]);
        let measured = 10.0 * (p2 / p1).log10();
        assert!(
            (measured - item.meta.gain_db[1]).abs() < 0.05,
            "gain {measured} vs drawn {}",
            item.meta.gain_db[1]
        );
        assert!((10.0 * (p1 / ANCHOR_POWER).log10()).abs() < 0.05);

        let mut sum = vec![0.0f64; item.mixture.len()];
        for src in &item.sources {
            for (a, &v) in sum.iter_mut().zip(src) {
                *a += v as f64;
            }
        }
        let p_sources = sum.iter().map(|&v| v * v).sum::<f64>() / sum.len() as f64;
        let p_noise = power(item.noise.as_ref().unwrap());
        let snr = 10.0 * (p_sources / p_noise).log10();
        assert!(
            (snr - item.meta.noise_snr_db.unwrap()).abs() < 0.05,
            "snr {snr} vs drawn {:?}",
            item.meta.noise_snr_db
        );
    }

    #[test]
    fn clean_spec_omits_the_noise_stem() {
        let spec = MixSpec {
            noise_snr_db: None,
            ..micro_spec()
        };
        let item = generate_item(&spec, 0).unwrap();
        assert!(item.noise.is_none());
        assert!(item.meta.noise_snr_db.is_none());
    }

    #[test]
    fn corpus_round_trips_through_disk() {
        let root = std::env::temp_dir().join(format!("avcorpus_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&root);
        let spec = micro_spec();
        let rows = write_corpus(&root, &spec, 3).unwrap();
        assert_eq!(rows.len(), 3);

        let corpus = open_corpus(&root).unwrap();
        assert_eq!(corpus.rows, rows);
        assert_eq!(corpus.spec.speakers, spec.speakers);
        assert_eq!(corpus.spec.seed, spec.seed);
        assert_eq!(corpus.spec.noise_snr_db, spec.noise_snr_db);

        let loaded = load_item(&root, &corpus.spec, &corpus.rows[1]).unwrap();
        let fresh = generate_item(&spec, 1).unwrap();
        assert_eq!(loaded.mixture, fresh.mixture);
        assert_eq!(loaded.sources, fresh.sources);
        assert_eq!(loaded.noise.as_ref(), fresh.noise.as_ref());
        assert_eq!(loaded.videos[0].frame_bytes(2), fresh.videos[0].frame_bytes(2));

        std::fs::remove_dir_all(&root).unwrap();
    }

    #[test]
    fn pearson_reference_points() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let up = [2.0, 4.0, 6.0, 8.0];
        let down = [8.0, 6.0, 4.0, 2.0];
        assert!((pearson(&a, &up) - 1.0).abs() < 1e-12);
        assert!((pearson(&a, &down) + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&a, &[5.0; 4]), 0.0);
    }

    #[test]
    fn pool_bands_are_disjoint_and_carried_by_low_rates() {
        for id in 0..SPEAKER_POOL - 1 {
            assert!(f0_range(id).1 <= f0_range(id + 1).0 + 1e-9);
        }
        // the validation bound actually admits the micro rate
        assert!(micro_spec().validate().is_ok());
        // pool top is ~301 Hz, so 0.45 * 600 = 270 cannot carry it
        let too_low = MixSpec {
            sample_rate: 600,
            ..micro_spec()
        };
        assert!(too_low.validate().is_err());
    }
}
