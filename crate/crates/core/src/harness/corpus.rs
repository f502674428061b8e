//! Synthetic corpora, degradation of a corpus, and CSV manifests.
//!
//! A synthetic item is a sum of harmonic sources. Each source has a random
//! fundamental in 80 Hz to 1 kHz, harmonics up to 45% of the sample rate
//! with a power-law roll-off, phases locked to the fundamental, and a slow
//! amplitude modulation. Items are peak-normalized to 0.5.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::DataSection;
use crate::bridge::WaveformPair;
use crate::dsp::{degrade, read_wav, write_wav, AudioBuffer, DegradationSpec, Encoding, FilterFamily};
use crate::error::{Error, Result};

pub const PEAK: f64 = 0.5;
const MIN_F0: f64 = 80.0;
const MAX_F0: f64 = 1000.0;
const MAX_HARMONIC_FRACTION: f64 = 0.45;

/// Independent generator for item `index` under `seed`.
pub fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One synthetic waveform of `len` samples.
pub fn synth_item<R: Rng + ?Sized>(rng: &mut R, data: &DataSection, len: usize) -> Vec<f64> {
    let rate = data.target_rate as f64;
    let sources = rng.random_range(data.min_sources..=data.max_sources);
    let mut x = vec![0.0; len];
    for _ in 0..sources {
        let f0 = MIN_F0 * (MAX_F0 / MIN_F0).powf(rng.random::<f64>());
        let rolloff = rng.random_range(0.8..1.4);
        let amp = rng.random_range(0.2..1.0);
        let phase = rng.random_range(0.0..2.0 * PI);
        let mod_rate = rng.random_range(0.5..3.0);
        let mod_phase = rng.random_range(0.0..2.0 * PI);
        let mod_depth = rng.random_range(0.0..0.5);
        let harmonics = ((MAX_HARMONIC_FRACTION * rate / f0).floor() as usize).max(1);
        let mut src = vec![0.0; len];
        for k in 1..=harmonics {
            let a = amp / (k as f64).powf(rolloff);
            // rotate a unit phasor instead of calling sin per sample
            let w = 2.0 * PI * k as f64 * f0 / rate;
            let (sr, cr) = w.sin_cos();
            let (mut s, mut c) = (k as f64 * phase).sin_cos();
            for v in src.iter_mut() {
                *v += a * s;
                let ns = s * cr + c * sr;
                c = c * cr - s * sr;
                s = ns;
            }
        }
        for (i, (v, s)) in x.iter_mut().zip(&src).enumerate() {
            let env = 1.0 + mod_depth * (2.0 * PI * mod_rate * i as f64 / rate + mod_phase).sin();
            *v += env * s;
        }
    }
    let peak = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= PEAK / peak);
    }
    x
}

/// `count` synthetic items; item `i` depends only on `(seed, i)`.
pub fn synth_corpus(data: &DataSection, len: usize, count: usize, seed: u64) -> Result<Vec<AudioBuffer>> {
    (0..count)
        .map(|i| AudioBuffer::new(synth_item(&mut item_rng(seed, i as u64), data, len), data.target_rate))
        .collect()
}

/// Degradation for item `index`: a random draw with the fixed fields of
/// `data` applied on top.
pub fn degradation_for(data: &DataSection, seed: u64, index: u64) -> DegradationSpec {
    // a separate stream family from synthesis
    let mut rng = item_rng(seed ^ 0x5eed_de9a_ade0_0000, index);
    data.degradation(DegradationSpec::random(&mut rng))
}

pub fn degrade_corpus(items: &[AudioBuffer], data: &DataSection, seed: u64) -> Result<Vec<(DegradationSpec, WaveformPair)>> {
    if items.is_empty() {
        return Err(Error::invalid("nothing to degrade: the corpus is empty"));
    }
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let spec = degradation_for(data, seed, i as u64);
            Ok((spec, degrade(item, &spec)?))
        })
        .collect()
}

/// Row of a source manifest (one WAV per line).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub path: PathBuf,
}

/// Row of a degradation manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub id: String,
    pub hr_path: PathBuf,
    pub lr_path: PathBuf,
    pub family: FilterFamily,
    pub order: usize,
    pub input_rate: f64,
    pub cutoff_hz: f64,
    pub target_rate: u32,
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_rows<T: for<'de> Deserialize<'de>>(manifest: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(manifest).map_err(|e| Error::data(manifest, e.to_string()))?;
    let rows = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::data(manifest, e.to_string()))?;
    if rows.is_empty() {
        return Err(Error::data(manifest, "manifest has no entries"));
    }
    Ok(rows)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::data(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn check_exists(manifest: &Path, p: &Path) -> Result<()> {
    if !p.is_file() {
        return Err(Error::data(manifest, format!("listed file {} does not exist", p.display())));
    }
    Ok(())
}

/// Reads a source manifest and returns absolute-or-manifest-relative paths,
/// all checked to exist.
pub fn read_source_manifest(manifest: &Path) -> Result<Vec<PathBuf>> {
    let base = base_dir(manifest);
    let rows: Vec<SourceEntry> = read_rows(manifest)?;
    rows.into_iter()
        .map(|r| {
            let p = resolve(&base, &r.path);
            check_exists(manifest, &p)?;
            Ok(p)
        })
        .collect()
}

/// Writes `items` as `wav/item_NNNNN.wav` under `out_dir` plus
/// `manifest.csv`; returns the manifest path.
pub fn write_source_corpus(out_dir: &Path, items: &[AudioBuffer]) -> Result<PathBuf> {
    create_dir(&out_dir.join("wav"))?;
    let mut rows = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let rel = PathBuf::from(format!("wav/item_{i:05}.wav"));
        write_wav(out_dir.join(&rel), item, Encoding::Float32)?;
        rows.push(SourceEntry { path: rel });
    }
    let manifest = out_dir.join("manifest.csv");
    write_rows(&manifest, &rows)?;
    Ok(manifest)
}

/// Degrades every file of a source manifest into `out_dir` (`hr/`, `lr/`
/// and `pairs.csv`); returns the pair manifest path.
pub fn degrade_manifest(source_manifest: &Path, out_dir: &Path, data: &DataSection, seed: u64) -> Result<PathBuf> {
    let paths = read_source_manifest(source_manifest)?;
    let items = paths.iter().map(read_wav).collect::<Result<Vec<_>>>()?;
    let pairs = degrade_corpus(&items, data, seed)?;
    create_dir(&out_dir.join("hr"))?;
    create_dir(&out_dir.join("lr"))?;
    let mut rows = Vec::with_capacity(pairs.len());
    for (i, ((spec, pair), src)) in pairs.iter().zip(&paths).enumerate() {
        let stem = src.file_stem().and_then(|s| s.to_str()).unwrap_or("item");
        let id = format!("{i:05}_{stem}");
        let hr = PathBuf::from(format!("hr/{id}.wav"));
        let lr = PathBuf::from(format!("lr/{id}.wav"));
        let rate = items[i].rate;
        write_wav(out_dir.join(&hr), &AudioBuffer::new(pair.x_hr.clone(), rate)?, Encoding::Float32)?;
        write_wav(out_dir.join(&lr), &AudioBuffer::new(pair.x_lr.clone(), rate)?, Encoding::Float32)?;
        rows.push(PairEntry {
            id,
            hr_path: hr,
            lr_path: lr,
            family: spec.family,
            order: spec.order,
            input_rate: spec.input_rate,
            cutoff_hz: pair.cutoff_hz,
            target_rate: rate,
        });
    }
    let manifest = out_dir.join("pairs.csv");
    write_rows(&manifest, &rows)?;
    Ok(manifest)
}

/// Loads every pair listed in a degradation manifest.
pub fn load_pairs(manifest: &Path) -> Result<Vec<(PairEntry, WaveformPair)>> {
    let base = base_dir(manifest);
    let rows: Vec<PairEntry> = read_rows(manifest)?;
    rows.into_iter()
        .map(|r| {
            let hr_path = resolve(&base, &r.hr_path);
            let lr_path = resolve(&base, &r.lr_path);
            check_exists(manifest, &hr_path)?;
            check_exists(manifest, &lr_path)?;
            let hr = read_wav(&hr_path)?;
            let lr = read_wav(&lr_path)?;
            if hr.rate != r.target_rate || lr.rate != r.target_rate {
                return Err(Error::data(manifest, format!("{}: sample rate differs from manifest", r.id)));
            }
            let pair = WaveformPair::new(hr.samples, lr.samples, r.target_rate as f64, r.input_rate, r.cutoff_hz)
                .map_err(|e| Error::data(manifest, format!("{}: {e}", r.id)))?;
            Ok((r, pair))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{stft, StftConfig};

    fn small() -> DataSection {
        DataSection {
            duration_secs: 0.1,
            ..Default::default()
        }
    }

    #[test]
    fn synth_is_deterministic_and_normalized() {
        let d = small();
        let a = synth_corpus(&d, 4800, 3, 9).unwrap();
        let b = synth_corpus(&d, 4800, 3, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        for item in &a {
            let peak = item.samples.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!((peak - PEAK).abs() < 1e-12);
            assert_eq!(item.len(), 4800);
        }
        // item i does not depend on how many items are generated
        assert_eq!(synth_corpus(&d, 4800, 1, 9).unwrap()[0], a[0]);
    }

    #[test]
    fn synth_has_content_above_typical_cutoffs() {
        let d = small();
        let x = synth_item(&mut item_rng(1, 0), &d, 4800);
        let cfg = StftConfig::new(1024).unwrap();
        let p = stft(&x, &cfg).unwrap().power();
        let bins = cfg.bins();
        let hz = 48000.0 / 1024.0;
        let band = |lo: f64, hi: f64| -> f64 {
            p.chunks(bins).map(|f| f.iter().enumerate().filter(|(k, _)| (*k as f64 * hz) >= lo && (*k as f64 * hz) < hi).map(|(_, v)| v).sum::<f64>()).sum()
        };
        let total = band(0.0, 24001.0);
        assert!(band(4000.0, 24001.0) > 1e-4 * total);
        assert!(band(12000.0, 24001.0) > 1e-7 * total);
    }

    /// Asymptotic Kolmogorov distribution tail P(K > λ).
    fn kolmogorov_tail(lambda: f64) -> f64 {
        let s: f64 = (1..=100).map(|k| (-1f64).powi(k - 1) * (-2.0 * (k as f64 * lambda).powi(2)).exp()).sum();
        (2.0 * s).clamp(0.0, 1.0)
    }

    #[test]
    fn random_cutoffs_are_uniform() {
        let d = DataSection::default();
        let mut c: Vec<f64> = (0..1000).map(|i| degradation_for(&d, 3, i).cutoff_hz()).collect();
        c.sort_by(f64::total_cmp);
        assert!(c[0] >= 3000.0 && c[999] <= 24000.0);
        let n = c.len() as f64;
        let dmax = c
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = (v - 3000.0) / 21000.0;
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        let p = kolmogorov_tail((n.sqrt() + 0.12 + 0.11 / n.sqrt()) * dmax);
        assert!(p > 0.01, "KS p = {p}");
    }

    #[test]
    fn fixed_fields_override_the_draw() {
        let d = DataSection {
            input_rate: Some(8000.0),
            family: Some(FilterFamily::Chebyshev1),
            ..Default::default()
        };
        for i in 0..20 {
            let s = degradation_for(&d, 1, i);
            assert_eq!((s.input_rate, s.family), (8000.0, FilterFamily::Chebyshev1));
            s.validate(48000.0).unwrap();
        }
    }

    #[test]
    fn manifest_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let d = DataSection {
            input_rate: Some(16000.0),
            ..small()
        };
        // start on the f32 grid so the files hold exactly these samples
        let items: Vec<AudioBuffer> = synth_corpus(&d, 4800, 2, 1)
            .unwrap()
            .into_iter()
            .map(|b| AudioBuffer::new(b.samples.iter().map(|&v| v as f32 as f64).collect(), b.rate).unwrap())
            .collect();
        let src = write_source_corpus(&dir.path().join("src"), &items).unwrap();
        assert_eq!(read_source_manifest(&src).unwrap().len(), 2);
        let pairs = degrade_manifest(&src, &dir.path().join("deg"), &d, 5).unwrap();
        let loaded = load_pairs(&pairs).unwrap();
        let direct = degrade_corpus(&items, &d, 5).unwrap();
        let f32_grid = |v: &[f64]| v.iter().map(|&x| x as f32 as f64).collect::<Vec<_>>();
        for (i, ((entry, p), (spec, q))) in loaded.iter().zip(&direct).enumerate() {
            assert_eq!((entry.family, entry.input_rate), (spec.family, spec.input_rate));
            assert_eq!(p.x_hr, f32_grid(&items[i].samples));
            assert_eq!(p.x_lr, f32_grid(&q.x_lr));
        }

        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "path\n").unwrap();
        assert!(read_source_manifest(&empty).is_err());
        let missing = dir.path().join("missing.csv");
        std::fs::write(&missing, "path\nnot_there.wav\n").unwrap();
        let err = read_source_manifest(&missing).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Data);
    }
}
