//! Synthetic organ phantoms with optional hypodense disk lesions.
//!
//! A sample is drawn on a canvas larger than the output, then cropped on
//! the organ centroid with surrounding tissue removed and intensities
//! rescaled over the organ, mirroring the slice preprocessing.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::net::Class;

use super::preprocess::{keep_slice, normalize_intensity, CropWindow};

pub const GENERATOR_VERSION: &str = "phantom-v1";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhantomParams {
    pub size: usize,
    /// Extra canvas on each side before cropping.
    pub margin: usize,
    pub organ_radius: (f64, f64),
    pub texture_amplitude: f64,
    pub lesion_probability: f64,
    pub lesion_radius: (f64, f64),
    pub lesion_contrast: (f64, f64),
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            size: 32,
            margin: 8,
            organ_radius: (9.0, 13.0),
            texture_amplitude: 0.15,
            lesion_probability: 0.5,
            lesion_radius: (2.5, 5.0),
            lesion_contrast: (0.05, 0.3),
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64), min: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo >= min && lo <= hi) {
        return Err(Error::InvalidArgument(format!("{name} range ({lo}, {hi}) is invalid")));
    }
    Ok(())
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        if self.size < 4 {
            return Err(Error::InvalidArgument(format!("phantom size {} is too small", self.size)));
        }
        check_range("organ radius", self.organ_radius, 1.0)?;
        if self.organ_radius.1 > self.size as f64 / 2.0 - 1.0 {
            return Err(Error::InvalidArgument(format!(
                "organ radius {} does not fit a {}-pixel crop",
                self.organ_radius.1, self.size
            )));
        }
        check_range("lesion radius", self.lesion_radius, 0.0)?;
        check_range("lesion contrast", self.lesion_contrast, 0.0)?;
        if !(0.0..=1.0).contains(&self.lesion_probability) {
            return Err(Error::InvalidArgument(format!(
                "lesion probability {} outside [0,1]",
                self.lesion_probability
            )));
        }
        if !(self.texture_amplitude >= 0.0 && self.texture_amplitude.is_finite()) {
            return Err(Error::InvalidArgument("texture amplitude must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Flat `key=value` description, parsed back by [`PhantomParams::from_pairs`].
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let r = |(a, b): (f64, f64)| format!("{a},{b}");
        vec![
            ("size".into(), self.size.to_string()),
            ("margin".into(), self.margin.to_string()),
            ("organ_radius".into(), r(self.organ_radius)),
            ("texture_amplitude".into(), self.texture_amplitude.to_string()),
            ("lesion_probability".into(), self.lesion_probability.to_string()),
            ("lesion_radius".into(), r(self.lesion_radius)),
            ("lesion_contrast".into(), r(self.lesion_contrast)),
        ]
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut p = Self::default();
        let bad = |k: &str, v: &str| Error::Config(format!("bad value {v:?} for {k}"));
        let range = |k: &str, v: &str| -> Result<(f64, f64)> {
            let (a, b) = v.split_once(',').ok_or_else(|| bad(k, v))?;
            Ok((a.trim().parse().map_err(|_| bad(k, v))?, b.trim().parse().map_err(|_| bad(k, v))?))
        };
        for (k, v) in pairs {
            match k {
                "size" => p.size = v.parse().map_err(|_| bad(k, v))?,
                "margin" => p.margin = v.parse().map_err(|_| bad(k, v))?,
                "organ_radius" => p.organ_radius = range(k, v)?,
                "texture_amplitude" => p.texture_amplitude = v.parse().map_err(|_| bad(k, v))?,
                "lesion_probability" => p.lesion_probability = v.parse().map_err(|_| bad(k, v))?,
                "lesion_radius" => p.lesion_radius = range(k, v)?,
                "lesion_contrast" => p.lesion_contrast = range(k, v)?,
                _ => return Err(Error::Config(format!("unknown phantom parameter {k:?}"))),
            }
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LesionMeta {
    /// Lattice centre in output coordinates.
    pub center: (usize, usize),
    pub radius: f64,
    pub contrast: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhantomMeta {
    pub seed: u64,
    pub organ_center: (f64, f64),
    pub organ_radii: (f64, f64),
    pub organ_angle: f64,
    pub lesion: Option<LesionMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSample {
    pub image: Image<f32>,
    pub organ: Mask,
    pub lesion: Mask,
    pub label: Class,
    pub meta: PhantomMeta,
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Lattice points within `r` of the origin.
pub fn disk_offsets(r: f64) -> Vec<(isize, isize)> {
    let k = r.floor() as isize;
    let mut out = Vec::new();
    for dy in -k..=k {
        for dx in -k..=k {
            if ((dy * dy + dx * dx) as f64) <= r * r {
                out.push((dy, dx));
            }
        }
    }
    out
}

struct Wave {
    ky: f64,
    kx: f64,
    phase: f64,
    weight: f64,
}

/// Generates one phantom. Deterministic in `(seed, params)`.
pub fn generate_phantom(seed: u64, params: &PhantomParams) -> Result<PhantomSample> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let canvas = params.size + 2 * params.margin;
    let jitter = params.margin as f64 / 2.0;
    let mid = (canvas as f64 - 1.0) / 2.0;
    let cy = mid + uniform(&mut rng, (-jitter, jitter));
    let cx = mid + uniform(&mut rng, (-jitter, jitter));
    let ra = uniform(&mut rng, params.organ_radius);
    let rb = uniform(&mut rng, params.organ_radius);
    let angle = rng.random_range(0.0..PI);
    let (sin, cos) = angle.sin_cos();
    let organ = Mask::from_fn(canvas, canvas, |y, x| {
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        let u = (dx * cos + dy * sin) / ra;
        let v = (-dx * sin + dy * cos) / rb;
        u * u + v * v <= 1.0
    });

    // Low-frequency texture: a few plane waves of 0.5 to 1.5 cycles across
    // the organ, weights normalized so the field stays in [-1, 1].
    let span = 2.0 * params.organ_radius.1;
    let mut waves: Vec<Wave> = (0..3)
        .map(|_| {
            let f = uniform(&mut rng, (0.5, 1.5)) / span;
            let dir = rng.random_range(0.0..2.0 * PI);
            Wave {
                ky: 2.0 * PI * f * dir.sin(),
                kx: 2.0 * PI * f * dir.cos(),
                phase: rng.random_range(0.0..2.0 * PI),
                weight: uniform(&mut rng, (0.5, 1.0)),
            }
        })
        .collect();
    let total: f64 = waves.iter().map(|w| w.weight).sum();
    waves.iter_mut().for_each(|w| w.weight /= total);
    let base = uniform(&mut rng, (0.45, 0.6));
    let field = |y: usize, x: usize| -> f64 {
        waves.iter().map(|w| w.weight * (w.ky * y as f64 + w.kx * x as f64 + w.phase).sin()).sum()
    };
    let mut raw = Image::from_fn(canvas, canvas, |y, x| {
        let g = field(y, x);
        if organ.get(y, x) {
            base + params.texture_amplitude * g
        } else {
            0.3 + 0.1 * g
        }
    });

    let diseased = rng.random::<f64>() < params.lesion_probability;
    let mut lesion = Mask::empty(canvas, canvas);
    let mut lesion_meta = None;
    if diseased {
        let r = uniform(&mut rng, params.lesion_radius);
        let contrast = uniform(&mut rng, params.lesion_contrast);
        // Centres whose disk, plus a one-pixel rim, lies inside the organ.
        let rim = disk_offsets(r + 1.0);
        let inside = |y: usize, x: usize| {
            rim.iter().all(|&(dy, dx)| {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                yy >= 0
                    && xx >= 0
                    && (yy as usize) < canvas
                    && (xx as usize) < canvas
                    && organ.get(yy as usize, xx as usize)
            })
        };
        let candidates: Vec<(usize, usize)> =
            (0..canvas).flat_map(|y| (0..canvas).map(move |x| (y, x))).filter(|&(y, x)| inside(y, x)).collect();
        if candidates.is_empty() {
            return Err(Error::LesionTooLarge { radius: r });
        }
        let (ly, lx) = candidates[rng.random_range(0..candidates.len())];
        for (dy, dx) in disk_offsets(r) {
            let (y, x) = ((ly as isize + dy) as usize, (lx as isize + dx) as usize);
            lesion.set(y, x, true);
            raw.set(y, x, raw.get(y, x) - contrast);
        }
        lesion_meta = Some((ly, lx, r, contrast));
    }

    let window = CropWindow::centered_on(&organ, params.size)?;
    let organ_c = window.apply_mask(&organ);
    let lesion_c = window.apply_mask(&lesion);
    let image = normalize_intensity(&window.apply(&raw, &organ)?, &organ_c)?;
    let lesion_meta = lesion_meta.map(|(ly, lx, radius, contrast)| LesionMeta {
        center: ((ly as isize - window.top) as usize, (lx as isize - window.left) as usize),
        radius,
        contrast,
    });
    Ok(PhantomSample {
        image: image.cast(),
        organ: organ_c,
        lesion: lesion_c,
        label: if diseased { Class::Diseased } else { Class::Healthy },
        meta: PhantomMeta {
            seed,
            organ_center: (cy, cx),
            organ_radii: (ra, rb),
            organ_angle: angle,
            lesion: lesion_meta,
        },
    })
}

/// A generated collection and how many draws the slice filter rejected.
#[derive(Clone, Debug)]
pub struct GeneratedSet {
    pub samples: Vec<PhantomSample>,
    pub rejected: usize,
}

/// Per-sample seeds derived from a dataset seed.
pub fn sample_seeds(seed: u64) -> impl Iterator<Item = u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::iter::repeat_with(move || rng.random::<u64>())
}

/// Draws phantoms until `count` pass [`keep_slice`].
pub fn generate_set(seed: u64, count: usize, params: &PhantomParams) -> Result<GeneratedSet> {
    params.validate()?;
    let mut samples = Vec::with_capacity(count);
    let mut rejected = 0;
    let limit = count.saturating_mul(20).max(100);
    for (tries, s) in sample_seeds(seed).enumerate() {
        if samples.len() == count {
            break;
        }
        if tries >= limit {
            return Err(Error::InvalidArgument(format!("slice filter rejected {rejected} of {tries} draws")));
        }
        let p = generate_phantom(s, params)?;
        if keep_slice(&p)? {
            samples.push(p);
        } else {
            rejected += 1;
        }
    }
    Ok(GeneratedSet { samples, rejected })
}
