//! Dice scoring, cohort evaluation with misclassification exclusion, and
//! hyperparameter sweeps.
//!
//! Cases are classified once on the clean image at `n = 1`. Only correctly
//! classified diseased cases are segmented and scored; every other case
//! counts as excluded, so `included + excluded` is the cohort size.

use std::fmt::Write as _;

use crate::anomaly::{anomaly_map, binarize_map, decode_batch, encode_levels, normalize_map, DetectConfig};
use crate::diffusion::GuidanceConfig;
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::net::{Class, EpsPredictor, GuidanceClassifier};
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;
use crate::train::predicted_class;

/// `2|A∩B| / (|A|+|B|)`, with two empty masks scoring 1.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    let inter = a.intersection_count(b)?;
    let total = a.count() + b.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// [`dice`] on masks stored as images with values in {0, 1}.
pub fn dice_images<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    dice(&Mask::from_image(a)?, &Mask::from_image(b)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CohortCase<T> {
    pub image: Image<T>,
    pub label: Class,
    pub lesion: Option<Mask>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseRecord {
    pub index: usize,
    pub label: Class,
    pub predicted: Class,
    /// `p(h | x, n = 1)`.
    pub confidence: f64,
    pub included: bool,
    pub dice: Option<f64>,
    pub positive_area: Option<usize>,
}

impl CaseRecord {
    pub fn to_record_text(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_default();
        format!(
            "index={}\nlabel={}\npredicted={}\nconfidence={}\nincluded={}\ndice={}\npositive_area={}\n",
            self.index,
            self.label,
            self.predicted,
            self.confidence,
            self.included,
            opt(self.dice.map(|d| d.to_string())),
            opt(self.positive_area.map(|a| a.to_string())),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CohortReport {
    pub cases: Vec<CaseRecord>,
    /// Absent when no case was included.
    pub mean_dice: Option<f64>,
    pub accuracy: f64,
    pub included: usize,
    pub excluded: usize,
}

impl CohortReport {
    pub fn positive_area(&self) -> usize {
        self.cases.iter().filter_map(|c| c.positive_area).sum()
    }
}

fn validate_cases<T: Scalar>(cases: &[CohortCase<T>]) -> Result<()> {
    if cases.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (i, c) in cases.iter().enumerate() {
        match (&c.label, &c.lesion) {
            (Class::Diseased, None) => {
                return Err(Error::InvalidArgument(format!("diseased case {i} has no lesion mask")));
            }
            (_, Some(m)) if m.shape() != c.image.shape() => {
                return Err(Error::shape(&[c.image.height(), c.image.width()], &[m.height(), m.width()]));
            }
            _ => {}
        }
    }
    Ok(())
}

/// `(predicted class, p(h))` per case at `n = 1`.
pub fn classify_cases<T: Scalar, C: GuidanceClassifier<T> + ?Sized>(
    cases: &[CohortCase<T>],
    classifier: &C,
) -> Result<Vec<(Class, f64)>> {
    let mut out = Vec::with_capacity(cases.len());
    for chunk in cases.chunks(CHUNK) {
        let xs: Vec<Image<T>> = chunk.iter().map(|c| c.image.clone()).collect();
        for lp in classifier.log_probs(&xs, 1)? {
            out.push((predicted_class(lp), lp[0].f64().exp()));
        }
    }
    Ok(out)
}

/// Indices of correctly classified diseased cases.
pub fn included_indices<T>(cases: &[CohortCase<T>], predictions: &[(Class, f64)]) -> Vec<usize> {
    cases
        .iter()
        .zip(predictions)
        .enumerate()
        .filter(|(_, (c, (p, _)))| c.label == Class::Diseased && *p == Class::Diseased)
        .map(|(i, _)| i)
        .collect()
}

/// Builds the report from predictions and one predicted mask per included
/// case (in [`included_indices`] order).
pub fn score_cohort<T: Scalar>(
    cases: &[CohortCase<T>],
    predictions: &[(Class, f64)],
    masks: &[Mask],
) -> Result<CohortReport> {
    validate_cases(cases)?;
    if predictions.len() != cases.len() {
        return Err(Error::shape(&[cases.len()], &[predictions.len()]));
    }
    let included = included_indices(cases, predictions);
    if masks.len() != included.len() {
        return Err(Error::shape(&[included.len()], &[masks.len()]));
    }
    let mut records: Vec<CaseRecord> = cases
        .iter()
        .zip(predictions)
        .enumerate()
        .map(|(index, (c, &(predicted, confidence)))| CaseRecord {
            index,
            label: c.label,
            predicted,
            confidence,
            included: false,
            dice: None,
            positive_area: None,
        })
        .collect();
    let mut total = 0.0;
    for (&i, m) in included.iter().zip(masks) {
        let truth = cases[i].lesion.as_ref().expect("validated");
        let d = dice(m, truth)?;
        total += d;
        let r = &mut records[i];
        r.included = true;
        r.dice = Some(d);
        r.positive_area = Some(m.count());
    }
    let correct = records.iter().filter(|r| r.predicted == r.label).count();
    Ok(CohortReport {
        mean_dice: (!included.is_empty()).then(|| total / included.len() as f64),
        accuracy: correct as f64 / cases.len() as f64,
        included: included.len(),
        excluded: cases.len() - included.len(),
        cases: records,
    })
}

const CHUNK: usize = 32;

/// Normalized anomaly maps for the included cases at one `(S, N)` setting,
/// starting from their level-`N` encodings.
fn normalized_maps<T: Scalar, C: GuidanceClassifier<T> + ?Sized>(
    inputs: &[Image<T>],
    latents: &[Image<T>],
    level: usize,
    denoiser: &(impl EpsPredictor<T> + ?Sized),
    classifier: &C,
    guidance: &GuidanceConfig,
    s: &NoiseSchedule,
) -> Result<Vec<Image<T>>> {
    let mut maps = Vec::with_capacity(inputs.len());
    for (xs, zs) in inputs.chunks(CHUNK).zip(latents.chunks(CHUNK)) {
        let recon = decode_batch(zs, level, denoiser, Some(classifier), guidance, s)?;
        for (x, r) in xs.iter().zip(&recon) {
            maps.push(normalize_map(&anomaly_map(x, r)?)?);
        }
    }
    Ok(maps)
}

fn encode_chunked<T: Scalar>(
    inputs: &[Image<T>],
    levels: &[usize],
    denoiser: &(impl EpsPredictor<T> + ?Sized),
    s: &NoiseSchedule,
) -> Result<Vec<Vec<Image<T>>>> {
    let mut out: Vec<Vec<Image<T>>> = vec![Vec::with_capacity(inputs.len()); levels.len()];
    for xs in inputs.chunks(CHUNK) {
        for (slot, enc) in out.iter_mut().zip(encode_levels(xs, levels, denoiser, s)?) {
            slot.extend(enc);
        }
    }
    Ok(out)
}

/// Runs detection on every correctly classified diseased case, scored against
/// the ground-truth lesions.
pub fn evaluate_cohort<T: Scalar, C: GuidanceClassifier<T> + ?Sized>(
    cases: &[CohortCase<T>],
    denoiser: &(impl EpsPredictor<T> + ?Sized),
    classifier: &C,
    config: &DetectConfig,
    s: &NoiseSchedule,
) -> Result<CohortReport> {
    validate_cases(cases)?;
    config.validate(s)?;
    let predictions = classify_cases(cases, classifier)?;
    let inputs: Vec<Image<T>> = included_indices(cases, &predictions).iter().map(|&i| cases[i].image.clone()).collect();
    let latents = encode_chunked(&inputs, &[config.noise_level], denoiser, s)?.remove(0);
    let maps = normalized_maps(&inputs, &latents, config.noise_level, denoiser, classifier, &config.guidance, s)?;
    let masks = maps.iter().map(|m| binarize_map(m, config.threshold)).collect::<Result<Vec<_>>>()?;
    score_cohort(cases, &predictions, &masks)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub scales: Vec<f64>,
    pub noise_levels: Vec<usize>,
    pub thresholds: Vec<f64>,
}

impl SweepGrid {
    pub fn len(&self) -> usize {
        self.scales.len() * self.noise_levels.len() * self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self, s: &NoiseSchedule) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("sweep grid is empty".into()));
        }
        for &scale in &self.scales {
            GuidanceConfig { scale, target: Class::Healthy }.validate()?;
        }
        for &n in &self.noise_levels {
            if n == 0 || n > s.t_max() {
                return Err(Error::StepOutOfRange { n, lo: 1, hi: s.t_max() });
            }
        }
        for &t in &self.thresholds {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidArgument(format!("threshold {t} outside [0,1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub scale: f64,
    pub noise_level: usize,
    pub threshold: f64,
    pub dice: Option<f64>,
    pub accuracy: f64,
    pub included: usize,
    pub excluded: usize,
    /// Predicted-positive pixels summed over included cases.
    pub positive_area: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub provenance: Vec<(String, String)>,
}

impl SweepReport {
    pub fn best(&self) -> Option<&SweepRow> {
        self.rows.iter().filter(|r| r.dice.is_some()).max_by(|a, b| a.dice.partial_cmp(&b.dice).expect("finite dice"))
    }

    /// Comment lines, then `S,N,threshold,dice,accuracy,included,excluded`.
    /// An absent Dice is an empty field; a failed cell writes `error` in
    /// the Dice column.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.provenance {
            let _ = writeln!(s, "# {k}={v}");
        }
        s.push_str("# accuracy is measured once per cohort on clean inputs at n=1 and repeated on every row\n");
        s.push_str("S,N,threshold,dice,accuracy,included,excluded\n");
        for r in &self.rows {
            let dice = match (&r.error, r.dice) {
                (Some(_), _) => "error".to_string(),
                (None, Some(d)) => d.to_string(),
                (None, None) => String::new(),
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.scale, r.noise_level, r.threshold, dice, r.accuracy, r.included, r.excluded
            );
        }
        s
    }
}

/// Evaluates every `(S, N, threshold)` cell. Encodings are computed once up
/// to the largest `N`, and each `(S, N)` reconstruction is shared by all
/// thresholds. A failing `(S, N)` cell is recorded and the sweep continues.
pub fn sweep<T: Scalar, C: GuidanceClassifier<T> + ?Sized>(
    grid: &SweepGrid,
    cases: &[CohortCase<T>],
    denoiser: &(impl EpsPredictor<T> + ?Sized),
    classifier: &C,
    s: &NoiseSchedule,
) -> Result<SweepReport> {
    grid.validate(s)?;
    validate_cases(cases)?;
    let predictions = classify_cases(cases, classifier)?;
    let included = included_indices(cases, &predictions);
    let inputs: Vec<Image<T>> = included.iter().map(|&i| cases[i].image.clone()).collect();
    let latents = encode_chunked(&inputs, &grid.noise_levels, denoiser, s)?;
    let mut rows = Vec::with_capacity(grid.len());
    for &scale in &grid.scales {
        let guidance = GuidanceConfig { scale, target: Class::Healthy };
        for (li, &level) in grid.noise_levels.iter().enumerate() {
            let maps = normalized_maps(&inputs, &latents[li], level, denoiser, classifier, &guidance, s);
            for &threshold in &grid.thresholds {
                let cell = maps.as_ref().map_err(|e| e.to_string()).and_then(|maps| {
                    let masks = maps
                        .iter()
                        .map(|m| binarize_map(m, threshold))
                        .collect::<Result<Vec<_>>>()
                        .map_err(|e| e.to_string())?;
                    score_cohort(cases, &predictions, &masks).map_err(|e| e.to_string())
                });
                rows.push(match cell {
                    Ok(r) => SweepRow {
                        scale,
                        noise_level: level,
                        threshold,
                        dice: r.mean_dice,
                        accuracy: r.accuracy,
                        included: r.included,
                        excluded: r.excluded,
                        positive_area: r.positive_area(),
                        error: None,
                    },
                    Err(e) => SweepRow {
                        scale,
                        noise_level: level,
                        threshold,
                        dice: None,
                        accuracy: f64::NAN,
                        included: 0,
                        excluded: cases.len(),
                        positive_area: 0,
                        error: Some(e),
                    },
                });
            }
        }
    }
    let provenance = vec![
        ("cases".to_string(), cases.len().to_string()),
        ("t_max".to_string(), s.t_max().to_string()),
        ("beta_start".to_string(), s.beta_start().to_string()),
        ("beta_end".to_string(), s.beta_end().to_string()),
    ];
    Ok(SweepReport { rows, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::PerImage;

    fn mask(bits: &[u8]) -> Mask {
        Mask::from_bits(1, bits.len(), bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn dice_examples() {
        let a = mask(&[1, 1, 0, 0]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &mask(&[0, 0, 1, 1])).unwrap(), 0.0);
        let a = mask(&[1, 1, 1, 1, 0, 0, 0, 0]);
        let b = mask(&[0, 0, 1, 1, 1, 1, 1, 1]);
        assert_eq!(dice(&a, &b).unwrap(), 0.4);
        assert_eq!(dice(&mask(&[0, 0]), &mask(&[0, 0])).unwrap(), 1.0);
        assert!(dice(&mask(&[0, 0]), &mask(&[0])).is_err());
        let half = Image::from_vec(1, 2, vec![0.5f32, 1.0]).unwrap();
        assert!(dice_images(&half, &half).is_err());
    }

    struct Rigged(Vec<Class>);

    impl GuidanceClassifier<f64> for Rigged {
        fn log_probs(&self, xs: &[Image<f64>], _n: usize) -> Result<Vec<[f64; 2]>> {
            // Cases are tagged by their first pixel value.
            Ok(xs
                .iter()
                .map(|x| match self.0[x.as_slice()[0] as usize] {
                    Class::Healthy => [0.9f64.ln(), 0.1f64.ln()],
                    Class::Diseased => [0.2f64.ln(), 0.8f64.ln()],
                })
                .collect())
        }
        fn log_prob_grad(&self, xs: &[Image<f64>], _n: usize, _c: Class) -> Result<Vec<Image<f64>>> {
            Ok(xs.iter().map(|x| Image::zeros(x.height(), x.width())).collect())
        }
    }

    fn fixture() -> Vec<CohortCase<f64>> {
        let labels = [Class::Diseased, Class::Healthy, Class::Diseased, Class::Diseased, Class::Healthy];
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| CohortCase {
                image: Image::from_fn(2, 2, |y, x| if y == 0 && x == 0 { i as f64 } else { 0.0 }),
                label,
                lesion: (label == Class::Diseased).then(|| Mask::from_fn(2, 2, |y, x| y == 1 && x <= i % 2)),
            })
            .collect()
    }

    #[test]
    fn always_wrong_classifier_includes_nothing() {
        let cases = fixture();
        let wrong: Vec<Class> =
            cases.iter().map(|c| if c.label == Class::Healthy { Class::Diseased } else { Class::Healthy }).collect();
        let preds = classify_cases(&cases, &Rigged(wrong)).unwrap();
        let r = score_cohort(&cases, &preds, &[]).unwrap();
        assert_eq!(r.mean_dice, None);
        assert_eq!(r.accuracy, 0.0);
        assert_eq!((r.included, r.excluded), (0, 5));
    }

    #[test]
    fn perfect_detector_scores_one() {
        let cases = fixture();
        let truth: Vec<Class> = cases.iter().map(|c| c.label).collect();
        let preds = classify_cases(&cases, &Rigged(truth)).unwrap();
        let masks: Vec<Mask> =
            included_indices(&cases, &preds).iter().map(|&i| cases[i].lesion.clone().unwrap()).collect();
        let r = score_cohort(&cases, &preds, &masks).unwrap();
        assert_eq!(r.mean_dice, Some(1.0));
        assert_eq!(r.accuracy, 1.0);
        assert_eq!((r.included, r.excluded), (3, 2));
    }

    #[test]
    fn mean_dice_is_average_of_case_scores() {
        let cases = fixture();
        // Case 3 is misclassified and drops out; case 1 is a false positive.
        let rig = vec![Class::Diseased, Class::Diseased, Class::Diseased, Class::Healthy, Class::Healthy];
        let preds = classify_cases(&cases, &Rigged(rig)).unwrap();
        assert_eq!(included_indices(&cases, &preds), vec![0, 2]);
        // Truth for cases 0 and 2 is the single pixel (1, 0).
        let m0 = Mask::from_fn(2, 2, |y, _| y == 1);
        let m2 = Mask::from_fn(2, 2, |_, _| true);
        let r = score_cohort(&cases, &preds, &[m0, m2]).unwrap();
        let want = (2.0 / 3.0 + 2.0 / 5.0) / 2.0;
        assert!((r.mean_dice.unwrap() - want).abs() < 1e-15);
        assert_eq!(r.accuracy, 3.0 / 5.0);
        assert_eq!(r.included + r.excluded, 5);
        assert_eq!(r.cases[3].dice, None);
    }

    #[test]
    fn diseased_case_without_mask_is_rejected() {
        let mut cases = fixture();
        cases[0].lesion = None;
        assert!(score_cohort(&cases, &[(Class::Diseased, 0.1); 5], &[]).is_err());
    }

    #[test]
    fn sweep_matches_single_cell_evaluation() {
        let s = NoiseSchedule::default_linear();
        let cases: Vec<CohortCase<f64>> = fixture()
            .into_iter()
            .map(|mut c| {
                c.image = c.image.map(|v| v / 4.0);
                c
            })
            .collect();
        let truth: Vec<Class> = fixture().iter().map(|c| c.label).collect();
        struct Scaled(Rigged);
        impl GuidanceClassifier<f64> for Scaled {
            fn log_probs(&self, xs: &[Image<f64>], n: usize) -> Result<Vec<[f64; 2]>> {
                let xs: Vec<_> = xs.iter().map(|x| x.map(|v| (v * 4.0).round())).collect();
                self.0.log_probs(&xs, n)
            }
            fn log_prob_grad(&self, xs: &[Image<f64>], _n: usize, _c: Class) -> Result<Vec<Image<f64>>> {
                Ok(xs.iter().map(|x| x.map(|v| 0.1 - v)).collect())
            }
        }
        let clf = Scaled(Rigged(truth));
        let den = PerImage(|x: &Image<f64>, n: usize| x.map(|v| 0.3 * v - 1e-4 * n as f64));
        let grid = SweepGrid { scales: vec![0.0, 3.0], noise_levels: vec![4, 2], thresholds: vec![0.25, 0.5, 0.75] };
        let rep = sweep(&grid, &cases, &den, &clf, &s).unwrap();
        assert_eq!(rep.rows.len(), 12);
        for row in &rep.rows {
            let cfg = DetectConfig {
                noise_level: row.noise_level,
                guidance: GuidanceConfig { scale: row.scale, target: Class::Healthy },
                threshold: row.threshold,
            };
            let single = evaluate_cohort(&cases, &den, &clf, &cfg, &s).unwrap();
            assert_eq!(row.dice.map(f64::to_bits), single.mean_dice.map(f64::to_bits));
            assert_eq!(row.positive_area, single.positive_area());
            assert_eq!(row.included + row.excluded, cases.len());
        }
        for group in rep.rows.chunks(3) {
            assert!(group.windows(2).all(|w| w[1].positive_area <= w[0].positive_area));
        }
        let csv = rep.to_csv();
        assert!(csv.lines().any(|l| l == "S,N,threshold,dice,accuracy,included,excluded"));
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 13);
    }

    #[test]
    fn failed_cell_is_marked_and_sweep_continues() {
        let s = NoiseSchedule::default_linear();
        let cases = vec![CohortCase {
            image: Image::filled(2, 2, 0.0),
            label: Class::Diseased,
            lesion: Some(Mask::empty(2, 2)),
        }];
        let clf = Rigged(vec![Class::Diseased]);
        let den = PerImage(|x: &Image<f64>, n: usize| if n > 3 { x.map(|_| f64::NAN) } else { x.map(|_| 0.1) });
        let grid = SweepGrid { scales: vec![0.0], noise_levels: vec![2, 5], thresholds: vec![0.5] };
        let rep = sweep(&grid, &cases, &den, &clf, &s).unwrap();
        assert!(rep.rows[0].error.is_none());
        assert!(rep.rows[1].error.is_some());
        assert!(rep.to_csv().lines().last().unwrap().contains(",error,"));
    }

    #[test]
    fn invalid_grid_is_rejected() {
        let s = NoiseSchedule::default_linear();
        let cases = fixture();
        let den = PerImage(|x: &Image<f64>, _n: usize| x.clone());
        let clf = Rigged(vec![Class::Healthy; 5]);
        let empty = SweepGrid { scales: vec![], noise_levels: vec![1], thresholds: vec![0.5] };
        assert!(sweep(&empty, &cases, &den, &clf, &s).is_err());
        let bad = SweepGrid { scales: vec![1.0], noise_levels: vec![0], thresholds: vec![0.5] };
        assert!(sweep(&bad, &cases, &den, &clf, &s).is_err());
    }
}
