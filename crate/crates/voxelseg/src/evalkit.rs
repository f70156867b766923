//! Full-volume segmentation, scoring, timing and reports.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use voxelseg_core::crf::{refine, rescale_intensities, CrfParams};
use voxelseg_core::data::{extract_window, normalize_hu, ScanRecord};
use voxelseg_core::loss::{boundary_mask, weight_map, weighted_cross_entropy, Exterior, LossParams};
use voxelseg_core::metrics::{dice, timing_normalize};
use voxelseg_core::net::NetworkParams;
use voxelseg_core::{Mask, Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationReport {
    pub scan_id: String,
    pub slices: usize,
    pub height: usize,
    pub width: usize,
    pub dice_pre: f64,
    /// Present only when the CRF ran.
    pub dice_post: Option<f64>,
    pub net_seconds: f64,
    pub crf_seconds: Option<f64>,
    /// Network plus CRF time rescaled to 100 slices of 512×512.
    pub normalized_seconds: f64,
}

impl SegmentationReport {
    pub const MACHINE_HEADER: &'static str = "scan_id\tdice_pre\tdice_post\tnet_seconds\tcrf_seconds\tnormalized_seconds";

    /// Tab-separated record; absent CRF fields are written as `-`.
    pub fn machine_line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |v| format!("{v:.6}"));
        format!(
            "{}\t{:.6}\t{}\t{:.6}\t{}\t{:.6}",
            self.scan_id,
            self.dice_pre,
            opt(self.dice_post),
            self.net_seconds,
            opt(self.crf_seconds),
            self.normalized_seconds
        )
    }

    pub fn parse_machine_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split('\t').collect();
        if f.len() != 6 {
            bail!("report line has {} fields, expected 6", f.len());
        }
        let opt = |s: &str| -> Result<Option<f64>> { Ok(if s == "-" { None } else { Some(s.parse()?) }) };
        Ok(Self {
            scan_id: f[0].to_owned(),
            slices: 0,
            height: 0,
            width: 0,
            dice_pre: f[1].parse()?,
            dice_post: opt(f[2])?,
            net_seconds: f[3].parse()?,
            crf_seconds: opt(f[4])?,
            normalized_seconds: f[5].parse()?,
        })
    }
}

/// Plain-text table of reports with a mean row.
pub fn format_table(reports: &[SegmentationReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:>7} {:>9} {:>9} {:>10} {:>10} {:>12}",
        "scan", "slices", "dice", "dice+crf", "net (s)", "crf (s)", "s/100@512²"
    );
    let dash = |v: Option<f64>, prec: usize| v.map_or_else(|| "-".to_owned(), |v| format!("{v:.prec$}"));
    for r in reports {
        let _ = writeln!(
            out,
            "{:<20} {:>7} {:>9.4} {:>9} {:>10.3} {:>10} {:>12.2}",
            r.scan_id,
            r.slices,
            r.dice_pre,
            dash(r.dice_post, 4),
            r.net_seconds,
            dash(r.crf_seconds, 3),
            r.normalized_seconds
        );
    }
    if reports.len() > 1 {
        let n = reports.len() as f64;
        let mean = |f: &dyn Fn(&SegmentationReport) -> Option<f64>| -> Option<f64> {
            reports.iter().map(f).sum::<Option<f64>>().map(|s| s / n)
        };
        let _ = writeln!(
            out,
            "{:<20} {:>7} {:>9.4} {:>9} {:>10.3} {:>10} {:>12.2}",
            "mean",
            "",
            mean(&|r| Some(r.dice_pre)).unwrap_or(0.0),
            dash(mean(&|r| r.dice_post), 4),
            mean(&|r| Some(r.net_seconds)).unwrap_or(0.0),
            dash(mean(&|r| r.crf_seconds), 3),
            mean(&|r| Some(r.normalized_seconds)).unwrap_or(0.0)
        );
    }
    out
}

#[derive(Clone, Debug, Default)]
pub struct SegmentOptions {
    pub crf: Option<CrfParams>,
    /// Also compute the weighted loss against the ground truth.
    pub loss: Option<LossParams>,
}

#[derive(Clone, Debug)]
pub struct Segmentation {
    /// Network labels, `[H, W, D]`.
    pub network_mask: Mask,
    /// Final labels (after the CRF when it ran), `[H, W, D]`.
    pub mask: Mask,
    /// Organ probability, `[H, W, D]`.
    pub probability: Tensor<f32>,
    /// Mean over slices of the per-pixel weighted loss.
    pub loss: Option<f64>,
    pub report: SegmentationReport,
}

struct SliceResult {
    probs: Vec<f32>,
    mask: Mask,
    loss: Option<f64>,
    /// Kept for the CRF at the network's precision.
    prob_map: Option<Vec<f64>>,
}

/// Segments every slice of `scan` with the center-slice network and,
/// optionally, the boundary-band CRF.
pub fn segment<T: Real>(params: &NetworkParams<T>, scan: &ScanRecord, options: &SegmentOptions) -> Result<Segmentation> {
    let cfg = params.config();
    let (h, w, d) = (scan.height(), scan.width(), scan.depth());
    if (h, w) != (cfg.input_height, cfg.input_width) {
        bail!(
            "scan {} is {h}×{w} in-plane but the network expects {}×{}",
            scan.scan_id,
            cfg.input_height,
            cfg.input_width
        );
    }
    let normalized = normalize_hu(&scan.volume);
    let keep_probs = options.crf.is_some();

    let start = Instant::now();
    let slices: Vec<SliceResult> = (0..d)
        .into_par_iter()
        .map(|z| -> Result<SliceResult> {
            let window = extract_window::<T>(&normalized, z, cfg.input_depth)?;
            let out = params.infer(&window)?;
            let probs = out.probs;
            let mask = Mask::from_probabilities(&probs)?;
            let loss = match &options.loss {
                Some(lp) => {
                    let target = scan.mask.slice(z);
                    let wmap = weight_map(&target, lp)?;
                    Some(weighted_cross_entropy(&probs, &target, &wmap)?.mean)
                }
                None => None,
            };
            Ok(SliceResult {
                probs: probs.data()[h * w..].iter().map(|v| v.as_f64() as f32).collect(),
                mask,
                loss,
                prob_map: keep_probs.then(|| probs.data().iter().map(|v| v.as_f64()).collect()),
            })
        })
        .collect::<Result<_>>()
        .with_context(|| format!("scan {}: network pass", scan.scan_id))?;
    let net_seconds = start.elapsed().as_secs_f64();

    let mut network_mask = Mask::zeros(&[h, w, d]);
    let mut probability = Tensor::<f32>::zeros(&[h, w, d]);
    for (z, s) in slices.iter().enumerate() {
        network_mask.set_slice(z, &s.mask);
        let p = probability.data_mut();
        for (i, &v) in s.probs.iter().enumerate() {
            p[i * d + z] = v;
        }
    }
    let loss = options
        .loss
        .as_ref()
        .map(|_| slices.iter().map(|s| s.loss.unwrap_or(0.0)).sum::<f64>() / d as f64);
    let dice_pre = dice(&network_mask, &scan.mask)?;

    let (mask, crf_seconds, dice_post) = match &options.crf {
        Some(crf) => {
            let start = Instant::now();
            let refined: Vec<Mask> = slices
                .par_iter()
                .enumerate()
                .map(|(z, s)| -> Result<Mask> {
                    let prob_map = Tensor::<f64>::new(&[2, h, w], s.prob_map.clone().expect("kept for the CRF"))?;
                    let image = rescale_intensities(&scan.image_slice(z));
                    Ok(refine(&prob_map, &image, crf)?.mask)
                })
                .collect::<Result<_>>()
                .with_context(|| format!("scan {}: CRF pass", scan.scan_id))?;
            let crf_seconds = start.elapsed().as_secs_f64();
            let mut mask = Mask::zeros(&[h, w, d]);
            for (z, m) in refined.iter().enumerate() {
                mask.set_slice(z, m);
            }
            let post = dice(&mask, &scan.mask)?;
            (mask, Some(crf_seconds), Some(post))
        }
        None => (network_mask.clone(), None, None),
    };

    let total = net_seconds + crf_seconds.unwrap_or(0.0);
    let report = SegmentationReport {
        scan_id: scan.scan_id.clone(),
        slices: d,
        height: h,
        width: w,
        dice_pre,
        dice_post,
        net_seconds,
        crf_seconds,
        normalized_seconds: timing_normalize(total, d, h, w),
    };
    Ok(Segmentation {
        network_mask,
        mask,
        probability,
        loss,
        report,
    })
}

/// `segment` without the loss.
pub fn segment_volume<T: Real>(params: &NetworkParams<T>, scan: &ScanRecord, crf: Option<&CrfParams>) -> Result<Segmentation> {
    segment(
        params,
        scan,
        &SegmentOptions {
            crf: crf.copied(),
            loss: None,
        },
    )
}

const PREDICTED: [u8; 3] = [255, 0, 0];
const TRUTH: [u8; 3] = [0, 255, 0];

fn rim(mask: &Mask) -> Mask {
    let b = boundary_mask(mask, Exterior::Background);
    let data = b.data().iter().zip(mask.data()).map(|(&b, &m)| b & m).collect();
    Mask::new(mask.shape(), data).expect("same shape")
}

/// Binary PPM of one slice: grayscale intensities with the predicted
/// boundary drawn in red and the ground-truth boundary in green (yellow
/// where they coincide).
pub fn overlay_ppm(scan: &ScanRecord, predicted: &Mask, z: usize) -> Vec<u8> {
    let (h, w) = (scan.height(), scan.width());
    let gray = rescale_intensities(&scan.image_slice(z));
    let pred = rim(&predicted.slice(z));
    let truth = rim(&scan.mask.slice(z));
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for i in 0..h * w {
        let g = gray[i].round().clamp(0.0, 255.0) as u8;
        let px = match (pred.data()[i] == 1, truth.data()[i] == 1) {
            (true, true) => [255, 255, 0],
            (true, false) => PREDICTED,
            (false, true) => TRUTH,
            (false, false) => [g, g, g],
        };
        out.extend_from_slice(&px);
    }
    out
}

/// Writes `<dir>/<scan_id>_z<index>.ppm` for every slice.
pub fn write_overlays(dir: &Path, scan: &ScanRecord, predicted: &Mask) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    (0..scan.depth())
        .map(|z| {
            let path = dir.join(format!("{}_z{z:03}.ppm", scan.scan_id));
            let mut f = std::fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
            f.write_all(&overlay_ppm(scan, predicted, z))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn machine_line_round_trip() {
        let r = SegmentationReport {
            scan_id: "s1".into(),
            slices: 3,
            height: 4,
            width: 4,
            dice_pre: 0.5,
            dice_post: None,
            net_seconds: 1.25,
            crf_seconds: None,
            normalized_seconds: 2.0,
        };
        let line = r.machine_line();
        assert_eq!(line, "s1\t0.500000\t-\t1.250000\t-\t2.000000");
        let back = SegmentationReport::parse_machine_line(&line).unwrap();
        assert_eq!(back.dice_post, None);
        assert_eq!(back.net_seconds, 1.25);
        assert!(format_table(&[r.clone(), r]).contains("mean"));
    }

    #[test]
    fn overlay_header_and_size() {
        let scan = voxelseg_core::data::ellipsoid_phantom(&Default::default(), 0, 1);
        let ppm = overlay_ppm(&scan, &scan.mask, 4);
        let header = b"P6\n32 32\n255\n";
        assert!(ppm.starts_with(header));
        assert_eq!(ppm.len(), header.len() + 32 * 32 * 3);
        // prediction equal to truth draws only coincident (yellow) rims
        assert!(!ppm[header.len()..].chunks(3).any(|p| p == PREDICTED || p == TRUTH));
        assert!(ppm[header.len()..].chunks(3).any(|p| p == [255, 255, 0]));
    }
}
