//! Scan directories: `<root>/<id>.volf` holds the CT volume and
//! `<root>/<id>.mask.volf` its binary mask.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use voxelseg_core::data::{
    augment_all, base_scan_id, ellipsoid_phantom, rotate_scan, PhantomSpec, Provenance, ScanRecord, AUGMENT_ANGLES,
};

use crate::format::volume::{load_volume, save_volume, Modality, Volume};

pub const VOLUME_EXT: &str = ".volf";
pub const MASK_EXT: &str = ".mask.volf";

pub fn volume_path(root: &Path, id: &str) -> PathBuf {
    root.join(format!("{id}{VOLUME_EXT}"))
}

pub fn mask_path(root: &Path, id: &str) -> PathBuf {
    root.join(format!("{id}{MASK_EXT}"))
}

/// Ids of every volume under `root` (masks excluded), sorted.
pub fn list_scans(root: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    let dir = std::fs::read_dir(root).with_context(|| format!("cannot list data root {}", root.display()))?;
    for entry in dir {
        let name = entry.with_context(|| format!("cannot list data root {}", root.display()))?.file_name();
        let Some(name) = name.to_str() else { continue };
        if name.ends_with(MASK_EXT) {
            continue;
        }
        if let Some(id) = name.strip_suffix(VOLUME_EXT) {
            ids.push(id.to_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Original-scan ids under `root`, i.e. excluding rotated copies.
pub fn list_originals(root: &Path) -> Result<Vec<String>> {
    Ok(list_scans(root)?.into_iter().filter(|id| base_scan_id(id) == id).collect())
}

fn provenance_of(id: &str) -> Provenance {
    id.split_once("@rot")
        .and_then(|(_, deg)| deg.parse::<i32>().ok())
        .filter(|&d| d != 0)
        .map_or(Provenance::Original, Provenance::Rotated)
}

pub fn load_scan(root: &Path, id: &str) -> Result<ScanRecord> {
    let vpath = volume_path(root, id);
    let mpath = mask_path(root, id);
    if !mpath.exists() {
        bail!("scan {id}: mask {} not found", mpath.display());
    }
    let vol = load_volume(&vpath).with_context(|| format!("scan {id}: loading volume"))?;
    let mask = load_volume(&mpath).with_context(|| format!("scan {id}: loading mask"))?;
    let tensor = vol.to_tensor().with_context(|| format!("scan {id}: volume"))?;
    let mask = mask.to_mask().with_context(|| format!("scan {id}: mask"))?;
    let mut record = ScanRecord::new(id, tensor, mask, vol.header.spacing).with_context(|| format!("scan {id}"))?;
    record.provenance = provenance_of(id);
    Ok(record)
}

pub fn save_scan(record: &ScanRecord, root: &Path) -> Result<()> {
    std::fs::create_dir_all(root).with_context(|| format!("cannot create {}", root.display()))?;
    let id = &record.scan_id;
    let vol = Volume::from_hounsfield(&record.volume, record.spacing)?;
    save_volume(&vol, &volume_path(root, id)).with_context(|| format!("scan {id}: writing volume"))?;
    let mask = Volume::from_mask(&record.mask, record.spacing)?;
    save_volume(&mask, &mask_path(root, id)).with_context(|| format!("scan {id}: writing mask"))?;
    Ok(())
}

/// Loads scans in parallel, keeping the order of `ids`.
pub fn load_scans(root: &Path, ids: &[String]) -> Result<Vec<ScanRecord>> {
    ids.par_iter().map(|id| load_scan(root, id)).collect()
}

/// The rotated copies of `ids` used for training. `None` mode keeps the
/// originals only; on-the-fly rotates in memory; cached reads the copies
/// written by [`augment_dataset`].
pub fn training_scans(data_root: &Path, cache_dir: &Path, ids: &[String], mode: crate::config::AugmentMode) -> Result<Vec<ScanRecord>> {
    use crate::config::AugmentMode;
    match mode {
        AugmentMode::None => load_scans(data_root, ids),
        AugmentMode::OnTheFly => {
            let originals = load_scans(data_root, ids)?;
            Ok(originals.par_iter().flat_map_iter(augment_all).collect())
        }
        AugmentMode::Cached => {
            let variants: Vec<String> = ids
                .iter()
                .flat_map(|id| AUGMENT_ANGLES.iter().map(move |&d| voxelseg_core::data::variant_id(id, d)))
                .collect();
            if let Some(missing) = variants.iter().find(|v| !volume_path(cache_dir, v).exists()) {
                bail!(
                    "rotated copy {missing} is missing from {}; run `voxelseg augment` first",
                    cache_dir.display()
                );
            }
            load_scans(cache_dir, &variants)
        }
    }
}

#[derive(Debug, Default)]
pub struct AugmentSummary {
    pub written: usize,
    pub skipped: usize,
    /// `(scan id, message)` for scans that could not be augmented.
    pub failures: Vec<(String, String)>,
}

/// Writes the seven rotated copies of every scan in `ids` to `cache_dir`,
/// skipping copies that already exist. Failing scans are reported and the
/// rest still processed.
pub fn augment_dataset(data_root: &Path, cache_dir: &Path, ids: &[String]) -> Result<AugmentSummary> {
    std::fs::create_dir_all(cache_dir).with_context(|| format!("cannot create cache {}", cache_dir.display()))?;
    let results: Vec<(String, Result<(usize, usize)>)> = ids
        .par_iter()
        .map(|id| (id.clone(), augment_one(data_root, cache_dir, id)))
        .collect();
    let mut summary = AugmentSummary::default();
    for (id, r) in results {
        match r {
            Ok((w, s)) => {
                summary.written += w;
                summary.skipped += s;
            }
            Err(e) => summary.failures.push((id, format!("{e:#}"))),
        }
    }
    Ok(summary)
}

fn augment_one(data_root: &Path, cache_dir: &Path, id: &str) -> Result<(usize, usize)> {
    let todo: Vec<i32> = AUGMENT_ANGLES
        .iter()
        .copied()
        .filter(|&d| {
            let v = voxelseg_core::data::variant_id(id, d);
            !(volume_path(cache_dir, &v).exists() && mask_path(cache_dir, &v).exists())
        })
        .collect();
    let skipped = AUGMENT_ANGLES.len() - todo.len();
    if todo.is_empty() {
        return Ok((0, skipped));
    }
    let record = load_scan(data_root, id)?;
    for &deg in &todo {
        save_scan(&rotate_scan(&record, deg), cache_dir)?;
    }
    log::info!("{id}: wrote {} rotated copies", todo.len());
    Ok((todo.len(), skipped))
}

/// Writes `count` synthetic ellipsoid phantoms to `root`.
pub fn write_phantoms(root: &Path, count: usize, spec: &PhantomSpec, seed: u64) -> Result<Vec<String>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let record = ellipsoid_phantom(spec, i, seed);
            save_scan(&record, root)?;
            Ok(record.scan_id)
        })
        .collect()
}

/// Writes a probability map (`[H, W, D]`, organ channel) next to masks.
pub fn save_probability(probs: &voxelseg_core::Tensor<f32>, spacing: [f64; 3], path: &Path) -> Result<()> {
    let shape = probs.shape();
    let vol = Volume::new(
        [shape[0], shape[1], shape[2]],
        spacing,
        Modality::Probability,
        crate::format::volume::Voxels::F32(probs.data().to_vec()),
    )?;
    save_volume(&vol, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provenance_from_id() {
        assert_eq!(provenance_of("a"), Provenance::Original);
        assert_eq!(provenance_of("a@rot-20"), Provenance::Rotated(-20));
        assert_eq!(provenance_of("a@rot+10"), Provenance::Rotated(10));
    }

    #[test]
    fn scans_round_trip_through_a_directory() {
        let dir = tempfile::tempdir().unwrap();
        let spec = PhantomSpec::default();
        let ids = write_phantoms(dir.path(), 2, &spec, 4).unwrap();
        assert_eq!(list_scans(dir.path()).unwrap(), ids);
        let back = load_scan(dir.path(), &ids[1]).unwrap();
        let orig = ellipsoid_phantom(&spec, 1, 4);
        assert_eq!(back.mask, orig.mask);
        assert_eq!(back.spacing, orig.spacing);
        assert_eq!(back.volume.max_abs_diff(&orig.volume), 0.0);
    }
}
