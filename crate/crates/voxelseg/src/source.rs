//! Training and validation scans, held in memory or read on demand.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::{Context, Result};
use voxelseg_core::data::{base_scan_id, normalize_hu, rotate_scan, ScanRecord};
use voxelseg_core::Tensor;

use crate::dataset::{load_scan, volume_path};
use crate::format::volume::read_header;

/// A scan together with its network-ready intensities.
#[derive(Debug)]
pub struct PreparedScan {
    pub record: ScanRecord,
    /// Clamped and rescaled to `[0, 1]`.
    pub normalized: Tensor<f32>,
}

impl PreparedScan {
    pub fn new(record: ScanRecord) -> Self {
        let normalized = normalize_hu(&record.volume);
        Self { record, normalized }
    }
}

pub trait ScanSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn id(&self, index: usize) -> &str;

    fn depth(&self, index: usize) -> usize;

    fn get(&self, index: usize) -> Result<Arc<PreparedScan>>;
}

pub struct InMemory {
    scans: Vec<Arc<PreparedScan>>,
}

impl InMemory {
    pub fn new(records: Vec<ScanRecord>) -> Self {
        use rayon::prelude::*;
        Self {
            scans: records.into_par_iter().map(|r| Arc::new(PreparedScan::new(r))).collect(),
        }
    }
}

impl ScanSource for InMemory {
    fn len(&self) -> usize {
        self.scans.len()
    }

    fn id(&self, index: usize) -> &str {
        &self.scans[index].record.scan_id
    }

    fn depth(&self, index: usize) -> usize {
        self.scans[index].record.depth()
    }

    fn get(&self, index: usize) -> Result<Arc<PreparedScan>> {
        Ok(Arc::clone(&self.scans[index]))
    }
}

/// Reads scans from disk as they are requested and keeps the most recent
/// few. Variant ids (`id@rot+10`) missing from `root` are rotated from
/// their original on load.
pub struct OnDisk {
    root: PathBuf,
    ids: Vec<String>,
    depths: Vec<usize>,
    capacity: usize,
    recent: Mutex<Vec<(usize, Arc<PreparedScan>)>>,
}

impl OnDisk {
    pub fn new(root: &Path, ids: Vec<String>, capacity: usize) -> Result<Self> {
        let depths = ids
            .iter()
            .map(|id| {
                let stored = if volume_path(root, id).exists() { id.as_str() } else { base_scan_id(id) };
                let h = read_header(&volume_path(root, stored)).with_context(|| format!("scan {id}: reading header"))?;
                Ok(h.depth as usize)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            root: root.to_owned(),
            ids,
            depths,
            capacity: capacity.max(1),
            recent: Mutex::new(Vec::new()),
        })
    }

    fn load(&self, id: &str) -> Result<ScanRecord> {
        if volume_path(&self.root, id).exists() {
            return load_scan(&self.root, id);
        }
        let base = base_scan_id(id);
        let deg: i32 = id[base.len()..]
            .trim_start_matches("@rot")
            .parse()
            .with_context(|| format!("scan {id}: not found under {}", self.root.display()))?;
        Ok(rotate_scan(&load_scan(&self.root, base)?, deg))
    }
}

impl ScanSource for OnDisk {
    fn len(&self) -> usize {
        self.ids.len()
    }

    fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    fn depth(&self, index: usize) -> usize {
        self.depths[index]
    }

    fn get(&self, index: usize) -> Result<Arc<PreparedScan>> {
        if let Some((_, s)) = self.recent.lock().expect("cache lock").iter().find(|(i, _)| *i == index) {
            return Ok(Arc::clone(s));
        }
        let scan = Arc::new(PreparedScan::new(self.load(&self.ids[index])?));
        let mut recent = self.recent.lock().expect("cache lock");
        if recent.len() >= self.capacity {
            recent.remove(0);
        }
        recent.push((index, Arc::clone(&scan)));
        Ok(scan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::write_phantoms;

    #[test]
    fn disk_source_rotates_missing_variants() {
        let dir = tempfile::tempdir().unwrap();
        let spec = voxelseg_core::data::PhantomSpec::default();
        let ids = write_phantoms(dir.path(), 1, &spec, 3).unwrap();
        let variant = voxelseg_core::data::variant_id(&ids[0], -10);
        let src = OnDisk::new(dir.path(), vec![ids[0].clone(), variant.clone()], 1).unwrap();
        assert_eq!(src.depth(1), spec.depth);
        let rotated = src.get(1).unwrap();
        assert_eq!(rotated.record.scan_id, variant);
        let orig = load_scan(dir.path(), &ids[0]).unwrap();
        assert_eq!(rotated.record.mask, rotate_scan(&orig, -10).mask);
        assert_eq!(src.get(0).unwrap().record.mask, orig.mask);
    }
}
