//! Container mappings for dynamic objects and sinogram sets.

use std::path::Path;

use ndarray::{Array1, Array3};

use super::container::Container;
use super::object::DynamicObject;
use crate::acquisition::{AngleSchedule, SinogramSet};
use crate::error::{ensure, Error, Result};
use crate::tomo::Projection;

pub const KIND_OBJECT: &str = "dynamic_object";
pub const KIND_SINOGRAMS: &str = "sinogram_set";

fn check_kind(c: &Container, kind: &str) -> Result<()> {
    let found = c.meta_str("kind")?;
    ensure!(found == kind, "container holds `{found}`, expected `{kind}`");
    Ok(())
}

pub fn object_to_container(obj: &DynamicObject) -> Result<Container> {
    let mut c = Container::new();
    c.set_meta("kind", KIND_OBJECT);
    c.set_meta("axes", "time,row,col");
    c.set_meta("normalization", obj.normalization);
    c.set_meta("provenance", obj.provenance.clone());
    let (p, j, _) = obj.frames.dim();
    c.push_f64("frames", vec![p, j, j], obj.frames.iter().cloned().collect())?;
    Ok(c)
}

pub fn object_from_container(c: &Container) -> Result<DynamicObject> {
    check_kind(c, KIND_OBJECT)?;
    let (shape, data) = c.get_f64("frames", 3)?;
    let frames = Array3::from_shape_vec((shape[0], shape[1], shape[2]), data)
        .map_err(|e| Error::Validation(e.to_string()))?;
    let obj = DynamicObject {
        frames,
        normalization: c.meta_f64("normalization")?,
        provenance: c.meta_str("provenance")?.to_string(),
    };
    obj.validate()?;
    Ok(obj)
}

pub fn save_object(obj: &DynamicObject, path: impl AsRef<Path>) -> Result<()> {
    object_to_container(obj)?.save(path)
}

pub fn load_object(path: impl AsRef<Path>) -> Result<DynamicObject> {
    object_from_container(&Container::load(path)?)
}

pub fn sinograms_to_container(s: &SinogramSet) -> Result<Container> {
    let mut c = Container::new();
    c.set_meta("kind", KIND_SINOGRAMS);
    c.set_meta("scheme", s.schedule.scheme.clone());
    c.set_meta("distinct_views", s.schedule.distinct_views as u64);
    c.set_meta("noise_sigma", s.noise_sigma);
    if let Some(seed) = s.seed {
        c.set_meta("seed", seed);
    }
    let bin_spacing = s.projections.first().map_or(1.0, |p| p.bin_spacing);
    c.set_meta("bin_spacing", bin_spacing);
    let (p, j) = (s.len(), s.detector_count());
    c.push_f64(
        "bins",
        vec![p, j],
        s.projections.iter().flat_map(|q| q.bins.iter().cloned()).collect(),
    )?;
    c.push_f64("angles", vec![p], s.schedule.angles.clone())?;
    c.push_f64("times", vec![p], s.schedule.times.clone())?;
    Ok(c)
}

pub fn sinograms_from_container(c: &Container) -> Result<SinogramSet> {
    check_kind(c, KIND_SINOGRAMS)?;
    let (shape, bins) = c.get_f64("bins", 2)?;
    let (_, angles) = c.get_f64("angles", 1)?;
    let (_, times) = c.get_f64("times", 1)?;
    let (p, j) = (shape[0], shape[1]);
    ensure!(angles.len() == p && times.len() == p, "sinogram arrays disagree on P");
    let bin_spacing = c.meta_f64("bin_spacing")?;
    let projections = (0..p)
        .map(|k| Projection {
            bins: Array1::from(bins[k * j..(k + 1) * j].to_vec()),
            angle: angles[k],
            time_index: k,
            bin_spacing,
        })
        .collect();
    let s = SinogramSet {
        projections,
        schedule: AngleSchedule {
            angles,
            times,
            scheme: c.meta_str("scheme")?.to_string(),
            distinct_views: c.meta_u64("distinct_views")? as usize,
        },
        noise_sigma: c.meta_f64("noise_sigma")?,
        seed: c.metadata.get("seed").and_then(|v| v.as_u64()),
    };
    s.validate()?;
    Ok(s)
}

pub fn save_sinograms(s: &SinogramSet, path: impl AsRef<Path>) -> Result<()> {
    sinograms_to_container(s)?.save(path)
}

pub fn load_sinograms(path: impl AsRef<Path>) -> Result<SinogramSet> {
    sinograms_from_container(&Container::load(path)?)
}
