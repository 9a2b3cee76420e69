use std::path::{Path, PathBuf};

use tomoprior::phantom::synthetic_dataset;
use tomoprior::Image;

use crate::error::Result;
use crate::io::{save_png, save_raw_image};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPaths {
    pub templates_dir: PathBuf,
    pub test_image: PathBuf,
}

/// Writes head-phantom templates (`templates/template_NN.f64`) and a test
/// slice (`test.f64`) lying in their affine span plus a lesion of strength
/// `perturbation`. PNG previews are written next to the test slice.
pub fn write_synthetic_dataset(dir: &Path, size: usize, templates: usize, perturbation: f64) -> Result<DatasetPaths> {
    let data = synthetic_dataset(size, templates, perturbation)?;
    let templates_dir = dir.join("templates");
    for (i, t) in data.templates.iter().enumerate() {
        save_raw_image(&templates_dir.join(format!("template_{i:02}.f64")), t)?;
    }
    let test_image = dir.join("test.f64");
    save_raw_image(&test_image, &data.test)?;
    save_png(&dir.join("test.png"), &data.test)?;
    Ok(DatasetPaths { templates_dir, test_image })
}

/// Writes one image as raw floats plus a PNG preview beside it.
pub fn write_image_pair(path: &Path, x: &Image) -> Result<()> {
    save_raw_image(path, x)?;
    save_png(&path.with_extension("png"), x)
}
