use std::path::Path;

use forgeloc_tensor::{Graph, Tensor};

use crate::dataset::LabeledImage;
use crate::error::IoContext;
use crate::metrics::{score_images, Aggregation, ScoreReport};
use crate::params::ParamStore;
use crate::{ForgeryModel, ImagePatch, PixelProbMap, Result};

/// Feature-path inference; the mask branch is never touched.
pub fn predict(
    model: &ForgeryModel,
    store: &ParamStore<f32>,
    images: &[&ImagePatch],
    batch_size: usize,
) -> Result<Vec<PixelProbMap>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let x: Vec<_> = chunk.iter().map(|i| i.to_tensor::<f32>()).collect();
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(Tensor::stack(&x)?);
        let pred = model.predict(&mut g, &p, x)?;
        out.extend(PixelProbMap::from_batch(g.value(pred))?);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: ScoreReport,
    pub predictions: Vec<PixelProbMap>,
}

pub fn evaluate(
    model: &ForgeryModel,
    store: &ParamStore<f32>,
    data: &[LabeledImage],
    threshold: f64,
    aggregation: Aggregation,
    batch_size: usize,
) -> Result<Evaluation> {
    let images: Vec<&ImagePatch> = data.iter().map(|d| &d.image).collect();
    let predictions = predict(model, store, &images, batch_size)?;
    let items: Vec<_> = data
        .iter()
        .zip(&predictions)
        .map(|(d, p)| (d.id.clone(), p.clone(), d.mask.clone()))
        .collect();
    let report = score_images(&items, threshold, aggregation)?;
    Ok(Evaluation { report, predictions })
}

/// Writes each map as an 8-bit grayscale PNG named after its id.
pub fn write_predictions(dir: &Path, ids: &[String], maps: &[PixelProbMap]) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)?;
    for (id, m) in ids.iter().zip(maps) {
        m.to_luma8().save(dir.join(format!("{id}.png")))?;
    }
    Ok(())
}
