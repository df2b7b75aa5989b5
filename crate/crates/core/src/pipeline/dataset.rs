//! Case loading for training and evaluation.

use std::path::Path;

use crate::error::Result;
use crate::phantom::PhantomSample;

#[derive(Clone, Debug)]
pub struct CaseData {
    pub id: String,
    pub sample: PhantomSample,
}

/// Load the listed cases from `dir/<id>/`.
pub fn load_cases(dir: impl AsRef<Path>, ids: &[String]) -> Result<Vec<CaseData>> {
    let dir = dir.as_ref();
    ids.iter()
        .map(|id| {
            let sample = PhantomSample::load(dir.join(id))?;
            Ok(CaseData { id: id.clone(), sample })
        })
        .collect()
}
