use std::path::PathBuf;

use ttq_core::io::{load_ttrnn, TtRnnFile};
use ttq_core::pipeline::load_dataset;
use ttq_core::tensor::Shape;
use ttq_core::ttrnn::FeatureSequence;

use crate::{Cli, CliError};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Trained classifier (.ttq).
    #[arg(long)]
    pub model: PathBuf,

    /// Feature dataset directory.
    #[arg(long)]
    pub features: PathBuf,
}

pub fn run(_cli: &Cli, args: &Args) -> Result<(), CliError> {
    let stored = load_ttrnn(&args.model)?;
    let (_, seqs) = load_dataset(&args.features)?;
    let modes = stored.config().input_modes.clone();
    let shape = Shape::new(modes.clone()).map_err(|e| CliError::new("SHAPE", anyhow::anyhow!("{e}")))?;
    let reshaped: Vec<FeatureSequence<f32>> = seqs
        .into_iter()
        .map(|seq| {
            Ok(FeatureSequence {
                frames: seq
                    .frames
                    .into_iter()
                    .map(|f| {
                        f.into_reshape(shape.clone())
                            .map_err(|e| CliError::new("SHAPE", anyhow::anyhow!("{e}")))
                    })
                    .collect::<Result<_, CliError>>()?,
                label: seq.label,
            })
        })
        .collect::<Result<_, CliError>>()?;

    let accuracy = match stored {
        TtRnnFile::F64(model) => {
            let data: Vec<FeatureSequence<f64>> = reshaped.iter().map(|s| s.cast()).collect();
            model.evaluate(&data)?
        }
        TtRnnFile::F32(model) => model.evaluate(&reshaped)?,
    };
    println!("accuracy {:.4} over {} sequences", accuracy, reshaped.len());
    Ok(())
}
