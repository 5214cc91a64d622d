pub mod bench;
pub mod comprehend;
pub mod decompose;
pub mod eval;
pub mod extract;
pub mod quantize;
pub mod report;
pub mod train;

use crate::CliError;

/// "2,4,8" -> [2, 4, 8]
pub fn parse_usize_list(text: &str) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|e| CliError::new("CONFIG", anyhow::anyhow!("bad list entry {p:?}: {e}")))
        })
        .collect()
}
