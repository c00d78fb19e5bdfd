pub mod decode;
pub mod evaluate;
pub mod gen_data;
pub mod split;
pub mod train;

use std::path::Path;

use crate::CliError;

/// Creates the output directory, refusing to clobber a nonempty one unless
/// forced.
pub fn prepare_out_dir(out: &Path, force: bool) -> Result<(), CliError> {
    if out.exists() {
        let nonempty = std::fs::read_dir(out)
            .map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?
            .next()
            .is_some();
        if nonempty && !force {
            return Err(CliError::Data(format!(
                "output directory {} exists and is not empty (use --force to overwrite)",
                out.display()
            )));
        }
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    std::fs::write(path, json).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
