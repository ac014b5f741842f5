//! The emulated trusted boundary: a separate process that alone holds
//! session keys and sees plaintext RR data.

mod boundary;
mod host;
mod overhead;
mod pipeline;
pub mod protocol;

pub use boundary::{serve, Boundary, PROCESSING_FAILED};
pub use host::{
    format_bands, format_grid, parse_bands, parse_grid, read_root_key, write_root_key, EnclaveError, EnclaveHost,
    EnclaveLauncher, EnclaveSpec, ProcessReply,
};
pub use overhead::{precise_delay, OverheadModel};
pub use pipeline::{plain_process_batch, Pipeline, ReportSet, ANALYTICS, PIPELINE_VERSION};

/// Body of a boundary process: serves the channel on stdin/stdout until
/// SHUTDOWN or end of input.
pub fn run_boundary(spec: &EnclaveSpec) -> Result<(), EnclaveError> {
    let root = read_root_key(&spec.root_key_file).map_err(|e| EnclaveError::Config(format!("root key: {e}")))?;
    let pipeline = spec.pipeline()?;
    let mut boundary = Boundary::new(pipeline, root, spec.overhead);
    log::info!(
        "boundary up, measurement {} ({})",
        hex::encode(boundary.measurement()),
        spec.overhead.disclosure()
    );
    serve(&mut boundary, std::io::stdin().lock(), std::io::stdout().lock())
        .map_err(|e| EnclaveError::Protocol(e.to_string()))
}
