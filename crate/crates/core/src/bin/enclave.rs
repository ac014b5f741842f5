use std::process::ExitCode;

use cardiogrid_core::enclave::{run_boundary, EnclaveSpec};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format(|buf, record| {
            use std::io::Write;
            writeln!(buf, "[enclave] {} {}", record.level(), record.args())
        })
        .init();
    let spec = match EnclaveSpec::from_args(std::env::args().skip(1)) {
        Ok(spec) => spec,
        Err(e) => {
            log::error!("{e}");
            return ExitCode::from(1);
        }
    };
    match run_boundary(&spec) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(2)
        }
    }
}
