//! `mvcaa` — the command-line workflow for correspondence-aware multi-view
//! diffusion: rig and correspondence generation, synthetic datasets, the
//! two-stage training recipes, panorama / outpaint / densify sampling,
//! consistency evaluation, and stitching.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

mod args;
mod commands;
mod selftest;

use mvcaa_core::error::Error;

fn main() {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let code = match commands::dispatch(&argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Invalid(_) => 1,
                Error::Data(_) | Error::Io(_) | Error::Json(_) => 2,
                Error::NonFinite(_) => 3,
            }
        }
    };
    std::process::exit(code);
}
