//! Command-line front end: dataset generation, model fitting, prototype
//! mining, counterfactual generation, evaluation, rule extraction and SVG
//! overlays.

pub mod args;
pub mod commands;
pub mod render;

use anyhow::Result;
use cfx_core::CfxError;

pub use args::{Cli, Command};
pub use commands::{cmd_evaluate, cmd_explain, cmd_mine, cmd_render, cmd_rules};
pub use render::{render_overlay, write_overlay, OverlayOptions};

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => commands::cmd_synth(a),
        Command::Fit(a) => commands::cmd_fit(a),
        Command::Mine(a) => cmd_mine(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Rules(a) => cmd_rules(a),
        Command::Render(a) => cmd_render(a),
        Command::AdapterServe(a) => commands::cmd_adapter_serve(a),
    }
}

/// 2 for bad inputs (paths, shapes, arguments), 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<CfxError>() {
        Some(e) if e.is_input_error() => 2,
        _ => 1,
    }
}
