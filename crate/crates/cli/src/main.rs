mod args;
mod commands;
mod pipeline;

use clap::Parser;

use args::{Cli, Command};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    match &cli.command {
        Command::Train(a) => commands::cmd_train(a),
        Command::Eval(a) => commands::cmd_eval(a),
        Command::Predict(a) => commands::cmd_predict(a),
        Command::Ensemble(a) => commands::cmd_ensemble(a),
        Command::Gradcheck(a) => commands::cmd_gradcheck(a),
    }
}
