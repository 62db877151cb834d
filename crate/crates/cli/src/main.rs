use clap::{Parser, Subcommand};
use mosyn_cli::commands::{
    cmd_eval, cmd_generate, cmd_keyframe, cmd_serve, cmd_style, cmd_train, EvalArgs, GenerateArgs, KeyframeArgs,
    ServeArgs, StyleArgs, TrainArgs,
};

#[derive(Parser)]
#[command(name = "mosyn", version, about = "Single-clip motion synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model (and optionally a conditional one) on BVH clips.
    Train(TrainArgs),
    /// Sample a new motion.
    Generate(GenerateArgs),
    /// Re-render a content clip in a trained style.
    Style(StyleArgs),
    /// Refine an edited coarse motion.
    Keyframe(KeyframeArgs),
    /// Coverage and diversity metrics.
    Eval(EvalArgs),
    /// Interactive generation over websockets.
    Serve(ServeArgs),
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train(a) => {
            let m = cmd_train(&a)?;
            for o in m.outputs {
                println!("{}", o.display());
            }
        }
        Command::Generate(a) => {
            cmd_generate(&a)?;
            println!("{}", a.out.display());
        }
        Command::Style(a) => {
            cmd_style(&a)?;
            println!("{}", a.out.display());
        }
        Command::Keyframe(a) => {
            cmd_keyframe(&a)?;
            println!("{}", a.out.display());
        }
        Command::Eval(a) => {
            cmd_eval(&a)?;
        }
        Command::Serve(a) => cmd_serve(&a)?,
    }
    Ok(())
}
