use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = bidistill_cli::Cli::parse();
    match bidistill_cli::execute(cli) {
        Ok(Some(out)) => {
            if let Some(summary) = &out.summary {
                print!("{}", summary.to_markdown());
            }
            for st in &out.latency {
                println!(
                    "{}: {} parameters, min {:.4}s mean {:.4}s over {} users",
                    st.model, st.parameter_count, st.min_secs, st.mean_secs, st.users
                );
            }
            println!("{}", out.dir.display());
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
