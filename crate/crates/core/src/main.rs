mod cli;

use clap::Parser;

fn main() {
    let args = cli::Cli::parse();
    let level = if args.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp_secs().init();
    if let Err(e) = cli::run(args) {
        // Library errors already embed their source in the message.
        let mut msg = String::new();
        for cause in e.chain().map(|c| c.to_string()) {
            if !msg.ends_with(&cause) {
                if !msg.is_empty() {
                    msg.push_str(": ");
                }
                msg.push_str(&cause);
            }
        }
        eprintln!("error: {msg}");
        std::process::exit(1);
    }
}
