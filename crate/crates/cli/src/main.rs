use clap::Parser;

fn main() {
    let cli = comptr_cli::Cli::parse();
    let name = cli.command.name();
    if let Err(e) = comptr_cli::run(cli) {
        eprintln!("{}", comptr_cli::error_line(name, &e));
        std::process::exit(1);
    }
}
