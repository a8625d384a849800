use clap::Parser;
use skillgraph_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let stdin = std::io::stdin().lock();
    let code = run(cli, stdin, std::io::stdout().lock(), std::io::stderr().lock());
    std::process::exit(code);
}
