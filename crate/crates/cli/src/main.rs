use clap::Parser;

fn main() {
    let cli = modrec::Cli::parse();
    std::process::exit(modrec::run(cli));
}
