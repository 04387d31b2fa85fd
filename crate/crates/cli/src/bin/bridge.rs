use clap::Parser;

#[tokio::main]
async fn main() {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let cli = bridge_cli::Cli::parse();
    let code = bridge_cli::run(cli).await;
    std::process::exit(code);
}
