fn main() {
    std::process::exit(pheno_cli::run(std::env::args_os()));
}
