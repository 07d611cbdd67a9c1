fn main() {
    let out = micromacro::cli::output_dir();
    std::process::exit(micromacro::cli::run_cli(std::env::args_os(), &out));
}
