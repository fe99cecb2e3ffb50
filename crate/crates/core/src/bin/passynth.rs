fn main() {
    std::process::exit(passivity_synth::cli::run(std::env::args_os()));
}
