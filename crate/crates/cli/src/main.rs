fn main() {
    std::process::exit(voicemorph_cli::main_with_args(std::env::args_os()));
}
