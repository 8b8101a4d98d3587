fn main() {
    std::process::exit(au3d::cli::main_with(std::env::args_os()));
}
