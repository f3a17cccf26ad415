fn main() {
    std::process::exit(wavefis::run(std::env::args_os()));
}
