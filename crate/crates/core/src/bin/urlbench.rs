fn main() {
    std::process::exit(urlbench::commands::main());
}
