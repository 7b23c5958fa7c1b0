fn main() {
    sosinv::init_thread_pool();
    std::process::exit(sosinv::cli::run());
}
