//! Directive-driven stand-in for the sandbox runner, speaking the same wire
//! protocol. Used for offline end-to-end runs and tests.

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    std::process::exit(mend_core::stub_runner::main_with_args(&args));
}
