fn main() {
    riskconv::cli::main();
}
