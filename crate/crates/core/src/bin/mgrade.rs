fn main() {
    mgrade::cli::main()
}
