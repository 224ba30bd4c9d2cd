fn main() {
    // Placeholder until the command-line module lands.
}
