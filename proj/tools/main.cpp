#include "cli.hpp"

int main(int argc, char** argv) { return h2m::cli::main(argc, argv); }
