#include "gaaf/cli.hpp"

int main(int argc, char** argv) { return gaaf::cli::run(argc, argv); }
