#include "cig/cli.hpp"

int main(int argc, char** argv) { return cig::cli::run(argc, argv); }
