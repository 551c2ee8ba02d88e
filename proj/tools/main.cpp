#include "cli.hpp"

int main(int argc, char** argv) { return gfp::cli::run(argc, argv); }
