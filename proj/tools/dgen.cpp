#include "dgen/cli.hpp"

int main(int argc, char** argv) { return dgen::cli::dispatch(argc, argv); }
