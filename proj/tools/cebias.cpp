#include "cebias/cli.hpp"

int main(int argc, char** argv) { return cebias::cli::run(argc, argv); }
