#include <iostream>

#include "nrdf_cli/commands.hpp"

int main(int argc, char** argv) { return nrdf::cli::run(argc, argv, std::cout, std::cerr); }
